"""Embedding file format: round trips, validation, header corruption."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curare.store import (
    EmbeddingSet,
    ItemMeta,
    Label,
    LabelRecord,
    LabelSource,
    LabelStore,
    StoreError,
    load_embeddings,
    make_meta,
    meta_sidecar_path,
    write_embeddings,
)

from conftest import random_set


class TestSetInvariants:
    def test_rejects_nan(self):
        vectors = np.zeros((2, 3), dtype=np.float32)
        vectors[1, 1] = np.nan
        with pytest.raises(StoreError, match="NaN"):
            EmbeddingSet(vectors, make_meta(["a", "b"]))

    def test_rejects_infinity(self):
        vectors = np.zeros((2, 3), dtype=np.float32)
        vectors[0, 2] = np.inf
        with pytest.raises(StoreError):
            EmbeddingSet(vectors, make_meta(["a", "b"]))

    def test_rejects_duplicate_item_id(self):
        with pytest.raises(StoreError, match="duplicate"):
            EmbeddingSet(np.zeros((2, 3), dtype=np.float32), make_meta(["a", "a"]))

    def test_rejects_misaligned_row_id(self):
        meta = [ItemMeta(row_id=0, item_id="a", uri=""),
                ItemMeta(row_id=2, item_id="b", uri="")]
        with pytest.raises(StoreError, match="row_id"):
            EmbeddingSet(np.zeros((2, 3), dtype=np.float32), meta)

    def test_rejects_tab_in_field(self):
        meta = [ItemMeta(row_id=0, item_id="a\tb", uri="")]
        with pytest.raises(StoreError, match="tab"):
            EmbeddingSet(np.zeros((1, 3), dtype=np.float32), meta)

    def test_rejects_bad_date(self):
        meta = [ItemMeta(row_id=0, item_id="a", uri="", date="2021-02-30")]
        with pytest.raises(StoreError):
            EmbeddingSet(np.zeros((1, 3), dtype=np.float32), meta)
        meta = [ItemMeta(row_id=0, item_id="a", uri="", date="20210230")]
        with pytest.raises(StoreError):
            EmbeddingSet(np.zeros((1, 3), dtype=np.float32), meta)


class TestWriteFormat:
    def test_empty_set_is_header_only(self, tmp_path):
        path = tmp_path / "empty.cur"
        n = write_embeddings(EmbeddingSet(np.zeros((0, 8), np.float32), []), path)
        assert n == 12
        assert path.stat().st_size == 12
        assert meta_sidecar_path(path).read_text() == ""

    def test_two_by_three_is_36_bytes(self, tmp_path):
        path = tmp_path / "t.cur"
        es = EmbeddingSet(np.arange(6, dtype=np.float32).reshape(2, 3), make_meta(["a", "b"]))
        assert write_embeddings(es, path) == 36
        assert path.stat().st_size == 36

    def test_layout(self, tmp_path):
        path = tmp_path / "t.cur"
        es = EmbeddingSet(np.array([[1.5, -2.0]], np.float32), make_meta(["x"]))
        write_embeddings(es, path)
        raw = path.read_bytes()
        assert raw[:4] == b"CUR1"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 2
        assert np.frombuffer(raw[12:], dtype="<f4").tolist() == [1.5, -2.0]


class TestLoadValidation:
    def _write_valid(self, tmp_path):
        path = tmp_path / "v.cur"
        es = random_set(5, 4, seed=1)
        write_embeddings(es, path)
        return path

    def test_bad_magic(self, tmp_path):
        path = self._write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(StoreError, match="magic"):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        path = self._write_valid(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-1])  # 79 payload bytes where 80 required
        with pytest.raises(StoreError, match="payload"):
            load_embeddings(path)

    def test_sidecar_count_mismatch(self, tmp_path):
        path = self._write_valid(tmp_path)
        sidecar = meta_sidecar_path(path)
        lines = sidecar.read_text().splitlines()
        sidecar.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(StoreError, match="sidecar"):
            load_embeddings(path)

    def test_duplicate_item_id_in_sidecar(self, tmp_path):
        path = self._write_valid(tmp_path)
        sidecar = meta_sidecar_path(path)
        lines = sidecar.read_text().splitlines()
        lines[1] = lines[0]
        sidecar.write_text("\n".join(lines) + "\n")
        with pytest.raises(StoreError, match="duplicate"):
            load_embeddings(path)

    def test_nan_payload_rejected(self, tmp_path):
        path = self._write_valid(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[12:16] = np.array([np.nan], "<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(StoreError, match="NaN"):
            load_embeddings(path)

    def test_large_random_round_trip(self, tmp_path):
        path = tmp_path / "big.cur"
        es = random_set(1000, 64, seed=3)
        write_embeddings(es, path)
        loaded = load_embeddings(path)
        assert loaded.count == 1000 and loaded.dim == 64

    def test_header_fuzz_every_single_byte_corruption_rejected(self, tmp_path):
        path = self._write_valid(tmp_path)
        original = path.read_bytes()
        for pos in range(12):
            for value in range(256):
                if value == original[pos]:
                    continue
                raw = bytearray(original)
                raw[pos] = value
                path.write_bytes(bytes(raw))
                with pytest.raises(StoreError):
                    load_embeddings(path)
        path.write_bytes(original)
        load_embeddings(path)  # untouched header still loads


meta_text = st.text(
    alphabet=st.characters(blacklist_characters="\t\n\r", min_codepoint=32, max_codepoint=126),
    min_size=1,
    max_size=12,
)


@settings(max_examples=40, deadline=None)
@given(
    count=st.integers(min_value=0, max_value=12),
    dim=st.integers(min_value=1, max_value=9),
    seed=st.integers(min_value=0, max_value=2**31),
    data=st.data(),
)
def test_round_trip_is_identity(tmp_path_factory, count, dim, seed, data):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(scale=10.0, size=(count, dim)).astype(np.float32)
    ids = [f"id-{i}-{data.draw(meta_text)}" for i in range(count)]
    products = [data.draw(st.one_of(st.none(), meta_text)) for _ in range(count)]
    dates = [
        data.draw(st.one_of(st.none(), st.just("2021-06-01"), st.just("1999-12-31")))
        for _ in range(count)
    ]
    resolutions = [data.draw(st.one_of(st.none(), st.integers(0, 9))) for _ in range(count)]
    true_labels = [data.draw(st.one_of(st.none(), st.integers(0, 44))) for _ in range(count)]
    es = EmbeddingSet(
        vectors,
        make_meta(ids, dates=dates, resolutions=resolutions, products=products,
                  true_labels=true_labels),
    )
    path = tmp_path_factory.mktemp("rt") / "set.cur"
    write_embeddings(es, path)
    loaded = load_embeddings(path)
    assert loaded.count == es.count and loaded.dim == es.dim
    assert np.array_equal(loaded.vectors, es.vectors)  # bit-identical
    assert loaded.meta == es.meta


class TestLabelStore:
    def test_last_write_wins_and_log_retains_history(self):
        store = LabelStore()
        store.append(LabelRecord("a", Label.RELEVANT, LabelSource.SEED, 0, 1))
        store.append(LabelRecord("a", Label.NOT_RELEVANT, LabelSource.HUMAN, 2, 5))
        assert len(store) == 2
        assert store.effective_label("a") == Label.NOT_RELEVANT

    def test_round_trip(self, tmp_path):
        store = LabelStore()
        store.append(LabelRecord("a", Label.RELEVANT, LabelSource.SEED, 0, 17))
        store.append(LabelRecord("b", Label.NOT_RELEVANT, LabelSource.WEAK, 3, 99))
        path = tmp_path / "labels.tsv"
        store.save(path)
        loaded = LabelStore.load(path)
        assert loaded.records == store.records
