"""HTTP backend for interactive curation sessions.

Exposes search, session management, batch dispatch, label submission and
image bytes — the surface the swipe UI and the interactive CLI drive.  Each
session wraps one CurationLoop; mutations are serialized per session, and
retraining after a completed batch runs in a worker thread while
``GET /batch`` answers 204.  Labels are appended to an on-disk log as they
arrive and a snapshot is written after every completed batch, so a restarted
service resumes sessions without re-requesting anything already labeled.
"""
from __future__ import annotations

import json
import logging
import secrets
import threading
from pathlib import Path
from typing import Callable, Optional, Union

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles

from .index import FacetFilter, IndexError_, VectorIndex, query
from .learner import CurationLoop, LearnerError, LoopConfig
from .store import EmbeddingSet, Label, LabelStore, now_ms

log = logging.getLogger(__name__)

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".ppm": "image/x-portable-pixmap",
    ".pbm": "image/x-portable-bitmap",
}


class SessionRuntime:
    """One curation session: machine + tokens + its persistence paths."""

    def __init__(
        self,
        session_id: str,
        share_token: str,
        loop: CurationLoop,
        sessions_dir: Optional[Path],
    ):
        self.session_id = session_id
        self.share_token = share_token
        self.loop = loop
        self.lock = threading.RLock()
        self.training = False
        self.sessions_dir = sessions_dir
        self.status_cache: dict = {}
        self.refresh_status_cache()

    def refresh_status_cache(self) -> None:
        """Snapshot served while a worker holds the lock retraining."""
        loop = self.loop
        self.status_cache = {
            "phase": loop.phase,
            "iteration": loop.iteration,
            "labels_used": loop.labels_used,
            "budget": loop.request_budget,
            "history": [
                {
                    "iteration": h.iteration,
                    "labels_used": h.labels_used,
                    "f1_val": h.f1_val,
                    "positives_found": h.positives_found,
                }
                for h in loop.history
            ],
            "curated_count": len(loop.curated) if loop.curated is not None else 0,
        }

    def snapshot_path(self) -> Optional[Path]:
        if self.sessions_dir is None:
            return None
        return self.sessions_dir / f"{self.session_id}.json"

    def labels_path(self) -> Optional[Path]:
        if self.sessions_dir is None:
            return None
        return self.sessions_dir / f"{self.session_id}.labels.tsv"

    def persist_snapshot(self) -> None:
        path = self.snapshot_path()
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "session_id": self.session_id,
            "share_token": self.share_token,
            "starters": self.loop.starters,
            "config": self.loop.cfg.to_dict(),
        }
        path.write_text(json.dumps(payload, indent=2))

    def persist_labels(self) -> None:
        path = self.labels_path()
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        self.loop.label_store.save(path)


class SessionManager:
    def __init__(
        self,
        embeddings: EmbeddingSet,
        index: VectorIndex,
        base_cfg: LoopConfig,
        sessions_dir: Optional[Path],
        clock: Callable[[], int] = now_ms,
    ):
        self.embeddings = embeddings
        self.index = index
        self.base_cfg = base_cfg
        self.sessions_dir = sessions_dir
        self.clock = clock
        self.sessions: dict[str, SessionRuntime] = {}
        self._lock = threading.Lock()
        if sessions_dir is not None:
            self._restore()

    def _restore(self) -> None:
        for snap in sorted(self.sessions_dir.glob("*.json")):
            try:
                payload = json.loads(snap.read_text())
                cfg = LoopConfig.from_dict(payload["config"])
                labels_path = self.sessions_dir / f"{payload['session_id']}.labels.tsv"
                records = (
                    list(LabelStore.load(labels_path)) if labels_path.exists() else []
                )
                loop = CurationLoop.replay(
                    self.embeddings, self.index, payload["starters"], cfg, records,
                    clock=self.clock,
                )
                loop.defer_advance = True
                runtime = SessionRuntime(
                    payload["session_id"], payload["share_token"], loop, self.sessions_dir
                )
                self.sessions[runtime.session_id] = runtime
            except Exception:
                log.exception("could not restore session from %s", snap)

    def create(self, starter_id: str, overrides: Optional[dict]) -> SessionRuntime:
        cfg_data = self.base_cfg.to_dict()
        overrides = overrides or {}
        train_over = overrides.pop("train", None)
        cfg_data.update(overrides)
        if train_over:
            cfg_data["train"] = {**cfg_data["train"], **train_over}
        cfg = LoopConfig.from_dict(cfg_data)
        loop = CurationLoop(
            self.embeddings, self.index, starter_id, cfg,
            clock=self.clock, defer_advance=True,
        )
        runtime = SessionRuntime(
            session_id=secrets.token_hex(16),
            share_token=secrets.token_hex(16),
            loop=loop,
            sessions_dir=self.sessions_dir,
        )
        with self._lock:
            self.sessions[runtime.session_id] = runtime
        runtime.persist_snapshot()
        runtime.persist_labels()
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        runtime = self.sessions.get(session_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return runtime


def create_app(
    embeddings: EmbeddingSet,
    index: VectorIndex,
    images_root: Optional[Union[str, Path]] = None,
    sessions_dir: Optional[Union[str, Path]] = None,
    base_cfg: Optional[LoopConfig] = None,
    frontend_dist: Optional[Union[str, Path]] = None,
    clock: Callable[[], int] = now_ms,
    synchronous_training: bool = False,
) -> FastAPI:
    """Build the service around a loaded embedding set and index.

    ``synchronous_training`` makes batch completion retrain inline instead of
    in a worker thread (handy for deterministic scripting and tests).
    """
    app = FastAPI(title="curare curation service")
    manager = SessionManager(
        embeddings,
        index,
        base_cfg or LoopConfig(),
        Path(sessions_dir) if sessions_dir else None,
        clock=clock,
    )
    app.state.manager = manager
    images_root = Path(images_root).resolve() if images_root else None

    def authorized(runtime: SessionRuntime, request: Request) -> None:
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip() if header else ""
        if token not in (runtime.session_id, runtime.share_token):
            raise HTTPException(status_code=401, detail="missing or invalid token")

    def _advance(runtime: SessionRuntime) -> None:
        with runtime.lock:
            try:
                runtime.loop.advance_pending()
                runtime.persist_snapshot()
                runtime.persist_labels()
                runtime.refresh_status_cache()
            finally:
                runtime.training = False

    @app.post("/sessions", status_code=201)
    def create_session(body: dict) -> dict:
        starter = body.get("starter_id")
        if not isinstance(starter, str):
            raise HTTPException(status_code=400, detail="starter_id required")
        try:
            embeddings.row_of(starter)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown starter {starter!r}")
        try:
            runtime = manager.create(starter, body.get("config"))
        except (LearnerError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid config: {exc}")
        return {"session_id": runtime.session_id, "share_token": runtime.share_token}

    @app.get("/sessions/{session_id}/batch")
    def get_batch(session_id: str, request: Request):
        runtime = manager.get(session_id)
        authorized(runtime, request)
        if runtime.training:  # no lock: a retrain worker may hold it for a while
            return Response(status_code=204)
        with runtime.lock:
            if runtime.training or runtime.loop.needs_advance:
                return Response(status_code=204)
            batch = runtime.loop.current_batch
            if batch is None or runtime.loop.phase == "done":
                return Response(status_code=204)
            metas = embeddings.meta
            items = [
                {"item_id": i, "uri": metas[embeddings.row_of(i)].uri}
                for i in batch.items
            ]
            return {
                "batch_id": batch.batch_id,
                "items": items,
                "issued_at": batch.issued_at,
                "iteration": batch.iteration,
            }

    @app.post("/sessions/{session_id}/labels")
    def post_labels(session_id: str, body: dict, request: Request) -> dict:
        runtime = manager.get(session_id)
        authorized(runtime, request)
        batch_id = body.get("batch_id")
        raw = body.get("labels", [])
        labels: dict[str, Label] = {}
        for rec in raw:  # duplicate item_id in one request: last wins
            try:
                labels[rec["item_id"]] = Label(rec["label"])
            except (KeyError, TypeError, ValueError):
                raise HTTPException(status_code=400, detail=f"malformed label record {rec!r}")
        with runtime.lock:
            loop = runtime.loop
            completed = loop.completed_batch(batch_id) if batch_id else None
            if completed is not None:
                if set(labels) <= set(completed):
                    return _progress(runtime, accepted=0)  # idempotent replay
                raise HTTPException(status_code=409, detail="batch already completed")
            current = loop.current_batch
            if runtime.training or loop.needs_advance:
                # batch fully submitted, retraining pending or underway
                if (
                    current is not None
                    and batch_id == current.batch_id
                    and set(labels) <= set(current.items)
                ):
                    return _progress(runtime, accepted=0)
                raise HTTPException(status_code=409, detail="stale or unknown batch_id")
            if current is None or batch_id != current.batch_id:
                raise HTTPException(status_code=409, detail="stale or unknown batch_id")
            try:
                accepted = loop.submit(labels)
            except LearnerError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            runtime.persist_labels()
            runtime.refresh_status_cache()
            response = _progress(runtime, accepted=accepted)
            if loop.needs_advance:
                runtime.training = True
                if synchronous_training:
                    _advance(runtime)
                else:
                    threading.Thread(target=_advance, args=(runtime,), daemon=True).start()
        return response

    def _progress(runtime: SessionRuntime, accepted: int) -> dict:
        loop = runtime.loop
        return {
            "accepted": accepted,
            "progress": {
                "phase": loop.phase,
                "labels_used": loop.labels_used,
                "budget": loop.request_budget,
            },
        }

    @app.get("/sessions/{session_id}/status")
    def get_status(session_id: str) -> dict:
        runtime = manager.get(session_id)
        if runtime.training:  # serve the cached snapshot instead of blocking
            return {**runtime.status_cache, "training": True}
        with runtime.lock:
            runtime.refresh_status_cache()
            return {
                **runtime.status_cache,
                "training": runtime.training or runtime.loop.needs_advance,
            }

    @app.get("/search")
    def search(
        item_id: str,
        k: int = 10,
        product: Optional[str] = None,
        date_from: Optional[str] = None,
        date_to: Optional[str] = None,
    ):
        try:
            row = embeddings.row_of(item_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")
        facet = None
        if product or date_from or date_to:
            facet = FacetFilter(product=product, date_from=date_from, date_to=date_to)
        try:
            hits = query(index, embeddings.vectors[row], k=k, facet_filter=facet)
        except IndexError_ as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        metas = embeddings.meta
        return [
            {"item_id": h.item_id, "distance": h.distance, "uri": metas[h.row_id].uri}
            for h in hits
        ]

    @app.get("/images/{item_id}")
    def get_image(item_id: str):
        if images_root is None:
            raise HTTPException(status_code=404, detail="no image root configured")
        try:
            row = embeddings.row_of(item_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")
        uri = embeddings.meta[row].uri
        candidate = (images_root / uri).resolve()
        if not candidate.is_relative_to(images_root):
            raise HTTPException(status_code=403, detail="path escapes the image root")
        if not candidate.is_file():
            raise HTTPException(status_code=404, detail=f"no image at {uri!r}")
        media = _MEDIA_TYPES.get(candidate.suffix.lower(), "application/octet-stream")
        return FileResponse(candidate, media_type=media)

    if frontend_dist is not None and Path(frontend_dist).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dist), html=True), name="ui")

    return app


__all__ = ["SessionManager", "SessionRuntime", "create_app"]
