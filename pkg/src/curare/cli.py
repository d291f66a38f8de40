"""Command-line interface.

Every pipeline stage is a subcommand: ingest/validate embedding files, build
and query indexes, pick coresets, train the classifier head, run curation
loops (oracle-driven or interactive through the HTTP service), benchmark the
protocol on synthetic sets, preprocess rasters, download imagery tiles, and
serve the labeling backend.  Report paths write figures next to their
delimited outputs.
"""
from __future__ import annotations

from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from . import gibs as gibs_mod
from . import raster as raster_mod
from .coreset import CoresetConfig, greedy_fps, stratified_fps
from .index import FacetFilter, build_index, load_index, query, save_index
from .learner import CurationLoop, LoopConfig, drive_loop, oracle_labeler
from .linear import TrainConfig, save_model, train
from .store import Label, LabelStore, load_embeddings
from .report import plot_benchmark, plot_history, write_benchmark_tsv


@click.group()
def main() -> None:
    """curare: embedding-space dataset curation."""


@main.command()
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--meta", "meta_path", type=click.Path(exists=True), default=None,
              help="Sidecar path; defaults to <vectors>.meta.tsv")
def ingest(vectors_path: str, meta_path: str | None) -> None:
    """Validate an embedding file + sidecar and report its shape."""
    embeddings = load_embeddings(vectors_path, meta_path)
    click.echo(f"ok: count={embeddings.count} dim={embeddings.dim}")


@main.group()
def index() -> None:
    """Build and inspect nearest-neighbor indexes."""


@index.command("build")
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["exact", "partitioned"]), default="exact")
@click.option("--metric", type=click.Choice(["cosine", "euclidean"]), default="cosine")
@click.option("--partitions", "partitions_per_cell", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--nprobe", type=int, default=4)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Index file; defaults to <vectors>.curi")
def index_build(vectors_path, mode, metric, partitions_per_cell, seed, nprobe, out_path):
    """Index an embedding file and persist the partition table."""
    embeddings = load_embeddings(vectors_path)
    idx = build_index(embeddings, metric=metric, mode=mode,
                      partitions_per_cell=partitions_per_cell, seed=seed, nprobe=nprobe)
    out_path = out_path or vectors_path + ".curi"
    save_index(idx, out_path, vectors_path)
    click.echo(f"indexed {embeddings.count} rows into {len(idx.partitions)} partitions -> {out_path}")


@main.command()
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--vectors", "vectors_path", type=click.Path(exists=True), default=None)
@click.option("--id", "item_id", required=True)
@click.option("--k", type=int, default=64)
@click.option("--product", default=None)
@click.option("--date-from", default=None)
@click.option("--date-to", default=None)
@click.option("--nprobe", type=int, default=None)
def search(index_path, vectors_path, item_id, k, product, date_from, date_to, nprobe):
    """Top-k similar items for a stored item, with optional facet filters."""
    if index_path:
        idx = load_index(index_path)
    elif vectors_path:
        idx = build_index(load_embeddings(vectors_path), mode="exact")
    else:
        raise click.UsageError("provide --index or --vectors")
    embeddings = idx.embeddings
    try:
        row = embeddings.row_of(item_id)
    except KeyError:
        raise click.ClickException(f"unknown item {item_id!r}")
    facet = None
    if product or date_from or date_to:
        facet = FacetFilter(product=product, date_from=date_from, date_to=date_to)
    hits = query(idx, embeddings.vectors[row], k=k, facet_filter=facet, nprobe=nprobe)
    for h in hits:
        click.echo(f"{h.item_id}\t{h.distance:.6f}")


@main.command()
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--size", "subset_size", required=True, type=int)
@click.option("--start-row", type=int, default=0)
@click.option("--stratified", is_flag=True, default=False)
@click.option("--sample-size", type=int, default=1024)
@click.option("--resample-every", type=int, default=8)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
def coreset(vectors_path, subset_size, start_row, stratified, sample_size, resample_every, seed, out_path):
    """Select a diverse subset by farthest-point sampling (one row id per line)."""
    embeddings = load_embeddings(vectors_path)
    cfg = CoresetConfig(subset_size=subset_size, start_row=start_row,
                        random_sample_size=sample_size, resample_period=resample_every,
                        seed=seed)
    result = stratified_fps(embeddings, cfg) if stratified else greedy_fps(embeddings, cfg)
    Path(out_path).write_text("\n".join(str(r) for r in result.rows) + "\n")
    click.echo(f"selected {len(result.rows)} rows "
               f"({result.distance_evaluations} distance evaluations) -> {out_path}")


@main.command("train")
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True),
              help="Label log TSV: item_id, label, source, iteration, timestamp")
@click.option("--lr", type=float, default=0.1)
@click.option("--epochs", type=int, default=200)
@click.option("--batch-size", type=int, default=128)
@click.option("--l2", type=float, default=1e-4)
@click.option("--seed", type=int, default=0)
@click.option("--class-weighting", type=click.Choice(["none", "balanced"]), default="balanced")
@click.option("--out", "out_path", type=click.Path(), default="model.curm")
def train_cmd(vectors_path, labels_path, lr, epochs, batch_size, l2, seed, class_weighting, out_path):
    """Train the linear head from an embedding file and a label log."""
    embeddings = load_embeddings(vectors_path)
    store = LabelStore.load(labels_path)
    rows, ys = [], []
    for item, rec in sorted(store.effective().items(), key=lambda kv: embeddings.row_of(kv[0])):
        rows.append(embeddings.row_of(item))
        ys.append(1 if rec.label == Label.RELEVANT else 0)
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch_size,
                      l2=l2, seed=seed, class_weighting=class_weighting)
    model = train(embeddings.vectors[np.array(rows)], np.array(ys), cfg)
    save_model(model, out_path)
    click.echo(f"trained on {len(rows)} labels, final loss {model.loss_history[-1]:.6f} -> {out_path}")


@main.command("loop")
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--starter", required=True)
@click.option("--strategy", type=click.Choice(["least_confidence", "margin", "entropy", "random"]),
              default="least_confidence")
@click.option("--diversity", type=click.Choice(["none", "proximity", "gaussian", "cluster"]),
              default="none")
@click.option("--budget", type=float, default=0.05)
@click.option("--batch", "batch_size", type=int, default=64)
@click.option("--seed-nn", type=int, default=64)
@click.option("--seed-random", type=int, default=32)
@click.option("--seed", type=int, default=0)
@click.option("--oracle", type=click.Choice(["meta"]), default=None,
              help="Answer label requests from metadata true_label")
@click.option("--interactive", is_flag=True, default=False,
              help="Serve the session over HTTP for the browser labeler")
@click.option("--port", type=int, default=8080)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="History TSV; stdout when omitted")
@click.option("--plot", "plot_path", type=click.Path(), default=None,
              help="Render the run history to this PNG")
@click.option("--state-dir", type=click.Path(), default=None)
def loop_cmd(vectors_path, starter, strategy, diversity, budget, batch_size, seed_nn,
             seed_random, seed, oracle, interactive, port, out_path, plot_path, state_dir):
    """Run one curation loop; emits per-iteration history records."""
    embeddings = load_embeddings(vectors_path)
    idx = build_index(embeddings, metric="cosine", mode="exact")
    cfg = LoopConfig(seed_nn=seed_nn, seed_random=seed_random, batch_size=batch_size,
                     label_budget_fraction=budget, uncertainty=strategy,
                     diversity=diversity, seed=seed)
    if interactive:
        _serve_interactive(embeddings, idx, starter, cfg, port)
        return
    if oracle != "meta":
        raise click.UsageError("non-interactive runs need --oracle meta")
    srow = embeddings.row_of(starter)
    positive_class = embeddings.meta[srow].true_label
    if positive_class is None:
        raise click.ClickException("--oracle meta needs true_label on the starter")
    loop = CurationLoop(embeddings, idx, starter, cfg)
    _, curated, history = drive_loop(loop, oracle_labeler(embeddings, positive_class),
                                     state_dir=state_dir)
    lines = [h.as_line() for h in history]
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n")
    else:
        for line in lines:
            click.echo(line)
    if plot_path:
        plot_history(history, plot_path, title=f"starter {starter} ({strategy})")
        click.echo(f"history figure -> {plot_path}")
    click.echo(
        f"done: {len(curated)} curated items, labels used "
        f"{loop.seed_labels}+{loop.loop_labels}+{loop.verify_labels} (seed+loop+verify)",
        err=True,
    )


def _serve_interactive(embeddings, idx, starter, cfg, port) -> None:
    import uvicorn

    from .service import create_app

    app = create_app(embeddings, idx, base_cfg=cfg)
    runtime = app.state.manager.create(starter, None)
    click.echo(f"session ready: http://127.0.0.1:{port}/#/label/"
               f"{runtime.session_id}/{runtime.share_token}")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


@main.command("bench")
@click.option("--synthetic", "synthetic_spec", required=True,
              help="e.g. classes=10,per_class=200,dim=64,spread=1.0,separation=4.0")
@click.option("--starters", "starters_per_class", type=int, default=10)
@click.option("--seeds", type=int, default=5, help="Number of master seeds")
@click.option("--strategy", "strategies", multiple=True,
              type=click.Choice(["least_confidence", "margin", "entropy", "random"]))
@click.option("--budget", type=float, default=0.05)
@click.option("--batch", "batch_size", type=int, default=64)
@click.option("--seed-nn", type=int, default=64)
@click.option("--seed-random", type=int, default=32)
@click.option("--out", "out_path", required=True, type=click.Path())
def bench_cmd(synthetic_spec, starters_per_class, seeds, strategies, budget, batch_size,
              seed_nn, seed_random, out_path):
    """Protocol benchmark on a synthetic labeled set; writes a metrics table
    plus companion figures."""
    params: dict[str, float] = {}
    for part in synthetic_spec.split(","):
        key, _, value = part.partition("=")
        params[key.strip()] = float(value)
    spec = bench_mod.SyntheticSpec(
        classes=int(params.get("classes", 10)),
        per_class=int(params.get("per_class", 200)),
        dim=int(params.get("dim", 64)),
        cluster_spread=params.get("spread", 1.0),
        separation=params.get("separation", 4.0),
        seed=int(params.get("seed", 0)),
    )
    strategies = list(strategies) or ["least_confidence", "random"]
    results: dict[str, bench_mod.BenchResult] = {}
    for strategy in strategies:
        per_seed = []
        for master_seed in range(seeds):
            embeddings = bench_mod.make_synthetic(spec)
            cfg = LoopConfig(uncertainty=strategy, label_budget_fraction=budget,
                             batch_size=batch_size, seed_nn=seed_nn,
                             seed_random=seed_random, seed=master_seed)
            per_seed.append(bench_mod.run_benchmark(embeddings, starters_per_class, cfg))
        results[strategy] = bench_mod.merge_results(per_seed)
        click.echo(f"{strategy}: positives_retrieved={results[strategy].mean.positives_retrieved:.3f} "
                   f"f1={results[strategy].mean.f1_val:.3f}")
    write_benchmark_tsv(results, out_path)
    fig_path = Path(out_path).with_suffix(".png")
    plot_benchmark(results, fig_path)
    click.echo(f"table -> {out_path}\nfigure -> {fig_path}")


@main.group()
def prep() -> None:
    """Raster preprocessing: swath filling, cloud compositing, tiling."""


@prep.command("fill")
@click.option("--strategy", type=click.Choice(list(raster_mod.FILL_STRATEGIES)),
              default="neighbor_rgb")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--min-area", type=int, default=raster_mod.DEFAULT_MIN_GAP_AREA)
@click.option("--seed", type=int, default=0)
def prep_fill(strategy, in_path, out_path, min_area, seed):
    """Detect swath gaps and fill them."""
    tile = raster_mod.read_raster(in_path)
    mask = raster_mod.detect_gaps(tile, min_area=min_area)
    filled = raster_mod.fill_swath(tile, mask, strategy, seed=seed)
    raster_mod.write_raster(filled, out_path)
    click.echo(f"filled {mask.count} gap pixels ({strategy}) -> {out_path}")


@prep.command("composite")
@click.option("--in", "in_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mask-out", "mask_out", type=click.Path(), default=None,
              help="Per-input cloud masks, written as <mask-out stem>.<i>.pbm")
@click.option("--tau", type=float, default=raster_mod.DEFAULT_CLOUD_TAU)
def prep_composite(in_paths, out_path, mask_out, tau):
    """Minimum-luminance cloudless composite over co-registered days."""
    stack = [raster_mod.read_raster(p) for p in in_paths]
    composite = raster_mod.cloud_composite(stack)
    raster_mod.write_raster(composite, out_path)
    click.echo(f"composite of {len(stack)} tiles -> {out_path}")
    if mask_out:
        base = Path(mask_out)
        for i, tile in enumerate(stack):
            mask = raster_mod.cloud_mask(tile, composite, tau=tau)
            path = base.with_suffix(f".{i}.pbm")
            raster_mod.write_pbm(mask, path)
            click.echo(f"cloud mask ({mask.count} px) for input {i} -> {path}")


@prep.command("tile")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--patch", required=True, type=int)
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
def prep_tile(in_path, patch, out_dir):
    """Cut an image into a non-overlapping grid of patches."""
    image = raster_mod.read_raster(in_path)
    tiles = raster_mod.tile_grid(image, patch)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(in_path).stem
    for gt in tiles:
        raster_mod.write_ppm(gt.tile, out / f"{stem}_{gt.row}_{gt.col}.ppm")
    click.echo(f"{len(tiles)} tiles of {patch}x{patch} -> {out_dir}")


@main.group()
def gibs() -> None:
    """Satellite imagery tiles: catalog search and bulk download."""


@gibs.command("search")
@click.option("--keywords", required=True, help="Space-separated keywords (AND match)")
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None)
def gibs_search(keywords, catalog_path):
    """Keyword search over the product catalog snapshot."""
    catalog = gibs_mod.ProductCatalog.load(catalog_path)
    matches = gibs_mod.search_products(catalog, keywords.split())
    if not matches:
        click.echo("no products matched")
        return
    for p in matches:
        click.echo(f"{p.product_id}\t{p.title}")


@gibs.command("download")
@click.option("--product", "product_id", required=True)
@click.option("--from", "date_from", required=True)
@click.option("--to", "date_to", required=True)
@click.option("--bbox", required=True, help="lat_min,lat_max,lon_min,lon_max")
@click.option("--zoom", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--endpoint", default=None,
              help=f"URL template; ${gibs_mod.ENDPOINT_ENV_VAR} overrides the default")
@click.option("--concurrency", type=int, default=4)
@click.option("--retries", type=int, default=3)
def gibs_download(product_id, date_from, date_to, bbox, zoom, out_dir, endpoint,
                  concurrency, retries):
    """Fetch all tiles covering a bbox over a date range."""
    parts = [float(x) for x in bbox.split(",")]
    if len(parts) != 4:
        raise click.UsageError("--bbox needs lat_min,lat_max,lon_min,lon_max")
    request = gibs_mod.DownloadRequest(
        product_id=product_id, date_from=date_from, date_to=date_to,
        bbox=(parts[0], parts[1], parts[2], parts[3]), zoom=zoom, out_dir=Path(out_dir),
    )
    manifest = gibs_mod.download(request, endpoint=endpoint,
                                 concurrency=concurrency, retries=retries)
    ok = sum(1 for r in manifest.rows if r.status == "ok")
    skipped = sum(1 for r in manifest.rows if r.status == "skipped")
    failed = sum(1 for r in manifest.rows if r.status == "failed")
    click.echo(f"fetched {ok}, skipped {skipped}, failed {failed} "
               f"-> {Path(out_dir) / product_id / gibs_mod.MANIFEST_NAME}")


@main.command()
@click.option("--port", type=int, default=8080)
@click.option("--host", default="127.0.0.1")
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True))
@click.option("--meta", "meta_path", type=click.Path(exists=True), default=None)
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--images-root", type=click.Path(exists=True), default=None)
@click.option("--sessions-dir", type=click.Path(), default=None)
@click.option("--frontend-dist", type=click.Path(), default=None)
def serve(port, host, vectors_path, meta_path, index_path, images_root,
          sessions_dir, frontend_dist):
    """Run the curation HTTP service (and static labeling UI, when built)."""
    import uvicorn

    from .service import create_app

    embeddings = load_embeddings(vectors_path, meta_path)
    idx = load_index(index_path, embeddings) if index_path else build_index(embeddings)
    app = create_app(embeddings, idx, images_root=images_root,
                     sessions_dir=sessions_dir, frontend_dist=frontend_dist)
    click.echo(f"serving {embeddings.count} items on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
