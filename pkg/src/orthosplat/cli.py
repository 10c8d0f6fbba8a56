"""Command-line front end: render, fit-vocab, encode, eval, sweep and the
external-completion job commands."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import load_config
from .pipeline import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_K_GRID,
    DEFAULT_NGMM_GRID,
    encode_manifest,
    evaluate_stores,
    fit_vocabulary,
    import_jobs,
    list_jobs,
    load_cameras,
    metrics_text,
    render_scene,
    sweep,
    write_metrics,
    write_metrics_csv,
)
from .fisher_agg import load_store, save_store

EXIT_PENDING_JOBS = 3

_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True), default=None,
    help="TOML config file; flags override it.",
)


def _cfg(config_path, **overrides):
    return load_config(config_path, overrides)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    """Gaussian-splat scenes to pseudo-orthophotos and cross-view retrieval."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s")


@main.command()
@click.argument("scene_ply", type=click.Path(exists=True))
@click.option("--cameras", "cameras_path", type=click.Path(exists=True), default=None,
              help="Optional cameras.json for visibility estimation.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_config_option
@click.option("--seed", type=int, default=None)
@click.option("--n-target", type=int, default=None)
@click.option("--no-fallback", "fallback", flag_value=False, default=None,
              help="Export large holes as jobs instead of the built-in fill.")
def render(scene_ply, cameras_path, out_dir, config_path, seed, n_target, fallback):
    """Render one splat scene into orthophoto artifacts."""
    cfg = _cfg(config_path, seed=seed, n_target=n_target, fallback_inpaint=fallback)
    cameras = load_cameras(cameras_path) if cameras_path else None
    result = render_scene(scene_ply, out_dir, cfg, cameras=cameras)
    click.echo(f"rendered {result.scene_id} -> {result.out_dir}")
    if result.pending:
        click.echo("large holes exported as completion jobs; run import-jobs when done")
        sys.exit(EXIT_PENDING_JOBS)


@main.command("fit-vocab")
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, required=True, help="Mandatory for reproducible vocabularies.")
@_config_option
@click.option("--k", "k_components", type=int, default=None)
@click.option("--n-gmm", type=int, default=None)
@click.option("--aggregator", type=str, default=None)
def fit_vocab(manifest, out_path, seed, config_path, k_components, n_gmm, aggregator):
    """Fit the drone-only vocabulary (GMM for fisher, k-means otherwise)."""
    cfg = _cfg(config_path, seed=seed, k_components=k_components, n_gmm=n_gmm, aggregator=aggregator)
    digest = fit_vocabulary(manifest, out_path, cfg)
    click.echo(f"vocabulary {out_path} digest {digest}")


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_config_option
@click.option("--aggregator", type=str, default=None)
def encode(manifest, vocab_path, out_path, config_path, aggregator):
    """Encode a feature manifest into a descriptor store."""
    cfg = _cfg(config_path, aggregator=aggregator)
    store = encode_manifest(manifest, vocab_path, cfg)
    save_store(store, out_path)
    click.echo(f"encoded {len(store)} descriptors ({store.side}) -> {out_path}")


@main.command("eval")
@click.option("--drone", "drone_path", type=click.Path(exists=True), required=True)
@click.option("--satellite", "sat_path", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True,
              help="JSON {drone_id: [satellite ids...]}.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Optional per-query CSV for plotting.")
@_config_option
def eval_cmd(drone_path, sat_path, gt_path, out_path, csv_path, config_path):
    """R@1 / AP in both retrieval directions."""
    cfg = _cfg(config_path)
    gt = json.loads(Path(gt_path).read_text())
    report = evaluate_stores(load_store(drone_path), load_store(sat_path), gt)
    click.echo(metrics_text(report))
    if out_path:
        write_metrics(report, out_path, cfg.digest())
    if csv_path:
        write_metrics_csv(report, csv_path)


@main.command("sweep")
@click.option("--drone-manifest", type=click.Path(exists=True), required=True)
@click.option("--satellite-manifest", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_csv", type=click.Path(), required=True)
@_config_option
@click.option("--seed", type=int, default=None)
@click.option("--k", "k_components", type=int, default=None, help="Default vocabulary size.")
@click.option("--k-grid", default=",".join(map(str, DEFAULT_K_GRID)), show_default=True)
@click.option("--ngmm-grid", default=",".join(map(str, DEFAULT_NGMM_GRID)), show_default=True)
@click.option("--alpha-grid", default=",".join(map(str, DEFAULT_ALPHA_GRID)), show_default=True)
def sweep_cmd(drone_manifest, satellite_manifest, gt_path, out_csv, config_path,
              seed, k_components, k_grid, ngmm_grid, alpha_grid):
    """Ablation grid: aggregators, vocabulary sizes, subsample budgets."""
    cfg = _cfg(config_path, seed=seed, k_components=k_components)
    gt = json.loads(Path(gt_path).read_text())
    rows = sweep(
        drone_manifest,
        satellite_manifest,
        gt,
        out_csv,
        cfg,
        k_grid=tuple(int(x) for x in k_grid.split(",") if x),
        ngmm_grid=tuple(int(x) for x in ngmm_grid.split(",") if x),
        alpha_grid=tuple(int(x) for x in alpha_grid.split(",") if x),
    )
    click.echo(f"wrote {len(rows)} sweep rows -> {out_csv}")


@main.command("export-jobs")
@click.argument("scene_dir", type=click.Path(exists=True))
def export_jobs(scene_dir):
    """List completion jobs a render left behind (pending exit code if any)."""
    jobs = list_jobs(scene_dir)
    if not jobs:
        click.echo("no jobs")
        return
    pending = 0
    for j in jobs:
        state = "completed" if j["completed"] else "pending"
        pending += not j["completed"]
        click.echo(f"{j['job_id']}: {state} ({j['dir']})")
    if pending:
        sys.exit(EXIT_PENDING_JOBS)


@main.command("import-jobs")
@click.argument("scene_dir", type=click.Path(exists=True))
@_config_option
def import_jobs_cmd(scene_dir, config_path):
    """Blend completed.png results back into the orthophoto artifacts."""
    cfg = _cfg(config_path)
    pending = import_jobs(scene_dir, cfg)
    if pending:
        click.echo(f"{pending} job(s) still pending")
        sys.exit(EXIT_PENDING_JOBS)
    click.echo("all jobs imported")


if __name__ == "__main__":
    main()
