"""Stage orchestration: scene rendering to disk artifacts, vocabulary
fitting, descriptor encoding, two-direction evaluation and ablation sweeps.

Every artifact embeds the producing config digest; stage handoff is purely
file-based.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import DigestMismatchError, InputError
from .features import load_feature_file, load_manifest
from .fisher_agg import DescriptorStore, aggregate, build_store, load_store, save_store
from .gaussian_field import CameraPose, estimate_visibility, parse_gaussian_ply, prune
from .ground_plane import estimate_frame, to_local_frame
from .inpaint import center_crop, import_completion, inpaint_orthophoto, write_job, CompletionJob
from .ortho_renderer import render_orthophoto
from .pngio import load_png, load_png_float, save_png
from .point_sampler import SamplerConfig, sample_point_cloud
from .retrieval import Gallery, evaluate, format_report
from .vocabulary import (
    fit_gmm,
    fit_kmeans,
    load_gmm,
    load_kmeans,
    save_gmm,
    save_kmeans,
    subsample_descriptors,
    EmConfig,
)
from .fisher_agg import GlobalDescriptor

log = logging.getLogger(__name__)


def load_cameras(path) -> list[CameraPose]:
    doc = json.loads(Path(path).read_text())
    cams = []
    for c in doc.get("cameras", doc if isinstance(doc, list) else []):
        cams.append(
            CameraPose(
                rotation=np.asarray(c["rotation"], dtype=np.float64),
                translation=np.asarray(c["translation"], dtype=np.float64),
                fx=float(c["fx"]),
                fy=float(c["fy"]),
                cx=float(c["cx"]),
                cy=float(c["cy"]),
                width=int(c["width"]),
                height=int(c["height"]),
            )
        )
    return cams


@dataclass(frozen=True)
class SceneResult:
    scene_id: str
    out_dir: Path
    pending: bool
    ortho_path: Path
    crop_path: Path


def render_scene(
    ply_path,
    out_dir,
    cfg: PipelineConfig = PipelineConfig(),
    cameras: list[CameraPose] | None = None,
    scene_id: str | None = None,
) -> SceneResult:
    """PLY -> pruned field -> point cloud -> plane frame -> orthophoto ->
    inpainted full + center-cropped images, plus masks and metadata."""
    ply_path = Path(ply_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_id = scene_id or ply_path.stem
    digest = cfg.digest()

    field = parse_gaussian_ply(ply_path.read_bytes())
    field = estimate_visibility(field, cameras)
    field = prune(field, cfg.alpha_min, cfg.v_min)
    if len(field) == 0:
        raise InputError("every Gaussian was pruned; nothing to render")

    cloud = sample_point_cloud(field, SamplerConfig(cfg.n_target, cfg.tau_m, cfg.seed))
    frame = estimate_frame(
        cloud, delta=cfg.delta_ransac, iters=cfg.ransac_iters, rng=np.random.default_rng(cfg.seed)
    )
    ortho = render_orthophoto(cloud, frame, cfg.render_config())
    result = inpaint_orthophoto(
        ortho,
        tau_alpha=cfg.tau_alpha,
        tau_s=cfg.tau_s,
        s_small=cfg.s_small,
        tau_a=cfg.tau_area_frac * ortho.rgb.shape[0] * ortho.rgb.shape[1],
        fallback=cfg.fallback_inpaint,
        job_prefix=scene_id,
        provenance={"scene_id": scene_id, "config_digest": digest, "source_digest": field.source_digest},
    )

    full = result.image
    crop = center_crop(full, cfg.m_crop)
    save_png(out / "ortho_full.png", full, digest)
    save_png(out / "ortho.png", crop, digest)
    save_png(out / "coverage.png", ortho.coverage_mask, digest)
    save_png(out / "roof.png", ortho.roof_mask, digest)
    save_png(out / "hole.png", ortho.hole_mask, digest)
    (out / "raster_spec.json").write_text(
        json.dumps(
            {
                "spec": ortho.spec.to_dict(),
                "roof_height": None if not np.isfinite(ortho.roof_height) else ortho.roof_height,
                "scene_id": scene_id,
                "config_digest": digest,
                "source_digest": field.source_digest,
                "pending_jobs": result.pending,
            },
            indent=1,
            sort_keys=True,
        )
    )
    (out / "frame.json").write_text(frame.to_json())
    for job in result.jobs:
        write_job(job, out / "jobs")
    if result.pending:
        np.savez_compressed(
            out / "state.npz", image=full, remaining=result.remaining_holes
        )
    return SceneResult(
        scene_id=scene_id,
        out_dir=out,
        pending=result.pending,
        ortho_path=out / "ortho_full.png",
        crop_path=out / "ortho.png",
    )


def list_jobs(scene_dir) -> list[dict]:
    jobs_dir = Path(scene_dir) / "jobs"
    found = []
    if not jobs_dir.is_dir():
        return found
    for d in sorted(jobs_dir.iterdir()):
        meta_path = d / "meta.json"
        if not meta_path.is_file():
            continue
        meta = json.loads(meta_path.read_text())
        found.append(
            {
                "job_id": meta.get("job_id", d.name),
                "dir": str(d),
                "completed": (d / "completed.png").is_file(),
                "image_ok": (d / "image.png").is_file(),
                "mask_ok": (d / "mask.png").is_file(),
            }
        )
    return found


def import_jobs(scene_dir, cfg: PipelineConfig = PipelineConfig()) -> int:
    """Blend any jobs/<id>/completed.png back in and refresh the final
    images.  Returns the number of jobs still pending."""
    scene_dir = Path(scene_dir)
    state_path = scene_dir / "state.npz"
    if not state_path.is_file():
        raise InputError(f"no pending state in {scene_dir}")
    state = np.load(state_path)
    image = state["image"]
    pending = 0
    for entry in list_jobs(scene_dir):
        d = Path(entry["dir"])
        if not entry["completed"]:
            pending += 1
            continue
        job = CompletionJob(
            image_png=(d / "image.png").read_bytes(),
            mask_png=(d / "mask.png").read_bytes(),
            job_id=entry["job_id"],
            provenance=json.loads((d / "meta.json").read_text()),
        )
        completed = load_png_float(d / "completed.png")
        if completed.ndim == 2:
            completed = np.stack([completed] * 3, axis=2)
        image = import_completion(job, entry["job_id"], completed[:, :, :3], image)
    digest = cfg.digest()
    save_png(scene_dir / "ortho_full.png", image, digest)
    save_png(scene_dir / "ortho.png", center_crop(image, cfg.m_crop), digest)
    np.savez_compressed(state_path, image=image, remaining=state["remaining"])
    return pending


# ---------------------------------------------------------------------------
# vocabulary / encoding / evaluation


def _load_sets(manifest_path):
    extractor, entries = load_manifest(manifest_path)
    sets = []
    for entry in entries:
        fset = load_feature_file(Path(manifest_path).parent / entry["path"])
        if extractor and fset.extractor != extractor:
            raise DigestMismatchError(
                f"feature file {entry['path']} extractor {fset.extractor!r} != manifest {extractor!r}"
            )
        if entry.get("side") and entry["side"] != fset.side:
            raise InputError(f"manifest side {entry['side']!r} disagrees with file for {entry['id']!r}")
        sets.append((entry["id"], fset))
    return extractor, sets


def fit_vocabulary(
    manifest_path,
    out_path,
    cfg: PipelineConfig = PipelineConfig(),
    kind: str | None = None,
) -> str:
    """Drone-only vocabulary from a feature manifest; returns the digest."""
    kind = kind or ("gmm" if cfg.aggregator == "fisher" else "kmeans")
    _, sets = _load_sets(manifest_path)
    rng = np.random.default_rng(cfg.seed)
    per_image_cap = 2 * int(np.ceil(cfg.n_gmm / len(sets)))
    x = subsample_descriptors(
        [s for _, s in sets], n_total=cfg.n_gmm, per_image_cap=per_image_cap, rng=rng
    )
    meta = {
        "seed": cfg.seed,
        "n_gmm": cfg.n_gmm,
        "per_image_cap": per_image_cap,
        "config_digest": cfg.digest(),
    }
    if kind == "gmm":
        model = fit_gmm(x, k=cfg.k_components, em_cfg=EmConfig(seed=cfg.seed))
        return save_gmm(model, out_path, meta)
    model = fit_kmeans(x, k=cfg.k_components, seed=cfg.seed)
    return save_kmeans(model, out_path, meta)


def load_vocabulary(path):
    """(model, digest) regardless of kind, sniffed from the magic."""
    magic = Path(path).open("rb").read(4)
    if magic == b"OGGM":
        return load_gmm(path)
    if magic == b"OGKM":
        return load_kmeans(path)
    raise InputError(f"unknown vocabulary magic {magic!r}")


def encode_manifest(
    manifest_path,
    vocab_path,
    cfg: PipelineConfig = PipelineConfig(),
    aggregator: str | None = None,
) -> DescriptorStore:
    aggregator = aggregator or cfg.aggregator
    vocab, digest = load_vocabulary(vocab_path)
    extractor, sets = _load_sets(manifest_path)
    sides = {s.side for _, s in sets}
    if len(sides) != 1:
        raise InputError(f"manifest mixes sides {sorted(sides)}")
    items = [(sid, aggregate(fset, vocab, aggregator, digest)) for sid, fset in sets]
    return build_store(
        items, side=sides.pop(), extractor=extractor, config_digest=cfg.digest()
    )


def evaluate_stores(drone: DescriptorStore, satellite: DescriptorStore, gt: dict) -> dict:
    """Both retrieval directions; cross-side, so same-id self matches are the
    correct answers and are kept."""
    if (drone.aggregator, drone.vocab_digest) != (satellite.aggregator, satellite.vocab_digest):
        raise DigestMismatchError("drone and satellite stores use different vocabularies")
    gt = {q: set(c) for q, c in gt.items()}
    inv: dict = {}
    for q, correct in gt.items():
        for c in correct:
            inv.setdefault(c, set()).add(q)
    d2s = evaluate(
        [(sid, GlobalDescriptor(drone.matrix[i], drone.aggregator, drone.vocab_digest))
         for i, sid in enumerate(drone.ids)],
        Gallery.from_store(satellite),
        gt,
        exclude_self=False,
    )
    s2d = evaluate(
        [(sid, GlobalDescriptor(satellite.matrix[i], satellite.aggregator, satellite.vocab_digest))
         for i, sid in enumerate(satellite.ids)],
        Gallery.from_store(drone),
        inv,
        exclude_self=False,
    )
    return {"drone_to_satellite": d2s, "satellite_to_drone": s2d}


SWEEP_COLUMNS = ("panel", "setting", "aggregator", "k", "n_gmm", "r1_d2s", "ap_d2s", "r1_s2d", "ap_s2d")

DEFAULT_K_GRID = (16, 32, 64, 128, 256, 512)
DEFAULT_NGMM_GRID = (100_000, 500_000, 1_000_000, 2_000_000)
DEFAULT_ALPHA_GRID = (10, 30, 50, 100, 200)


def sweep(
    drone_manifest,
    satellite_manifest,
    gt: dict,
    out_csv,
    cfg: PipelineConfig = PipelineConfig(),
    k_grid=DEFAULT_K_GRID,
    ngmm_grid=DEFAULT_NGMM_GRID,
    alpha_grid=DEFAULT_ALPHA_GRID,
    workdir=None,
) -> list[dict]:
    """Ablation grid mirroring the three panels: aggregation strategy,
    vocabulary size, and descriptor-subsample budget.  One CSV row per cell."""
    from dataclasses import replace as dc_replace
    import tempfile

    rows = []
    tmp = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="orthosplat-sweep-"))
    tmp.mkdir(parents=True, exist_ok=True)

    cells = [("aggregation", "vlad", "vlad", cfg.k_components, cfg.n_gmm)]
    cells += [
        ("aggregation", f"softvlad({a})", f"softvlad({a})", cfg.k_components, cfg.n_gmm)
        for a in alpha_grid
    ]
    cells.append(("aggregation", f"fisher(K={cfg.k_components})", "fisher", cfg.k_components, cfg.n_gmm))
    cells += [("components", f"K={k}", "fisher", int(k), cfg.n_gmm) for k in k_grid]
    cells += [("subsampling", f"{n}", "fisher", cfg.k_components, int(n)) for n in ngmm_grid]

    for panel, setting, aggregator, k, n_gmm in cells:
        cell_cfg = dc_replace(cfg, aggregator=aggregator, k_components=k, n_gmm=n_gmm)
        vocab_path = tmp / f"vocab-{panel}-{setting}.bin".replace("(", "_").replace(")", "_")
        fit_vocabulary(drone_manifest, vocab_path, cell_cfg)
        drone_store = encode_manifest(drone_manifest, vocab_path, cell_cfg)
        sat_store = encode_manifest(satellite_manifest, vocab_path, cell_cfg)
        report = evaluate_stores(drone_store, sat_store, gt)
        rows.append(
            {
                "panel": panel,
                "setting": setting,
                "aggregator": aggregator,
                "k": k,
                "n_gmm": n_gmm,
                "r1_d2s": report["drone_to_satellite"]["recall_at_1"],
                "ap_d2s": report["drone_to_satellite"]["mean_ap"],
                "r1_s2d": report["satellite_to_drone"]["recall_at_1"],
                "ap_s2d": report["satellite_to_drone"]["mean_ap"],
            }
        )
        log.info("sweep cell %s/%s done", panel, setting)

    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def write_metrics(report: dict, out_json, config_digest: str = "") -> None:
    doc = dict(report)
    doc["config_digest"] = config_digest
    Path(out_json).write_text(json.dumps(doc, indent=1, sort_keys=True))


def write_metrics_csv(report: dict, out_csv) -> None:
    """Per-query rows for plotting."""
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction", "query", "hit_at_1", "ap"])
        for direction, key in (("d2s", "drone_to_satellite"), ("s2d", "satellite_to_drone")):
            for row in report.get(key, {}).get("per_query", []):
                writer.writerow([direction, row["query"], int(row["hit_at_1"]), row["ap"]])


def metrics_text(report: dict) -> str:
    return format_report(report.get("drone_to_satellite"), report.get("satellite_to_drone"))
