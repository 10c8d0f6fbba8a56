"""Pipeline configuration: every tunable with its production default, a
stable content digest, and TOML + flag-override loading."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InputError
from .ortho_renderer import RenderConfig


@dataclass(frozen=True)
class PipelineConfig:
    # point sampling
    n_target: int = 10_000_000
    tau_m: float = 2.0
    alpha_min: float = 0.0
    v_min: float = 0.05
    # ground plane
    delta_ransac: float = 0.30
    ransac_iters: int = 1000
    # rasterization
    rho_target: float = 1.5
    res_min: float = 0.0075
    res_max: float = 0.05
    pixel_cap: int = 100_000_000
    h_band: float = 0.18
    dh_bw: float = 0.25
    t_roof: float = 0.125
    n_min_roof: int = 3
    ssaa: int = 2
    # inpainting
    s_small: int = 12
    knn_k: int = 6
    knn_rmax: float = 4.0
    m_crop: float = 0.20
    tau_alpha: float = 0.05
    tau_s: int = 1
    tau_area_frac: float = 0.005
    fallback_inpaint: bool = True
    # features / vocabulary / aggregation
    grid_rows: int = 16
    grid_cols: int = 16
    k_components: int = 256
    n_gmm: int = 500_000
    aggregator: str = "fisher"
    # reproducibility
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.v_min <= 1 or not 0 <= self.alpha_min <= 1:
            raise InputError("pruning thresholds must lie in [0, 1]")
        if self.tau_m <= 0 or self.n_target < 1:
            raise InputError("invalid sampler settings")
        if not 0 < self.m_crop < 0.5:
            raise InputError("m_crop must lie in (0, 0.5)")

    def digest(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(doc).hexdigest()

    def render_config(self) -> RenderConfig:
        return RenderConfig(
            rho_target=self.rho_target,
            res_min=self.res_min,
            res_max=self.res_max,
            pixel_cap=self.pixel_cap,
            h_band=self.h_band,
            dh_bw=self.dh_bw,
            t_roof=self.t_roof,
            n_min_roof=self.n_min_roof,
            ssaa=self.ssaa,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults <- TOML file (optional) <- explicit overrides."""
    values: dict = {}
    if path is not None:
        doc = tomllib.loads(Path(path).read_text())
        table = doc.get("orthosplat", doc)
        for key, val in table.items():
            if key not in _FIELD_NAMES:
                raise InputError(f"unknown config key {key!r}")
            values[key] = val
    cfg = PipelineConfig(**values)
    if overrides:
        clean = {k: v for k, v in overrides.items() if v is not None}
        bad = set(clean) - _FIELD_NAMES
        if bad:
            raise InputError(f"unknown config overrides: {sorted(bad)}")
        cfg = replace(cfg, **clean)
    return cfg
