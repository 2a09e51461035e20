"""Pipeline configuration: a flat ``key = value`` file plus CLI overrides."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, InvalidSpec
from .evaluation import RegistrationConfig
from .fusion import FusionConfig


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _key(help_text, parse, **kw):
    return field(metadata={"help": help_text, "parse": parse}, **kw)


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = _key("synthetic or real dataset directory", str, default="")
    output: str = _key("output directory", str, default="out")
    voxel_size: float = _key("TSDF voxel edge length (world units)", float, default=1.0)
    sigma_multiplier: float = _key("truncation = sigma_multiplier * depth stddev, before clamping", float, default=3.0)
    tau_min: Optional[float] = _key("lower truncation clamp; 'auto' = 2 voxels", _opt_float, default=None)
    tau_max: Optional[float] = _key("upper truncation clamp; 'auto' = 10 voxels", _opt_float, default=None)
    weight_cap: float = _key("maximum accumulated voxel weight", float, default=100.0)
    sigma_floor: float = _key("smallest stddev used for 1/sigma weights", float, default=1e-3)
    weight_mode: str = _key("per-sample weight: inverse_sigma or uniform", str, default="inverse_sigma")
    scale_mode: str = _key("depth rescaling against landmarks: per_frame, global or none", str, default="per_frame")
    min_weight: float = _key("marching cubes skips cubes with a corner weight below this", float, default=1e-6)
    reg_max_iters: int = _key("Sim3 ICP iteration limit", int, default=100)
    reg_trim_fraction: float = _key("fraction of worst correspondences dropped per ICP iteration", float, default=0.1)
    reg_tol: Optional[float] = _key("ICP stop threshold on residual change; 'auto' = 1e-7 * extent", _opt_float, default=None)
    reg_init: str = _key("ICP initialization: centroid (centroid + RMS radius) or identity", str, default="centroid")
    subsample_keep: int = _key("keep this many frames ...", int, default=10)
    subsample_block: int = _key("... out of every block of this many consecutive frames", int, default=10)
    consistency_runs: int = _key("number of subsampled reconstructions in the consistency protocol", int, default=2)
    eval_samples: int = _key("reference surface samples for the accuracy metric", int, default=10000)
    seed: int = _key("root seed; every random stream is derived from it", int, default=0)
    figures: bool = _key("render PNG figures next to the reports", _bool, default=True)

    def __post_init__(self):
        if not 1 <= self.subsample_keep <= self.subsample_block:
            raise InvalidSpec("need 1 <= subsample_keep <= subsample_block")
        if self.scale_mode not in ("per_frame", "global", "none"):
            raise InvalidSpec(f"unknown scale_mode {self.scale_mode!r}")
        if self.reg_init not in ("centroid", "identity"):
            raise InvalidSpec(f"unknown reg_init {self.reg_init!r}")
        if self.consistency_runs < 2:
            raise InvalidSpec("consistency needs at least 2 runs")

    @property
    def fusion(self) -> FusionConfig:
        try:
            return FusionConfig(
                voxel_size=self.voxel_size,
                sigma_multiplier=self.sigma_multiplier,
                tau_min=self.tau_min,
                tau_max=self.tau_max,
                weight_cap=self.weight_cap,
                sigma_floor=self.sigma_floor,
                weight_mode=self.weight_mode,
            )
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None

    @property
    def registration(self) -> RegistrationConfig:
        return RegistrationConfig(self.reg_max_iters, self.reg_trim_fraction, self.reg_tol)

    def with_overrides(self, values: dict) -> PipelineConfig:
        return replace(self, **parse_values(values))

    def dumps(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            v = "auto" if v is None else (str(v).lower() if isinstance(v, bool) else v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


FIELDS = {f.name: f for f in fields(PipelineConfig)}


def parse_values(values: dict) -> dict:
    out = {}
    for k, v in values.items():
        if k not in FIELDS:
            raise InvalidSpec(f"unknown config key {k!r}")
        try:
            out[k] = FIELDS[k].metadata["parse"](str(v))
        except ValueError as exc:
            raise InvalidSpec(f"bad value for {k}: {exc}") from None
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing config file: {path}")
    values = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return values


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named consumer of the root seed."""
    key = (zlib.crc32(name.encode()),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def substream_seed(seed: int, name: str, *extra: int) -> int:
    return int(substream(seed, name, *extra).integers(0, 2**31 - 1))
