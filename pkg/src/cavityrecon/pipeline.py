"""End-to-end drivers behind the CLI subcommands.

Each ``run_*`` function reads its inputs from disk, writes every artifact into
an output directory and returns the in-memory results so tests can inspect
them without re-parsing.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, plotting
from .bvh import BVH
from .config import PipelineConfig, substream, substream_seed
from .depth import DepthFrame, SparsePointCloud, apply_scale, recover_scale, recover_scale_global
from .errors import AllSectionsFailed, ChannelMismatch, DataError, NoValidDepths, NoVisiblePoints, ReconError
from .evaluation import (
    RegistrationResult,
    SectionSeries,
    centroid_rms_init,
    cross_section_series,
    point_to_mesh,
    register_sim3,
)
from .fusion import integrate_sequence
from .geometry import CameraIntrinsics, RigidPose
from .mesh import TriangleMesh, WatertightReport, check_watertight
from .phantom import DEFAULT_INTRINSICS, PhantomSpec, RenderConfig, generate_phantom, generate_trajectory, render_depth, sample_sparse
from .surface import marching_cubes

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- synth


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 60
    noise: float = 0.01
    points: int = 2000
    scale_jitter: float = 0.2  # per-frame depth scale drawn from exp(U(-j, j))
    seed: int = 0
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS

    def dumps(self) -> str:
        d = asdict(self)
        ph = d.pop("phantom")
        k = d.pop("intrinsics")
        lines = [f"{a} = {b}" for a, b in d.items()]
        lines += [f"phantom.{a} = {b}" for a, b in ph.items()]
        lines += [f"intrinsics.{a} = {b}" for a, b in k.items()]
        return "\n".join(lines) + "\n"


def run_synth(out, cfg: SynthConfig = SynthConfig()) -> Path:
    """Render a complete phantom dataset into ``out``."""
    out = Path(out)
    cfg.phantom.validate()
    if cfg.scale_jitter < 0:
        raise ValueError("scale_jitter must be non-negative")
    mesh = generate_phantom(cfg.phantom)
    poses = generate_trajectory(cfg.phantom, cfg.frames)
    bvh = BVH(mesh)
    k = cfg.intrinsics
    out.mkdir(parents=True, exist_ok=True)

    render_cfg = RenderConfig(cfg.noise, seed=substream_seed(cfg.seed, "harness.noise"))
    jitter = np.exp(substream(cfg.seed, "harness.scale").uniform(-cfg.scale_jitter, cfg.scale_jitter, cfg.frames))
    for i, pose in enumerate(poses):
        frame = render_depth(mesh, pose, k, render_cfg, frame_id=i, bvh=bvh)
        # monocular depth is only known up to scale; store it off by 1/jitter
        io.write_frame(out, apply_scale(frame, 1.0 / jitter[i]))
    cloud = sample_sparse(mesh, poses, k, cfg.points, seed=substream_seed(cfg.seed, "harness.sparse"), bvh=bvh)

    io.write_intrinsics(out / "intrinsics.txt", k)
    io.write_trajectory(out / "trajectory.txt", poses)
    io.write_cloud_ply(out / "sparse.ply", cloud)
    io.write_mesh_ply(out / "phantom.ply", mesh, double=True)
    (out / "gt_scales.txt").write_text("".join(f"{i} {s!r}\n" for i, s in enumerate(jitter.tolist())))
    (out / "synth.cfg").write_text(cfg.dumps())
    return out


# ---------------------------------------------------------------- dataset


@dataclass(eq=False)
class Dataset:
    root: Path
    intrinsics: CameraIntrinsics
    poses: dict  # frame id -> RigidPose
    cloud: Optional[SparsePointCloud]

    @property
    def frame_ids(self) -> list:
        return list(self.poses)

    def depth_path(self, fid: int) -> Path:
        return self.root / "depth" / f"frame_{fid:05d}.dpth"

    def load_frame(self, fid: int) -> DepthFrame:
        return io.read_frame(self.root, fid, self.poses[fid], self.intrinsics)


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"missing dataset directory: {root}")
    k = io.read_intrinsics(root / "intrinsics.txt")
    poses = io.read_trajectory(root / "trajectory.txt")
    if not poses:
        raise DataError(f"{root / 'trajectory.txt'}: no poses")
    cloud_path = root / "sparse.ply"
    cloud = io.read_cloud_ply(cloud_path) if cloud_path.exists() else None
    ds = Dataset(root, k, poses, cloud)
    for fid in poses:
        if not ds.depth_path(fid).exists():
            raise DataError(f"missing depth file: {ds.depth_path(fid)}")
    return ds


def subsample_frames(frame_ids, keep: int, block: int, rng: np.random.Generator) -> list:
    """Randomly keep ``keep`` frames out of every ``block`` consecutive ones."""
    ids = list(frame_ids)
    out = []
    for start in range(0, len(ids), block):
        chunk = ids[start : start + block]
        m = min(keep, len(chunk))
        pick = np.sort(rng.choice(len(chunk), size=m, replace=False))
        out.extend(chunk[i] for i in pick)
    return out


# ---------------------------------------------------------------- reconstruct


@dataclass(eq=False)
class Reconstruction:
    mesh: TriangleMesh
    report: WatertightReport
    frame_ids: list
    scales: list
    scale_source: list  # "frame", "global", "fixed"
    skipped: list  # frame ids with no valid depth


def _rescale(frames, cloud, mode):
    if cloud is None or mode == "none":
        return frames, [1.0] * len(frames), ["fixed"] * len(frames)
    if mode == "global":
        s = recover_scale_global(frames, cloud)
        return [apply_scale(f, s) for f in frames], [s] * len(frames), ["global"] * len(frames)
    scales, source = [], []
    fallback = None
    for f in frames:
        try:
            scales.append(recover_scale(f, cloud))
            source.append("frame")
        except NoVisiblePoints:
            if fallback is None:
                fallback = recover_scale_global(frames, cloud)
            log.warning("frame %d sees no landmark; using the pooled scale", f.frame_id)
            scales.append(fallback)
            source.append("global")
    return [apply_scale(f, s) for f, s in zip(frames, scales)], scales, source


def reconstruct(ds: Dataset, cfg: PipelineConfig, frame_ids=None) -> Reconstruction:
    fids = ds.frame_ids if frame_ids is None else list(frame_ids)
    frames, skipped = [], []
    for fid in fids:
        f = ds.load_frame(fid)
        if f.valid.any():
            frames.append(f)
        else:
            skipped.append(fid)
    if not frames:
        raise NoValidDepths(f"no valid depth pixel in any of {len(fids)} frames")
    frames, scales, source = _rescale(frames, ds.cloud, cfg.scale_mode)
    vol = integrate_sequence(frames, cfg.fusion)
    mesh = marching_cubes(vol, cfg.min_weight)
    return Reconstruction(mesh, check_watertight(mesh), [f.frame_id for f in frames], scales, source, skipped)


def _write_reconstruction(out: Path, rec: Reconstruction, cfg: PipelineConfig, gt_scales=None):
    out.mkdir(parents=True, exist_ok=True)
    io.write_mesh_ply(out / "mesh.ply", rec.mesh)
    (out / "watertight.txt").write_text(
        "".join(f"{k} {int(v)} {'bool' if k.startswith('is_') else 'count'}\n" for k, v in rec.report.as_dict().items())
    )
    lines = ["# frame_id scale source\n"]
    lines += [f"{fid} {s!r} {src}\n" for fid, s, src in zip(rec.frame_ids, rec.scales, rec.scale_source)]
    lines += [f"{fid} nan skipped\n" for fid in rec.skipped]
    (out / "scales.txt").write_text("".join(lines))
    if cfg.figures and rec.scales:
        ref = None
        if gt_scales is not None:
            ref = [gt_scales.get(fid, math.nan) for fid in rec.frame_ids]
        plotting.scale_log(rec.frame_ids, rec.scales, out / "scales.png", ref)


def _read_gt_scales(root: Path):
    p = root / "gt_scales.txt"
    if not p.exists():
        return None
    out = {}
    for line in p.read_text().splitlines():
        a, b = line.split()
        out[int(a)] = float(b)
    return out


def _echo(out: Path, cfg: PipelineConfig):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())


def run_reconstruct(cfg: PipelineConfig) -> Reconstruction:
    out = Path(cfg.output)
    ds = load_dataset(cfg.dataset)
    _echo(out, cfg)
    rec = reconstruct(ds, cfg)
    _write_reconstruction(out, rec, cfg, _read_gt_scales(ds.root))
    log.info("mesh: %d vertices, %d triangles, watertight=%s", len(rec.mesh.vertices), len(rec.mesh.triangles), rec.report.is_watertight)
    return rec


# ---------------------------------------------------------------- evaluate


@dataclass(eq=False)
class Evaluation:
    metrics: list  # (name, value, unit)
    registration: RegistrationResult
    sections: Optional[SectionSeries]
    section_error: Optional[str]
    distances: dict = field(default_factory=dict)

    def value(self, name):
        for n, v, _ in self.metrics:
            if n == name:
                return v
        raise KeyError(name)

    @property
    def exit_code(self) -> int:
        return 0 if self.section_error is None else AllSectionsFailed.exit_code


def _init_for(points, target, how):
    return centroid_rms_init(points, target) if how == "centroid" else None


def evaluate(
    recon: TriangleMesh,
    reference: TriangleMesh,
    trajectory,
    cloud: Optional[SparsePointCloud],
    cfg: PipelineConfig,
) -> Evaluation:
    """Accuracy, registration, cross-section and watertightness metrics."""
    metrics = []
    distances = {}

    def add_stats(prefix, stats, unit="mm"):
        for k, v in stats.as_dict().items():
            metrics.append((f"{prefix}_{k}", v, unit))

    if cloud is not None and len(cloud.points):
        st = point_to_mesh(cloud.points, recon)
        add_stats("sparse_to_recon", st)
        distances["sparse to recon"] = st.per_point

    ref_bvh = BVH(reference)
    reg = register_sim3(recon.vertices, reference, _init_for(recon.vertices, reference, cfg.reg_init), cfg.registration, ref_bvh)
    T = reg.transform
    add_stats("registration_residual", reg.stats)
    metrics += [
        ("registration_scale", T.scale, "ratio"),
        ("registration_iterations", reg.iterations, "count"),
        ("registration_converged", int(reg.converged), "bool"),
    ]
    distances["recon to reference"] = reg.stats.per_point

    samples, _ = reference.sample_surface(cfg.eval_samples, substream(cfg.seed, "evaluate.samples"))
    st = point_to_mesh(samples, recon.transformed(T))
    add_stats("reference_to_recon", st)
    distances["reference to recon"] = st.per_point

    if cloud is not None and len(cloud.points) >= 7:
        sreg = register_sim3(cloud.points, reference, _init_for(cloud.points, reference, cfg.reg_init), cfg.registration, ref_bvh)
        add_stats("sparse_registration_residual", sreg.stats)

    sections, err = None, None
    try:
        sections = cross_section_series(recon, reference, trajectory, T)
        metrics += [
            ("section_mean_relative_difference", sections.mean_relative_difference, "ratio"),
            ("section_count", len(sections.rows), "count"),
            ("section_skipped", sections.skipped, "count"),
        ]
    except AllSectionsFailed as exc:
        err = str(exc)
        metrics += [
            ("section_mean_relative_difference", math.nan, "ratio"),
            ("section_count", len(trajectory), "count"),
            ("section_skipped", len(trajectory), "count"),
        ]

    for k, v in check_watertight(recon).as_dict().items():
        metrics.append((f"recon_{k}", int(v), "bool" if k.startswith("is_") else "count"))
    return Evaluation(metrics, reg, sections, err, distances)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_evaluation(out: Path, ev: Evaluation, cfg: PipelineConfig, voxel_size=None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text("".join(f"{n} {_fmt(v)} {u}\n" for n, v, u in ev.metrics))
    doc = {n: (None if isinstance(v, float) and math.isnan(v) else v) for n, v, _ in ev.metrics}
    doc["registration_transform"] = ev.registration.transform.matrix().tolist()
    doc["section_error"] = ev.section_error
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    if ev.sections is not None:
        rows = ["pose,recon_area,reference_area,relative_difference\n"]
        rows += [f"{i},{a!r},{b!r},{r!r}\n" for i, a, b, r in ev.sections.rows]
        (out / "sections.csv").write_text("".join(rows))
    (out / "registration.txt").write_text("".join(f"{i} {r!r}\n" for i, r in enumerate(ev.registration.trimmed_rms_history)))
    if cfg.figures:
        plotting.distance_histogram(ev.distances, out / "distances.png", voxel_size)
        plotting.registration_history(ev.registration.trimmed_rms_history, out / "registration.png")
        if ev.sections is not None:
            plotting.section_areas(ev.sections.rows, out / "sections.png")


def run_evaluate(recon_path, reference_path, trajectory_path, cloud_path, cfg: PipelineConfig) -> Evaluation:
    out = Path(cfg.output)
    paths = [recon_path, reference_path, trajectory_path] + ([cloud_path] if cloud_path else [])
    for p in paths:
        if not Path(p).exists():
            raise DataError(f"missing file: {p}")
    recon = io.read_mesh_ply(recon_path)
    reference = io.read_mesh_ply(reference_path)
    poses = list(io.read_trajectory(trajectory_path).values())
    cloud = io.read_cloud_ply(cloud_path) if cloud_path else None
    _echo(out, cfg)
    ev = evaluate(recon, reference, poses, cloud, cfg)
    _write_evaluation(out, ev, cfg, cfg.voxel_size)
    return ev


# ---------------------------------------------------------------- consistency


@dataclass(eq=False)
class Consistency:
    runs: list  # (frame ids, Reconstruction)
    pairs: list  # (i, j, RegistrationResult)

    @property
    def mean_residual(self) -> float:
        return float(np.mean([r.stats.mean for _, _, r in self.pairs]))


def consistency(ds: Dataset, cfg: PipelineConfig) -> Consistency:
    runs = []
    for r in range(cfg.consistency_runs):
        rng = substream(cfg.seed, "subsample", r)
        fids = subsample_frames(ds.frame_ids, cfg.subsample_keep, cfg.subsample_block, rng)
        runs.append((fids, reconstruct(ds, cfg, fids)))
    pairs = []
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            src, dst = runs[i][1].mesh, runs[j][1].mesh
            res = register_sim3(src.vertices, dst, _init_for(src.vertices, dst, cfg.reg_init), cfg.registration)
            pairs.append((i, j, res))
    return Consistency(runs, pairs)


def run_consistency(cfg: PipelineConfig) -> Consistency:
    out = Path(cfg.output)
    ds = load_dataset(cfg.dataset)
    _echo(out, cfg)
    res = consistency(ds, cfg)
    gt = _read_gt_scales(ds.root)
    for r, (fids, rec) in enumerate(res.runs):
        d = out / f"run_{r}"
        _write_reconstruction(d, rec, cfg, gt)
        (d / "frames.txt").write_text("".join(f"{f}\n" for f in fids))
    lines = []
    for i, j, reg in res.pairs:
        for k, v in reg.stats.as_dict().items():
            lines.append(f"pair_{i}_{j}_residual_{k} {v!r} mm\n")
        lines.append(f"pair_{i}_{j}_scale {reg.transform.scale!r} ratio\n")
    lines.append(f"mean_residual {res.mean_residual!r} mm\n")
    (out / "consistency.txt").write_text("".join(lines))
    if cfg.figures:
        plotting.distance_histogram(
            {f"run {i} to run {j}": reg.stats.per_point for i, j, reg in res.pairs}, out / "consistency.png", cfg.voxel_size
        )
    return res


# ---------------------------------------------------------------- match


def run_match(source_path, target_path, queries_path, out_path, refine_factor: int = 4) -> np.ndarray:
    from .matching import match_many

    source = io.read_descriptors(source_path)
    target = io.read_descriptors(target_path)
    if source.channels != target.channels:
        raise ChannelMismatch(f"{source_path}: {source.channels} channels, {target_path}: {target.channels}")
    queries = io.read_queries(queries_path)
    rows = match_many(queries, source, target, refine_factor)
    io.write_matches(out_path, rows)
    return rows


__all__ = [
    "SynthConfig",
    "run_synth",
    "Dataset",
    "load_dataset",
    "subsample_frames",
    "Reconstruction",
    "reconstruct",
    "run_reconstruct",
    "Evaluation",
    "evaluate",
    "run_evaluate",
    "Consistency",
    "consistency",
    "run_consistency",
    "run_match",
    "ReconError",
]
