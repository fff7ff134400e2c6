"""Config-driven experiment runner.

An experiment renders a source sequence with exact depth, warps it along a
target camera path into a partially observed guidance latent, runs guided
sampling for every (ablation cell, seed) pair, and scores the results.
Everything is driven by one JSON config validated up front; unknown keys
are rejected so typos fail fast.

Config schema (all sections required unless noted):

    camera              fx, width, height, optional fy/cx/cy
    scene               channels, far_plane?, background_value?, primitives[]
                        primitive: kind ("plane"|"sphere"), center, texture?,
                        texture_scale?, velocity?, plus normal/extent or radius
    source_trajectory   trajectory spec (see below)
    target_trajectory   trajectory spec
    schedule            kind ("linear_flow"|"ddim_matching_flow"), steps
    oracle              kind "isotropic_gaussian": mean, variance
                        kind "gaussian_mixture": weights, means, variances
                        kind "render_prior": path ("source"|"target"|"offset"),
                            variance, offset_deg?  (soft prior centered on a render)
                        kind "target_render"  (perfect denoiser on the target render)
    embedding           mode ("identity"|"orthogonal_mix"), seed?
    guidance            irr, flf, dsg, rho?, irr_recursions?, lambda_start?,
                        lambda_end?, renoise_scheduler?, renoise_redraw_per_step?,
                        dsg_normalization?, flow_metrics?
    corrupt_guidance_channels   optional [channel indices]: time-reverses those
                        guidance channels (synthetic stand-in for guidance
                        content whose motion disagrees with the target)
    seeds               list of integers
    ablate              optional subset of ["irr","flf","dsg"] to grid over
    output_dir          directory for run outputs
    adherence_tolerance optional, recorded in the manifest

    trajectory spec     kind ("orbit"|"dolly_zoom"|"arc_pan"|"custom"|"static"),
                        frame_count, plus the kind's parameters; "static" is
                        sugar for a custom trajectory repeating one look-at pose
                        (fields: eye, target)

Run layout: ``<output_dir>/<config_hash[:12]>/{frames,traces,metrics,manifest.json}``.
The manifest hash covers only deterministic content (config hash, output
hashes, metrics), never wall-clock.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .camera import pinhole_intrinsics, look_at
from .flowscore import FlowMetricConfig, dump_scores_csv
from .guidance import GuidanceConfig, guided_sample
from .oracles import (
    DenoiserOracle,
    GaussianMixture,
    IsotropicGaussian,
    PredictionKind,
    TabulatedVideoTarget,
)
from .rng import keyed_normal
from .samplers import SamplerState, run_chain
from .scene import Plane, SceneSpec, Sphere, render_sequence
from .schedules import NoiseSchedule, ddim_schedule_matching_flow, linear_flow_schedule
from .tensorio import write_image, write_tensor
from .trajectories import TrajectorySpec, make_trajectory
from .trajeval import align_sim3, ate, pose_trajectory_from_cameras, rpe_r, rpe_t, save_pose_file
from .warping import embed_latent, orthogonal_channel_mix, warp_sequence

__all__ = ["ExperimentConfig", "RunManifest", "load_config", "run_experiment", "emit_plots"]

MECHANISMS = ("irr", "flf", "dsg")


class ConfigError(ValueError):
    """Raised for malformed experiment configs."""


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus its canonical hash."""

    raw: dict
    config_hash: str

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _validate_config(raw)
        canonical = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
        return cls(raw=raw, config_hash=hashlib.sha256(canonical).hexdigest())


def load_config(path) -> ExperimentConfig:
    with open(path) as handle:
        return ExperimentConfig.from_dict(json.load(handle))


def _validate_trajectory(section: dict, where: str) -> None:
    allowed = {
        "kind", "frame_count", "target", "radius", "span_deg", "start_deg", "height",
        "pan_deg", "dolly_from", "dolly_to", "eye", "max_rotation_step_deg",
        "max_translation_step",
    }
    _require_keys(section, allowed, {"kind", "frame_count"}, where)
    if section["kind"] not in ("orbit", "dolly_zoom", "arc_pan", "static"):
        raise ConfigError(f"{where}: unsupported trajectory kind {section['kind']!r}")
    if section["kind"] == "static" and "eye" not in section:
        raise ConfigError(f"{where}: static trajectories need an eye position")


def _validate_config(raw: dict) -> None:
    top_allowed = {
        "camera", "scene", "source_trajectory", "target_trajectory", "schedule",
        "oracle", "embedding", "guidance", "corrupt_guidance_channels", "seeds",
        "ablate", "output_dir", "adherence_tolerance",
    }
    top_required = {
        "camera", "scene", "source_trajectory", "target_trajectory", "schedule",
        "oracle", "guidance", "seeds", "output_dir",
    }
    _require_keys(raw, top_allowed, top_required, "config")

    _require_keys(raw["camera"], {"fx", "fy", "cx", "cy", "width", "height"},
                  {"fx", "width", "height"}, "camera")
    _require_keys(raw["scene"], {"channels", "far_plane", "background_value", "primitives"},
                  {"channels", "primitives"}, "scene")
    for i, prim in enumerate(raw["scene"]["primitives"]):
        where = f"scene.primitives[{i}]"
        if prim.get("kind") == "plane":
            _require_keys(prim, {"kind", "center", "normal", "extent", "texture",
                                 "texture_scale", "velocity"}, {"kind", "center", "normal"}, where)
        elif prim.get("kind") == "sphere":
            _require_keys(prim, {"kind", "center", "radius", "texture", "texture_scale",
                                 "velocity"}, {"kind", "center", "radius"}, where)
        else:
            raise ConfigError(f"{where}: kind must be 'plane' or 'sphere'")
    _validate_trajectory(raw["source_trajectory"], "source_trajectory")
    _validate_trajectory(raw["target_trajectory"], "target_trajectory")
    if raw["source_trajectory"]["frame_count"] != raw["target_trajectory"]["frame_count"]:
        raise ConfigError("source and target trajectories must share frame_count")

    _require_keys(raw["schedule"], {"kind", "steps"}, {"kind", "steps"}, "schedule")
    if raw["schedule"]["kind"] not in ("linear_flow", "ddim_matching_flow"):
        raise ConfigError("schedule.kind must be 'linear_flow' or 'ddim_matching_flow'")

    oracle = raw["oracle"]
    kind = oracle.get("kind")
    if kind == "isotropic_gaussian":
        _require_keys(oracle, {"kind", "mean", "variance"}, {"kind", "variance"}, "oracle")
    elif kind == "gaussian_mixture":
        _require_keys(oracle, {"kind", "weights", "means", "variances"},
                      {"kind", "weights", "means", "variances"}, "oracle")
    elif kind == "render_prior":
        _require_keys(oracle, {"kind", "path", "variance", "offset_deg"},
                      {"kind", "path", "variance"}, "oracle")
        if oracle["path"] not in ("source", "target", "offset"):
            raise ConfigError("oracle.path must be 'source', 'target', or 'offset'")
    elif kind == "target_render":
        _require_keys(oracle, {"kind"}, {"kind"}, "oracle")
    else:
        raise ConfigError(f"oracle.kind {kind!r} is not supported")

    if "embedding" in raw:
        _require_keys(raw["embedding"], {"mode", "seed"}, {"mode"}, "embedding")
        if raw["embedding"]["mode"] not in ("identity", "orthogonal_mix"):
            raise ConfigError("embedding.mode must be 'identity' or 'orthogonal_mix'")

    g_allowed = {"irr", "flf", "dsg", "rho", "irr_recursions", "lambda_start", "lambda_end",
                 "renoise_scheduler", "renoise_redraw_per_step", "dsg_normalization",
                 "flow_metrics"}
    _require_keys(raw["guidance"], g_allowed, {"irr", "flf", "dsg"}, "guidance")
    if "flow_metrics" in raw["guidance"]:
        fm_allowed = {"n_epe", "n_ae_deg", "n_fl", "gamma", "fl_epe_threshold",
                      "fl_rel_threshold", "fl_rule"}
        _require_keys(raw["guidance"]["flow_metrics"], fm_allowed, set(), "guidance.flow_metrics")

    if "ablate" in raw:
        bad = set(raw["ablate"]) - set(MECHANISMS)
        if bad:
            raise ConfigError(f"ablate: unknown mechanisms {sorted(bad)}")
    if not raw["seeds"]:
        raise ConfigError("seeds must be non-empty")
    if "corrupt_guidance_channels" in raw:
        nch = raw["scene"]["channels"]
        for c in raw["corrupt_guidance_channels"]:
            if not 0 <= c < nch:
                raise ConfigError(f"corrupt_guidance_channels: channel {c} out of range")


@dataclass
class RunManifest:
    """Atomic record of one experiment run."""

    config_hash: str
    code_version: str
    cells: list[dict] = field(default_factory=list)
    trajectory_metrics: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    manifest_hash: str = ""
    run_dir: str = ""

    def finalize_hash(self) -> None:
        stable = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "cells": self.cells,
            "trajectory_metrics": self.trajectory_metrics,
            "errors": self.errors,
        }
        blob = json.dumps(stable, sort_keys=True, separators=(",", ":")).encode()
        self.manifest_hash = hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as handle:
            json.dump(asdict(self), handle, indent=2, sort_keys=True)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as handle:
            return cls(**json.load(handle))


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _build_trajectory(section: dict, intrinsics) -> list:
    if section["kind"] == "static":
        pose = look_at(section["eye"], section.get("target", (0.0, 0.0, 1.0)), intrinsics)
        spec = TrajectorySpec(kind="custom", frame_count=section["frame_count"],
                              poses=tuple([pose] * section["frame_count"]))
        return make_trajectory(spec, intrinsics)
    fields = {k: v for k, v in section.items() if k not in ("kind", "frame_count")}
    if "target" in fields:
        fields["target"] = tuple(fields["target"])
    spec = TrajectorySpec(kind=section["kind"], frame_count=section["frame_count"], **fields)
    return make_trajectory(spec, intrinsics)


def _build_scene(section: dict) -> SceneSpec:
    prims = []
    for prim in section["primitives"]:
        kwargs = {k: v for k, v in prim.items() if k != "kind"}
        for key in ("center", "normal", "velocity"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "extent" in kwargs:
            kwargs["extent"] = tuple(kwargs["extent"])
        prims.append(Plane(**kwargs) if prim["kind"] == "plane" else Sphere(**kwargs))
    return SceneSpec(
        primitives=tuple(prims),
        channels=section["channels"],
        far_plane=section.get("far_plane", 100.0),
        background_value=section.get("background_value", 0.0),
    )


def _build_schedule(section: dict) -> NoiseSchedule:
    if section["kind"] == "linear_flow":
        return linear_flow_schedule(section["steps"])
    return ddim_schedule_matching_flow(section["steps"])


def _build_oracle(section: dict, renders: dict, convention: PredictionKind) -> DenoiserOracle:
    kind = section["kind"]
    if kind == "isotropic_gaussian":
        oracle = IsotropicGaussian(mean=section.get("mean", 0.0), variance=section["variance"])
    elif kind == "gaussian_mixture":
        oracle = GaussianMixture(
            weights=tuple(section["weights"]),
            means=tuple(section["means"]),
            variances=tuple(section["variances"]),
        )
    elif kind == "render_prior":
        oracle = GaussianMixture(
            weights=(1.0,),
            means=(renders[section["path"]],),
            variances=(section["variance"],),
        )
    else:  # target_render: perfect denoiser pinned to the target-path render
        oracle = TabulatedVideoTarget(target=renders["target"])
    return oracle.with_convention(convention)


def _guidance_config(section: dict, mechanisms: dict) -> GuidanceConfig:
    flow_cfg = FlowMetricConfig(**{
        k if k != "gamma" else "gamma": (tuple(v) if k == "gamma" else v)
        for k, v in section.get("flow_metrics", {}).items()
    }) if "flow_metrics" in section else FlowMetricConfig()
    return GuidanceConfig(
        irr_enabled=mechanisms["irr"],
        flf_enabled=mechanisms["flf"],
        dsg_enabled=mechanisms["dsg"],
        rho=section.get("rho", 1.0),
        irr_recursions=section.get("irr_recursions", 1),
        lambda_start=section.get("lambda_start", 1.5),
        lambda_end=section.get("lambda_end", 0.0),
        renoise_scheduler=section.get("renoise_scheduler", "flow_linear"),
        renoise_redraw_per_step=section.get("renoise_redraw_per_step", False),
        dsg_normalization=section.get("dsg_normalization", "match_traj"),
        flow_cfg=flow_cfg,
    )


def _ablation_cells(raw: dict) -> list[dict]:
    base = {m: bool(raw["guidance"][m]) for m in MECHANISMS}
    varied = list(raw.get("ablate", []))
    if not varied:
        return [base]
    cells = []
    for bits in itertools.product((True, False), repeat=len(varied)):
        cell = dict(base)
        cell.update(dict(zip(varied, bits)))
        cells.append(cell)
    return cells


def _cell_id(mechanisms: dict) -> str:
    return "-".join(f"{m}{int(mechanisms[m])}" for m in MECHANISMS)


def _observed_mean_abs(sample, reference, masks) -> float:
    broad = np.broadcast_to(np.asarray(masks, dtype=bool), sample.shape)
    return float(np.abs(sample - reference)[broad].mean())


def run_experiment(config: ExperimentConfig, base_dir=None) -> RunManifest:
    """Execute every (ablation cell, seed) pair and write the run directory.

    Stage failures are recorded in the manifest with the stage name and the
    run continues with the remaining cells; partial outputs stay on disk.
    """
    raw = config.raw
    started = time.monotonic()
    out_root = Path(base_dir) if base_dir is not None else Path(raw["output_dir"])
    run_dir = out_root / config.config_hash[:12]
    for sub in ("frames", "traces", "metrics"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(config_hash=config.config_hash, code_version=__version__,
                           run_dir=str(run_dir))

    cam = raw["camera"]
    intrinsics = pinhole_intrinsics(
        fx=cam["fx"], width=cam["width"], height=cam["height"],
        fy=cam.get("fy"), cx=cam.get("cx"), cy=cam.get("cy"),
    )
    resolution = (cam["height"], cam["width"])
    scene = _build_scene(raw["scene"])
    src_poses = _build_trajectory(raw["source_trajectory"], intrinsics)
    tar_poses = _build_trajectory(raw["target_trajectory"], intrinsics)

    # Ground-truth and guidance content.
    src_frames, src_depths = render_sequence(scene, src_poses, resolution)
    tar_frames, _ = render_sequence(scene, tar_poses, resolution)
    z_pixel, masks = warp_sequence(src_frames, src_depths, src_poses, tar_poses)

    embedding = raw.get("embedding", {"mode": "identity"})
    mixing = None
    if embedding["mode"] == "orthogonal_mix":
        mixing = orthogonal_channel_mix(scene.channels, seed=embedding.get("seed", 0))
    z_traj = embed_latent(z_pixel, mixing)
    z_true = embed_latent(tar_frames, mixing)
    renders = {"source": embed_latent(src_frames, mixing), "target": z_true}
    if raw["oracle"].get("path") == "offset":
        offset = dict(raw["target_trajectory"])
        offset["start_deg"] = offset.get("start_deg", 0.0) + raw["oracle"].get("offset_deg", 3.0)
        offset_frames, _ = render_sequence(scene, _build_trajectory(offset, intrinsics), resolution)
        renders["offset"] = embed_latent(offset_frames, mixing)

    for c in raw.get("corrupt_guidance_channels", []):
        z_traj[c] = z_traj[c, ::-1]

    schedule = _build_schedule(raw["schedule"])
    convention = (
        PredictionKind.VELOCITY if raw["schedule"]["kind"] == "linear_flow"
        else PredictionKind.EPSILON
    )
    oracle = _build_oracle(raw["oracle"], renders, convention)

    # Pose bookkeeping: the guidance video is warped with exactly the target
    # poses, so the recovered trajectory is the target trajectory itself;
    # external pose estimates can be swapped in through the pose-file tools.
    ref_traj = pose_trajectory_from_cameras(tar_poses)
    est_traj = pose_trajectory_from_cameras(tar_poses)
    save_pose_file(run_dir / "metrics" / "target_trajectory.txt", ref_traj)
    try:
        aligned, _ = align_sim3(est_traj, ref_traj)
        ate_rmse, _ = ate(aligned, ref_traj)
        rpe_t_rmse, _ = rpe_t(aligned, ref_traj)
        rpe_r_rmse, _ = rpe_r(aligned, ref_traj)
        manifest.trajectory_metrics = {
            "ate": ate_rmse, "rpe_t": rpe_t_rmse, "rpe_r": rpe_r_rmse,
        }
    except Exception as exc:  # degenerate paths (e.g. static) simply skip
        manifest.errors.append({"stage": "trajectory_metrics", "error": str(exc)})

    write_tensor(run_dir / "frames" / "guidance_latent.tensor", z_traj)
    write_tensor(run_dir / "frames" / "guidance_masks.tensor", masks)
    write_tensor(run_dir / "frames" / "target_latent.tensor", z_true)

    for mechanisms in _ablation_cells(raw):
        cell = _cell_id(mechanisms)
        for seed in raw["seeds"]:
            tag = f"{cell}-seed{seed}"
            try:
                cfg = _guidance_config(raw["guidance"], mechanisms)
                noise = keyed_normal(seed, "init_noise", z_traj.shape)
                sample, trace = guided_sample(
                    noise, oracle, z_traj, masks, cfg, schedule, seed=seed
                )
                baseline = run_chain(
                    SamplerState(noise.copy(), len(schedule) - 1, schedule, seed), oracle
                )

                sample_path = run_dir / "frames" / f"{tag}.tensor"
                write_tensor(sample_path, sample)
                baseline_path = run_dir / "frames" / f"baseline-seed{seed}.tensor"
                if not baseline_path.exists():
                    write_tensor(baseline_path, baseline)
                mid = sample.shape[1] // 2
                preview = sample[:3, mid] if sample.shape[0] >= 3 else sample[0, mid]
                write_image(run_dir / "frames" / f"{tag}.ppm", preview)
                trace_path = run_dir / "traces" / f"{tag}.csv"
                trace.save_csv(trace_path)
                if trace.channel_score_rows:
                    dump_scores_csv(run_dir / "traces" / f"{tag}-scores.csv",
                                    trace.channel_score_rows)

                metrics = {
                    "adherence_to_target": _observed_mean_abs(sample, z_true, masks),
                    "adherence_to_guidance": _observed_mean_abs(sample, z_traj, masks),
                    "baseline_adherence_to_target": _observed_mean_abs(baseline, z_true, masks),
                    "sample_sha256": _sha256_file(sample_path),
                    "baseline_sha256": _sha256_file(baseline_path),
                    "finite": bool(np.all(np.isfinite(sample))),
                }
                manifest.cells.append(
                    {
                        "cell": cell,
                        "mechanisms": mechanisms,
                        "seed": seed,
                        "metrics": metrics,
                        "outputs": {
                            str(sample_path.relative_to(run_dir)): metrics["sample_sha256"],
                            str(trace_path.relative_to(run_dir)): _sha256_file(trace_path),
                        },
                    }
                )
            except Exception as exc:
                manifest.errors.append({"stage": f"cell:{tag}", "error": str(exc)})

    manifest.wall_clock_seconds = time.monotonic() - started
    manifest.finalize_hash()
    manifest.save(run_dir / "manifest.json")
    return manifest


def emit_plots(manifest: RunManifest) -> list[str]:
    """Flatten traces into plain CSV curve files under metrics/.

    Per cell and seed: one curve file with a row per denoising step (the
    correction-weight columns appear only when the correction ran) and one
    heatmap file with channel x step similarity scores when channel gating
    ran.  Returns the written paths.
    """
    run_dir = Path(manifest.run_dir)
    written = []
    for cell in manifest.cells:
        tag = f"{cell['cell']}-seed{cell['seed']}"
        trace_path = run_dir / "traces" / f"{tag}.csv"
        if not trace_path.exists():
            raise FileNotFoundError(f"missing trace file {trace_path}")
        rows = trace_path.read_text().strip().splitlines()
        header = rows[0].split(",")
        curve_path = run_dir / "metrics" / f"curves-{tag}.csv"
        keep = [
            c for c in ("step", "renoise_weight", "delta", "mu_s", "sigma_s",
                        "correction_norm", "observed_adherence", "alpha", "beta")
            if c in header
        ]
        idx = [header.index(c) for c in keep]
        with open(curve_path, "w") as handle:
            handle.write(",".join(keep) + "\n")
            for row in rows[1:]:
                parts = row.split(",")
                handle.write(",".join(parts[i] for i in idx) + "\n")
        written.append(str(curve_path))
        scores_path = run_dir / "traces" / f"{tag}-scores.csv"
        if scores_path.exists():
            heatmap_path = run_dir / "metrics" / f"heatmap-{tag}.csv"
            heatmap_path.write_text(
                "\n".join(
                    line for line in scores_path.read_text().splitlines()
                    if not line.startswith("#")
                )
                + "\n"
            )
            written.append(str(heatmap_path))
    return written
