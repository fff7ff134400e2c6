"""Command-line front end.

Verbs:

* ``run <config.json>``: execute an experiment config end to end.
* ``eval-traj <est.txt> <ref.txt>``: align and score two pose files.
* ``score-flow <a.tensor> <b.tensor> <mask.tensor>``: per-channel motion
  similarity of two latents under a validity mask.
* ``check-equivalence``: ladder-vs-flow sampler deviation sweep.

Exit code 0 only when every requested operation succeeds.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .flowscore import FlowMetricConfig, channel_scores
from .harness import MECHANISMS, emit_plots, load_config, run_experiment
from .oracles import IsotropicGaussian
from .samplers import ddim_fm_equivalence_check
from .tensorio import read_tensor
from .trajeval import align_sim3, ate, load_pose_file, rpe_r, rpe_t


def _cmd_run(args) -> int:
    config = load_config(args.config)
    raw = dict(config.raw)
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.ablate is not None:
        raw["ablate"] = [m.strip() for m in args.ablate.split(",") if m.strip()]
        bad = set(raw["ablate"]) - set(MECHANISMS)
        if bad:
            print(f"error: unknown mechanisms {sorted(bad)}", file=sys.stderr)
            return 2
    config = type(config).from_dict(raw)
    manifest = run_experiment(config)
    emit_plots(manifest)
    print(f"run dir: {manifest.run_dir}")
    print(f"config hash: {manifest.config_hash}")
    print(f"manifest hash: {manifest.manifest_hash}")
    for cell in manifest.cells:
        metrics = cell["metrics"]
        print(
            f"  {cell['cell']} seed={cell['seed']} "
            f"adherence_to_target={metrics['adherence_to_target']:.5f} "
            f"adherence_to_guidance={metrics['adherence_to_guidance']:.5f}"
        )
    if manifest.errors:
        for err in manifest.errors:
            print(f"  FAILED {err['stage']}: {err['error']}", file=sys.stderr)
        return 1
    return 0


def _cmd_eval_traj(args) -> int:
    est = load_pose_file(args.est)
    ref = load_pose_file(args.ref)
    aligned, transform = align_sim3(est, ref)
    ate_rmse, _ = ate(aligned, ref)
    rpe_t_rmse, _ = rpe_t(aligned, ref)
    rpe_r_rmse, _ = rpe_r(aligned, ref)
    print(f"sim3: scale={transform.scale:.9g}")
    print(f"ate_rmse={ate_rmse:.9g}")
    print(f"rpe_t_rmse={rpe_t_rmse:.9g}")
    print(f"rpe_r_rmse_deg={rpe_r_rmse:.9g}")
    if args.out:
        with open(args.out, "w") as handle:
            handle.write("metric,value\n")
            handle.write(f"ate,{ate_rmse:.17g}\n")
            handle.write(f"rpe_t,{rpe_t_rmse:.17g}\n")
            handle.write(f"rpe_r,{rpe_r_rmse:.17g}\n")
    return 0


def _cmd_score_flow(args) -> int:
    a = read_tensor(args.a)
    b = read_tensor(args.b)
    mask = read_tensor(args.mask).astype(bool)
    scores = channel_scores(a, b, mask, FlowMetricConfig())
    print("channel,score,epe,ae_rad,fl,valid_pixels,scorable")
    for c in range(scores.n_channels):
        print(
            f"{c},{scores.scores[c]:.6f},{scores.epe[c]:.6f},{scores.ae[c]:.6f},"
            f"{scores.fl[c]:.6f},{scores.valid_counts[c]},{int(scores.scorable[c])}"
        )
    return 0


def _cmd_check_equivalence(args) -> int:
    oracle = IsotropicGaussian(mean=args.mean, variance=args.variance)
    steps = [int(s) for s in args.steps.split(",")]
    deviations = []
    for n in steps:
        dev = ddim_fm_equivalence_check(oracle, n, seed=args.seed)
        deviations.append(dev)
        print(f"steps={n:6d}  max_deviation={dev:.3e}")
    ok = all(d2 <= d1 * (1 + 1e-12) for d1, d2 in zip(deviations, deviations[1:]))
    if not ok:
        print("error: deviation is not non-increasing across the sweep", file=sys.stderr)
        return 1
    if deviations[-1] > args.tolerance:
        print(f"error: final deviation {deviations[-1]:.3e} > {args.tolerance}", file=sys.stderr)
        return 1
    print("equivalence check passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="trajguide", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed list")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--ablate", default=None,
                       help="comma list of mechanisms to grid over (irr,flf,dsg)")
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval-traj", help="score an estimated pose file against a reference")
    p_eval.add_argument("est")
    p_eval.add_argument("ref")
    p_eval.add_argument("--out", default=None, help="optional CSV output path")
    p_eval.set_defaults(func=_cmd_eval_traj)

    p_score = sub.add_parser("score-flow", help="per-channel motion similarity of two latents")
    p_score.add_argument("a")
    p_score.add_argument("b")
    p_score.add_argument("mask")
    p_score.set_defaults(func=_cmd_score_flow)

    p_eq = sub.add_parser("check-equivalence", help="ladder-vs-flow sampler deviation sweep")
    p_eq.add_argument("--steps", default="125,250,500,1000")
    p_eq.add_argument("--mean", type=float, default=0.0)
    p_eq.add_argument("--variance", type=float, default=1.0)
    p_eq.add_argument("--seed", type=int, default=0)
    p_eq.add_argument("--tolerance", type=float, default=1e-3)
    p_eq.set_defaults(func=_cmd_check_equivalence)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
