"""Command-line entry point: ``ctsmc <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .adaptive import AdaptiveConfig, adaptive_forward
from .experiment import ExperimentConfig, _write_chain_length, _write_currents, _write_trajectory
from .experiment import generate_random_model, run_experiment
from .hsmm import hsmm_forward_backward
from .model import load_model, sample_trajectory, save_model
from .observation import EmissionModel, read_observations_csv, sample_observations, write_observations_csv
from .posterior import smooth, viterbi_map
from .volterra import BoundaryCondition, backward_pass, forward_pass
from .waiting import Gamma


def _common(p, step=None):
    p.add_argument("--model", help="model JSON")
    p.add_argument("--obs", help="observation CSV (time,value or time,L(...))")
    p.add_argument("--config", help="JSON file mirroring ExperimentConfig")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--step", type=float, default=step, help="solver step h")
    p.add_argument("--horizon", type=float, help="horizon T")
    p.add_argument("--boundary", default="transition/uninformed",
                   help="<transition|steady>/<uninformed|transition>")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--tol", type=float, help="tolerance (mass for viterbi, error for adaptive)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctsmc", description="Latent-state inference for hidden semi-Markov chains.")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="sample a trajectory and observations"))
    _common(sub.add_parser("infer", help="forward, backward and smoothed marginals"), step=1e-3)
    _common(sub.add_parser("viterbi", help="MAP path and chain-length posterior"), step=1e-2)
    b = sub.add_parser("baseline", help="discrete-time HSMM baselines")
    b.add_argument("kind", choices=("hsmm", "adaptive"))
    _common(b, step=1e-4)
    _common(sub.add_parser("experiment", help="random-model comparison runs"), step=None)
    return ap


def _config(args) -> ExperimentConfig:
    return ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()


def _load(args, cfg):
    if not args.model:
        raise ValueError("--model is required")
    model = load_model(args.model)
    if not args.obs:
        raise ValueError("--obs is required")
    levels = cfg.levels if len(cfg.levels) == model.n_states else tuple(range(model.n_states))
    gap = np.diff(np.sort(levels)).min()
    std = cfg.emission_std if levels == cfg.levels else 0.25 * gap
    obs = read_observations_csv(args.obs, EmissionModel(np.array(levels, float), std), model.n_states)
    horizon = args.horizon if args.horizon is not None else cfg.horizon
    return model, obs, horizon, BoundaryCondition.parse(args.boundary)


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def cmd_simulate(args, cfg):
    horizon = args.horizon if args.horizon is not None else cfg.horizon
    rng = np.random.default_rng(args.seed or 0)
    model = load_model(args.model) if args.model else generate_random_model(cfg, rng)
    if not args.model:
        save_model(model, os.path.join(args.out, "model.json"))
    traj = sample_trajectory(model, horizon, rng)
    obs = sample_observations(traj, cfg.emission, Gamma(*cfg.renewal), rng)
    _write_trajectory(traj, os.path.join(args.out, "trajectory.csv"))
    write_observations_csv(obs, os.path.join(args.out, "observations.csv"))
    print(f"{traj.n_jumps} jumps, {len(obs)} observations -> {args.out}")


def cmd_infer(args, cfg):
    model, obs, horizon, bc = _load(args, cfg)
    fwd = forward_pass(model, obs, bc, h=args.step, horizon=horizon)
    bwd = backward_pass(model, obs, bc, fwd, h=args.step, horizon=horizon)
    sm = smooth(fwd, bwd, model)
    fwd.alpha.to_csv(os.path.join(args.out, "filtered.csv"))
    bwd.beta.to_csv(os.path.join(args.out, "backward.csv"))
    sm.p_hat.to_csv(os.path.join(args.out, "smoothed.csv"))
    _write_currents(fwd, os.path.join(args.out, "currents.csv"))
    _write_json(os.path.join(args.out, "evidence.json"),
                {"log_evidence": fwd.log_evidence, "normalizers": fwd.normalizers.tolist()})
    print(f"log evidence {fwd.log_evidence:.10g}")


def cmd_viterbi(args, cfg):
    model, obs, horizon, bc = _load(args, cfg)
    res = viterbi_map(model, obs, bc=bc, h=args.step, horizon=horizon,
                      mass_tol=args.tol if args.tol is not None else 1e-6)
    res.to_csv(os.path.join(args.out, "map_path.csv"))
    _write_chain_length(res.chain_length_posterior, os.path.join(args.out, "chain_length.csv"))
    _write_json(os.path.join(args.out, "viterbi.json"),
                {"map_log_score": res.map_log_score, "n_jumps": res.n_jumps,
                 "truncation_mass": res.truncation_mass})
    print(f"MAP path with {res.n_jumps} jumps, log score {res.map_log_score:.10g}")


def cmd_baseline(args, cfg):
    model, obs, horizon, bc = _load(args, cfg)
    if args.kind == "hsmm":
        res = hsmm_forward_backward(model, obs, h=args.step, horizon=horizon, bc=bc)
        res.filtered.to_csv(os.path.join(args.out, "hsmm_filtered.csv"))
        res.smoothed.to_csv(os.path.join(args.out, "hsmm_smoothed.csv"))
        ev = res.log_evidence
    else:
        acfg = AdaptiveConfig(tol=args.tol if args.tol is not None else 1e-6, h_init=args.step)
        res = adaptive_forward(model, obs, acfg, horizon=horizon, bc=bc)
        res.alpha.to_csv(os.path.join(args.out, "adaptive_filtered.csv"))
        res.grid_to_csv(os.path.join(args.out, "adaptive_grid.csv"))
        ev = res.log_evidence
    print(f"{args.kind}: log evidence {ev:.10g}")


def cmd_experiment(args, cfg):
    over = {}
    if args.step is not None:
        over["step"] = args.step
    if args.horizon is not None:
        over["horizon"] = args.horizon
    if args.out != ".":
        over["out_dir"] = args.out
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    if args.tol is not None:
        over["adaptive_tol"] = args.tol
    if args.boundary != "transition/uninformed":
        over["boundary"] = args.boundary
    data = {**cfg.to_dict(), **over}
    manifest = run_experiment(ExperimentConfig(**data))
    n_ok = len(manifest["runs"]) - manifest["n_failed"]
    print(f"{n_ok}/{len(manifest['runs'])} runs succeeded -> {data['out_dir']}")
    for r in manifest["runs"]:
        if r["status"] != "ok":
            print(f"seed {r['seed']}: {r['error']}", file=sys.stderr)
    return 0 if n_ok else 1


COMMANDS = {"simulate": cmd_simulate, "infer": cmd_infer, "viterbi": cmd_viterbi,
            "baseline": cmd_baseline, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command != "experiment":
            os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg) or 0
    except (ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
