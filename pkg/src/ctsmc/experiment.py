"""Random-model experiments: simulate, infer, compare against the oracles."""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone

import numpy as np

from .adaptive import AdaptiveConfig, adaptive_forward
from .hsmm import hsmm_forward_backward
from .model import CTSMCModel, EmbeddedChain, sample_trajectory, save_model, validate_model
from .observation import EmissionModel, ObservationSet, sample_observations, write_observations_csv
from .posterior import smooth, viterbi_map
from .volterra import BoundaryCondition, backward_pass, forward_pass
from .waiting import Exponential, Gamma, Weibull

__all__ = ["ExperimentConfig", "generate_random_model", "run_experiment", "run_single"]

FAMILIES = ("gamma", "weibull", "exponential")


@dataclass
class ExperimentConfig:
    n_states: int = 3
    families: tuple = ("gamma", "weibull")
    # (shape, rate) of the Gamma hyperprior for each distribution parameter
    hyper_shape: tuple = (4.0, 2.0)
    hyper_rate: tuple = (4.0, 2.0)
    hyper_scale: tuple = (4.0, 4.0)
    renewal: tuple = (4.0, 8.0)
    levels: tuple = None  # default 0..n-1
    emission_std: float = None  # default 0.25 x smallest level gap
    horizon: float = 10.0
    step: float = 1e-3
    oracle_step: float = 1e-4
    viterbi_step: float = 1e-2
    adaptive_tol: float = 1e-6
    boundary: str = "transition/uninformed"
    seeds: tuple = (0,)
    out_dir: str = "experiment_out"
    workers: int = 1

    def __post_init__(self):
        self.families = tuple(self.families)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.n_states < 2:
            raise ValueError("n_states must be >= 2")
        bad = set(self.families) - set(FAMILIES)
        if not self.families or bad:
            raise ValueError(f"families must be a non-empty subset of {FAMILIES}")
        for name in ("hyper_shape", "hyper_rate", "hyper_scale", "renewal"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2 or min(v) <= 0:
                raise ValueError(f"{name} needs two positive numbers")
            setattr(self, name, v)
        if self.levels is None:
            self.levels = tuple(float(i) for i in range(self.n_states))
        self.levels = tuple(float(b) for b in self.levels)
        if len(self.levels) != self.n_states:
            raise ValueError("one emission level per state required")
        if self.emission_std is None:
            gaps = np.diff(np.sort(self.levels))
            gap = gaps.min() if gaps.size and gaps.min() > 0 else 1.0
            self.emission_std = 0.25 * float(gap)
        for name in ("emission_std", "horizon", "step", "oracle_step", "viterbi_step", "adaptive_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        BoundaryCondition.parse(self.boundary)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def emission(self) -> EmissionModel:
        return EmissionModel(np.array(self.levels), self.emission_std)

    @property
    def bc(self) -> BoundaryCondition:
        return BoundaryCondition.parse(self.boundary)


def _draw(rng, shape_rate):
    k, r = shape_rate
    return float(rng.gamma(k, 1.0 / r))


def generate_random_model(cfg: ExperimentConfig, seed) -> CTSMCModel:
    rng = np.random.default_rng(seed)
    S = cfg.n_states
    waiting = []
    for _ in range(S):
        fam = cfg.families[rng.integers(len(cfg.families))]
        if fam == "gamma":
            waiting.append(Gamma(_draw(rng, cfg.hyper_shape), _draw(rng, cfg.hyper_rate)))
        elif fam == "weibull":
            waiting.append(Weibull(_draw(rng, cfg.hyper_shape), _draw(rng, cfg.hyper_scale)))
        else:
            waiting.append(Exponential(_draw(rng, cfg.hyper_rate)))
    m = rng.uniform(size=(S, S))
    np.fill_diagonal(m, 0.0)
    m /= m.sum(axis=1, keepdims=True)
    model = CTSMCModel(tuple(waiting), EmbeddedChain(m))
    problems = validate_model(model)
    if problems:
        raise ValueError("; ".join(problems))
    return model


def _write_trajectory(traj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["jump_time", "state"])
        for t, x in zip(traj.jump_times, traj.states):
            w.writerow([repr(float(t)), int(x)])


def _write_currents(fwd, path):
    names = fwd.model.states
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"phi({s})" for s in names] + [f"psi({s})" for s in names])
        for t, a, b in zip(fwd.grid.nodes, fwd.phi_alpha.values, fwd.psi_alpha.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in a] + [repr(float(v)) for v in b])


def _write_chain_length(probs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "probability"])
        for n, p in enumerate(probs):
            w.writerow([n, repr(float(p))])


def _gap(f, g, t) -> float:
    return float(np.max(np.abs(f(t) - g(t))))


def run_single(cfg: ExperimentConfig, seed: int) -> dict:
    """One seed end to end; every artifact goes to ``<out_dir>/seed_<seed>``."""
    out = os.path.join(cfg.out_dir, f"seed_{seed}")
    os.makedirs(out, exist_ok=True)
    record = {"seed": seed, "status": "ok", "files": [], "runtimes": {}}

    def emit(name, writer, *args):
        path = os.path.join(out, name)
        writer(*args, path)
        record["files"].append(os.path.relpath(path, cfg.out_dir))

    def timed(key, fn, *args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        record["runtimes"][key] = time.perf_counter() - t0
        return res

    try:
        rng = np.random.default_rng(seed)
        model = generate_random_model(cfg, rng)
        traj = sample_trajectory(model, cfg.horizon, rng)
        renewal = Gamma(*cfg.renewal)
        obs = sample_observations(traj, cfg.emission, renewal, rng)
        # put observations on the oracle lattice so all solvers see identical times
        h_o = cfg.oracle_step
        n_max = int(round(cfg.horizon / h_o)) - 1
        obs = ObservationSet(h_o * np.minimum(np.rint(obs.times / h_o), n_max), obs.likelihoods, obs.values)
        bc = cfg.bc
        emit("model.json", save_model, model)
        emit("trajectory.csv", _write_trajectory, traj)
        emit("observations.csv", write_observations_csv, obs)

        fwd = timed("forward", forward_pass, model, obs, bc, h=cfg.step, horizon=cfg.horizon)
        bwd = timed("backward", backward_pass, model, obs, bc, fwd, h=cfg.step, horizon=cfg.horizon)
        sm = timed("smooth", smooth, fwd, bwd, model)
        vit = timed("viterbi", viterbi_map, model, obs, bc=bc, h=cfg.viterbi_step, horizon=cfg.horizon)
        ref = timed("hsmm", hsmm_forward_backward, model, obs, h=h_o, horizon=cfg.horizon, bc=bc)
        acfg = AdaptiveConfig(tol=cfg.adaptive_tol)
        ada = timed("adaptive", adaptive_forward, model, obs, acfg, horizon=cfg.horizon, bc=bc)

        emit("currents.csv", _write_currents, fwd)
        emit("filtered.csv", fwd.alpha.to_csv)
        emit("smoothed.csv", sm.p_hat.to_csv)
        emit("map_path.csv", vit.to_csv)
        emit("chain_length.csv", _write_chain_length, vit.chain_length_posterior)
        emit("hsmm_smoothed.csv", ref.smoothed.to_csv)
        emit("adaptive_filtered.csv", ada.alpha.to_csv)
        emit("adaptive_grid.csv", ada.grid_to_csv)

        union = np.union1d(fwd.grid.nodes, ada.times)
        record.update(
            n_obs=len(obs),
            n_jumps=int(traj.n_jumps),
            gap_smoothed=_gap(sm.p_hat, ref.smoothed, union),
            gap_filtered=_gap(fwd.alpha, ref.filtered, union),
            gap_adaptive=_gap(ada.alpha, ref.filtered, ada.times),
            log_evidence=fwd.log_evidence,
            log_evidence_hsmm=ref.log_evidence,
            log_evidence_adaptive=ada.log_evidence,
            adaptive_steps=ada.n_steps,
            map_log_score=vit.map_log_score,
            map_jumps=vit.n_jumps,
        )
    except Exception as exc:  # recorded per run; the experiment continues
        record["status"] = "error"
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


COMPARISON_COLUMNS = (
    "seed", "status", "n_obs", "n_jumps", "gap_smoothed", "gap_filtered", "gap_adaptive",
    "log_evidence", "log_evidence_hsmm", "log_evidence_adaptive", "adaptive_steps",
    "map_log_score", "map_jumps",
)
RUNTIME_KEYS = ("forward", "backward", "smooth", "viterbi", "hsmm", "adaptive")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else ("" if v is None else str(v))


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every seed, write comparison and runtime tables plus a manifest."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(run_single, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        records = [run_single(cfg, s) for s in cfg.seeds]

    comp = os.path.join(cfg.out_dir, "comparison.csv")
    with open(comp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.get(c)) for c in COMPARISON_COLUMNS])
    # wall-clock times live apart from the comparison so that table stays reproducible
    rt = os.path.join(cfg.out_dir, "runtimes.csv")
    with open(rt, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed",) + tuple(f"{k}_s" for k in RUNTIME_KEYS))
        for r in records:
            w.writerow([r["seed"]] + [_fmt(r["runtimes"].get(k)) for k in RUNTIME_KEYS])

    files = ["comparison.csv", "runtimes.csv"] + [f for r in records for f in r["files"]]
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "assumed_defaults": {
            "hyper_shape": cfg.hyper_shape,
            "hyper_rate": cfg.hyper_rate,
            "hyper_scale": cfg.hyper_scale,
            "renewal": cfg.renewal,
            "emission_std": cfg.emission_std,
        },
        "runs": [
            {k: r.get(k) for k in ("seed", "status", "error", "files")} for r in records
        ],
        "files": files,
        "n_failed": sum(r["status"] != "ok" for r in records),
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    manifest["records"] = records
    return manifest
