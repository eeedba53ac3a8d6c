"""Compare the compiled and pure-Python kernel backends on one inference run.

Usage: python benchmarks/bench_kernels.py [--horizon T] [--step h] [--repeat n]
"""
import argparse
import time

import numpy as np

from ctsmc import ObservationSet, EmissionModel, backward_pass, forward_pass, smooth
from ctsmc import CTSMCModel, EmbeddedChain, Gamma, Weibull, kernels


def _model():
    m = np.array([[0.0, 0.6, 0.4], [0.3, 0.0, 0.7], [0.5, 0.5, 0.0]])
    return CTSMCModel((Gamma(2.0, 1.5), Weibull(1.4, 0.8), Gamma(3.0, 2.5)), EmbeddedChain(m))


def _obs(horizon, rng):
    t = np.sort(rng.uniform(0, horizon, int(2 * horizon)))
    return ObservationSet.from_values(t, rng.normal(1.0, 1.0, t.size), EmissionModel([0, 1, 2], 0.4))


def run(backend, model, obs, horizon, h, repeat):
    kernels.use_backend(backend)
    best = {}
    for _ in range(repeat):
        t0 = time.perf_counter()
        fwd = forward_pass(model, obs, h=h, horizon=horizon)
        t1 = time.perf_counter()
        bwd = backward_pass(model, obs, normalizers=fwd, h=h, horizon=horizon)
        t2 = time.perf_counter()
        sm = smooth(fwd, bwd)
        t3 = time.perf_counter()
        for k, v in (("forward", t1 - t0), ("backward", t2 - t1), ("smooth", t3 - t2)):
            best[k] = min(best.get(k, np.inf), v)
    return best, sm.p_hat.values


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=2.0)
    ap.add_argument("--step", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    model, obs = _model(), _obs(args.horizon, np.random.default_rng(0))
    original = kernels.BACKEND
    res = {}
    try:
        for b in ("cython", "python"):
            try:
                res[b] = run(b, model, obs, args.horizon, args.step, args.repeat)
            except ImportError:
                print(f"{b}: not available")
    finally:
        kernels.use_backend(original)
    print(f"T={args.horizon} h={args.step} nodes={int(args.horizon / args.step) + 1}")
    print(f"{'stage':<10}" + "".join(f"{b:>12}" for b in res) + f"{'speedup':>10}")
    for stage in ("forward", "backward", "smooth"):
        row = [res[b][0][stage] for b in res]
        sp = f"{row[1] / row[0]:>9.1f}x" if len(row) == 2 else ""
        print(f"{stage:<10}" + "".join(f"{v:>11.3f}s" for v in row) + sp)
    if len(res) == 2:
        diff = np.abs(res["cython"][1] - res["python"][1]).max()
        print(f"max |p_hat difference| between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
