"""Compare the compiled and pure-Python trajectory kernels.

Usage: python3 benchmarks/bench_kernels.py [--trajectories M] [--steps K] [--sites N]

Both backends advance identical ensembles; the script reports the time per
trajectory-step and checks that the final states agree.
"""

import argparse
import time

import numpy as np

from ppcat import backend
from ppcat.model import SCHEMES, ModelParams
from ppcat.sde import RunConfig, advance_arrays, initial_ensemble


def run(name, params, scheme, m, steps, dt, repeats):
    cfg = RunConfig(params, scheme, dt=dt, t_final=steps * dt, n_trajectories=m,
                    n_subensembles=1)
    best = np.inf
    for _ in range(repeats):
        ens = initial_ensemble(cfg)
        t0 = time.perf_counter()
        advance_arrays(ens.alpha, ens.beta, ens.weight, ens.diverged_step, params, scheme, dt,
                       seed=1, step0=0, nsteps=steps, backend_name=name)
        best = min(best, time.perf_counter() - t0)
    return best, ens


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--sites", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    gamma = 10.0 if args.sites > 1 else 0.0
    params = ModelParams(args.sites, 1.0, 1e-3, 0.2, gamma)
    names = backend.available()
    print(f"backends: {', '.join(names)}; M={args.trajectories}, steps={args.steps}, "
          f"N={args.sites}")
    for label, scheme in SCHEMES.items():
        results = {}
        for name in names:
            elapsed, ens = run(name, params, scheme, args.trajectories, args.steps, 1e-3,
                               args.repeats)
            results[name] = (elapsed, ens)
            per = elapsed / (args.trajectories * args.steps * args.sites) * 1e9
            print(f"{label:4s} {name:7s} {elapsed:8.3f} s  {per:8.1f} ns per site-step")
        if len(results) == 2:
            a = results["cython"][1]
            b = results["python"][1]
            diff = max(np.max(np.abs(a.alpha - b.alpha)), np.max(np.abs(a.weight - b.weight)))
            speedup = results["python"][0] / results["cython"][0]
            print(f"{label:4s} speedup {speedup:6.1f}x, max |difference| {diff:.2e}")


if __name__ == "__main__":
    main()
