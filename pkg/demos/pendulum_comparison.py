"""Closed-loop cost and timing comparison on the inverted pendulum.

Four controllers are built for the pendulum: the isocost solver started from
random points and from the LQR ellipse, the clipped LQR law, and grid value
iteration.  Each is run from the same seeded initial states and the mean
cumulative cost is printed, followed by solve times.

The default is desk scale (200 agents up to cost 50, a 25 x 25 x 15 grid),
which takes a couple of minutes.  ``--full`` switches to the published
settings (600 agents, gamma_0 = 0.1, R_0 = 0.01, gamma_f = 250, a
40 x 40 x 30 grid); expect that to run for a long time.

    python demos/pendulum_comparison.py --seed 0 --out runs/pendulum.json
"""

from __future__ import annotations

import argparse
import time

from isocost import GridSpec, HarnessConfig, SolverConfig, run_comparison
from isocost.harness import METHODS


def full_scale() -> HarnessConfig:
    solver = SolverConfig(N=600, gamma0=0.1, R0=0.01, gamma_f=250.0, resample=True)
    return HarnessConfig(solver=solver, grid=GridSpec(x_points=(40, 40), u_points=30))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-init", type=int, default=11)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--full", action="store_true", help="published problem size")
    ap.add_argument("--out", help="write the JSON report here")
    args = ap.parse_args()

    cfg = full_scale() if args.full else HarnessConfig()
    t0 = time.perf_counter()
    rep = run_comparison("pendulum", METHODS, n_init=args.n_init, seed=args.seed, config=cfg,
                         workers=args.workers)
    print(f"finished in {time.perf_counter() - t0:.0f} s, "
          f"initial states within radius {rep.config['ic_radius_resolved']:.3f}\n")

    dp = rep.averages["dp"]
    print(f"{'method':>11} {'mean cost':>10} {'vs dp':>7} {'solve s':>8} {'iterations':>10} {'s/iter':>9}")
    for m in METHODS:
        a = rep.averages[m]
        t = rep.timing["solve"][m]
        print(f"{m:>11} {a:10.3f} {100 * (a / dp - 1):+6.1f}% {t['total_s']:8.2f} "
              f"{rep.solve[m]['iterations']:10d} {t['per_iteration_s']:9.2e}")
    print("\nranking:", " < ".join(rep.ranking))
    for m, n in rep.policy_fallbacks.items():
        print(f"{m}: {n} table queries fell outside the sampled band")
    failed = {m: len(f) for m, f in rep.failures.items() if f}
    if failed:
        print("diverged runs:", failed)
    if args.out:
        rep.save(args.out)
        print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
