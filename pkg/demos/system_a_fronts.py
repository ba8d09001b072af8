"""Isocost fronts of the second-order example under optimal and suboptimal laws.

The solver grows fronts outward from the LQR ellipse.  The same starting
agents are then carried to the same cost levels under the closed-form
optimal law and under the perturbed comparison laws.  If the solver is
doing its job, its fronts enclose every suboptimal front and coincide with
the closed-form one.

Contours are written as CSV for external plotting; ``--plot`` also draws
them when matplotlib is installed.

    python demos/system_a_fronts.py --out runs/system_a
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from isocost import (
    SolverConfig,
    export_contours,
    front_hypervolume,
    front_radius,
    fronts_to_csv,
    get_model,
    perturbed_laws,
    propagate_front_to,
    solve_idp,
    surrounds,
)
from isocost.models import system_a_optimal_law


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--N", type=int, default=200)
    ap.add_argument("--gamma-f", type=float, default=1.0,
                    help="top level; past about 1.1 fronts cross |x2| = pi/2 where the cost degenerates")
    ap.add_argument("--dgamma", type=float, default=0.2)
    ap.add_argument("--out", default="runs/system_a")
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    model = get_model("system_a")
    sol = solve_idp(model, SolverConfig(N=args.N, gamma_f=args.gamma_f, dgamma=args.dgamma, init="lqr"))
    out = Path(args.out)
    export_contours(sol, out / "idp")
    print(f"{sol.iterations} generations, {sol.n_samples} samples, contours in {out / 'idp'}")

    step = max(1, sol.iterations // 4)
    levels = sol.fronts[step::step]
    if levels[-1] is not sol.fronts[-1]:
        levels.append(sol.fronts[-1])
    laws = {"exact": system_a_optimal_law(), **perturbed_laws(model)}
    print(f"\n{'law':>12} " + " ".join(f"gamma={f.gamma:6.3f}" for f in levels))
    law_fronts = {}
    for name, law in laws.items():
        fr, row, kept = sol.fronts[0], [], []
        for ref in levels:
            fr = propagate_front_to(model, law, fr, ref.gamma, max_backward_time=0.002)
            kept.append(fr)
            r = surrounds(ref, fr, tol=0.005 * front_radius(ref))
            row.append(f"{front_hypervolume(fr) / front_hypervolume(ref):6.3f}/{len(r.violators):<3d}")
        law_fronts[name] = kept
        fronts_to_csv(kept, out / f"law_{name}.csv")
        print(f"{name:>12} " + " ".join(f"{c:>12}" for c in row))
    print("\ncells are (law area / solver area) / agents more than 0.5% of the radius outside the solver front")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6))
        for ref in levels:
            p = ref.states[np.argsort(np.arctan2(ref.states[:, 1], ref.states[:, 0]))]
            ax.plot(*np.vstack([p, p[:1]]).T, "k-", lw=1.5)
        for j, (name, kept) in enumerate(law_fronts.items()):
            for fr in kept:
                ax.plot(*fr.alive_states.T, ".", ms=1.5, color=f"C{j}", label=name if fr is kept[0] else None)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.legend(markerscale=6, fontsize=8)
        fig.savefig(out / "fronts.png", dpi=150)
        print(f"plot written to {out / 'fronts.png'}")


if __name__ == "__main__":
    main()
