"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 non-convergence.

Examples
--------
    isocost solve idp --model pendulum --config desk.json --out runs/idp
    isocost solve dp --model pendulum --out runs/dp
    isocost simulate --policy runs/idp/policy.csv --x0 0.5,-0.2
    isocost compare --model pendulum --methods idp_lqr lqr dp --n-init 11 --seed 3
    isocost export --what contours --from runs/idp --out runs/idp/contours
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dp import GridSpec, ValueField, dp_policy, solve_dp
from .errors import IsoCostError, PartialSolutionError, UsageError
from .harness import METHODS, HarnessConfig, export_contours, run_comparison
from .idp import PolicySolution, SolverConfig, solve_idp
from .integrate import simulate_closed_loop
from .lqr import care_residual, lqr_for_model
from .models import available_models, get_model
from .policy import PolicyTable, build_policy_table, policy_law

log = logging.getLogger("isocost")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NOCONV = 0, 2, 3, 4


def load_config(path) -> dict:
    """Read a flat JSON object of config keys; nested values are rejected."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise UsageError(f"{path}: config must be flat, nested keys {nested}")
    return data


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _parse_x0(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"--x0 expects comma-separated numbers, got {text!r}") from None


def cmd_solve(args) -> int:
    model = get_model(args.model)
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "idp":
        scfg = SolverConfig.from_dict(cfg)
        code = EXIT_OK
        try:
            sol = solve_idp(model, scfg)
        except PartialSolutionError as exc:
            if exc.solution is None:
                raise
            sol = exc.solution
            code = EXIT_NOCONV if sol.provenance["status"] == "max_iterations" else EXIT_NUMERIC
            log.error("%s", exc)
        sol.save(out)
        table = build_policy_table(sol)
        table.save(out / "policy.csv")
        _emit({"method": "idp", "status": sol.provenance["status"], "generations": sol.iterations,
               "gamma_final": sol.fronts[-1].gamma, "samples": len(table), "out": str(out)})
        return code
    if args.method == "dp":
        spec = GridSpec.from_dict(cfg)
        vf = solve_dp(model, spec)
        vf.to_csv(out / "value.csv")
        meta = {"method": "dp", "model": args.model, "grid": spec.to_dict(), "iterations": vf.iterations,
                "residual": vf.residual, "converged": bool(vf.converged),
                "clamped_fraction": vf.clamped_fraction, "timing": vf.timing}
        (out / "dp.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        _emit({k: meta[k] for k in ("method", "iterations", "residual", "converged")})
        return EXIT_OK if vf.converged else EXIT_NOCONV
    if cfg:
        raise UsageError(f"solve lqr takes no config keys, got {sorted(cfg)}")
    problem, P, K = lqr_for_model(model)
    meta = {"method": "lqr", "model": args.model, "A": problem.A.tolist(), "B": problem.B.tolist(),
            "Q": problem.Q.tolist(), "R": problem.R.tolist(), "P": P.tolist(), "K": K.tolist(),
            "residual": care_residual(problem, P)}
    (out / "lqr.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    _emit({"method": "lqr", "K": K.tolist(), "residual": meta["residual"]})
    return EXIT_OK


def _load_law(path, model_name):
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    if first.startswith("#"):
        table = PolicyTable.load(path)
        return policy_law(table), model_name or table.label
    if model_name is None:
        raise UsageError("--model is required with a DP value file")
    return dp_policy(ValueField.from_csv(path)), model_name


def cmd_simulate(args) -> int:
    law, model_name = _load_law(args.policy, args.model)
    model = get_model(model_name)
    x0 = _parse_x0(args.x0)
    if x0.shape != (model.state_dim,):
        raise UsageError(f"--x0 needs {model.state_dim} values")
    tr = simulate_closed_loop(model, law, x0, dt=args.dt, t_max=args.t_max)
    if args.out:
        tr.to_csv(args.out)
    _emit({"model": model_name, "x0": x0.tolist(), "cost": tr.total_cost, "stop_reason": tr.stop_reason,
           "x_final": tr.x[-1].tolist(), "steps": len(tr) - 1})
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = HarnessConfig.from_flat(load_config(args.config))
    methods = [m for chunk in args.methods for m in chunk.split(",") if m]
    report = run_comparison(args.model, methods, n_init=args.n_init, seed=args.seed, config=cfg,
                            workers=args.workers)
    text = report.to_json(mask_timing=args.mask_timing) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args) -> int:
    src = Path(getattr(args, "from"))
    out = Path(args.out)
    if args.what == "contours":
        files = export_contours(PolicySolution.load(src), out)
        _emit({"what": "contours", "files": len(files), "out": str(out)})
    elif args.what == "policy":
        table = build_policy_table(PolicySolution.load(src))
        table.save(out)
        _emit({"what": "policy", "samples": len(table), "out": str(out)})
    else:
        vf = ValueField.from_csv(src / "value.csv" if src.is_dir() else src)
        vf.to_csv(out)
        _emit({"what": "value", "nodes": int(vf.values.size), "out": str(out)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isocost", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one solver and write its data files")
    s.add_argument("method", choices=("idp", "dp", "lqr"))
    s.add_argument("--model", required=True, choices=available_models())
    s.add_argument("--config", help="flat JSON of SolverConfig or GridSpec fields")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="closed-loop run from a policy or value file")
    s.add_argument("--policy", required=True, help="policy.csv from 'solve idp' or value.csv from 'solve dp'")
    s.add_argument("--x0", required=True, help="initial state, e.g. 0.5,-0.2")
    s.add_argument("--model", choices=available_models())
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--t-max", type=float, default=20.0)
    s.add_argument("--out", help="trajectory CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="closed-loop cost comparison over seeded initial states")
    s.add_argument("--model", required=True, choices=available_models())
    s.add_argument("--methods", nargs="+", default=list(METHODS), help=f"subset of {', '.join(METHODS)}")
    s.add_argument("--n-init", type=int, default=11)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--config", help="flat JSON; solver keys plain, grid keys prefixed dp_")
    s.add_argument("--out", help="report JSON path (stdout when omitted)")
    s.add_argument("--mask-timing", action="store_true", help="null out timing fields")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("export", help="re-export solved data")
    s.add_argument("--what", required=True, choices=("contours", "policy", "value"))
    s.add_argument("--from", required=True, help="output directory of a solve run")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PartialSolutionError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except IsoCostError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
