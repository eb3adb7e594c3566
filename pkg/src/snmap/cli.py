"""Command line entry point: ``snmap compute | simulate | validate``.

Exit codes: 0 success, 1 a validation check failed, 2 invalid input,
3 scenario excluded for a process without killing.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigTooCoarse, ExcludedNondefective, SnmapError, SpecError
from .model import evaluate_F, load_spec
from .potential import BarrierScenario, potential_grid
from .scale import ScaleSet

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_EXCLUDED = 3


class InputError(Exception):
    pass


def _num(v):
    """Shortest round-trip decimal form (JSON has no inf/nan, so those become strings)."""
    v = float(v)
    return v if np.isfinite(v) else repr(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


def write_grid_csv(path: Path, x, values, se=None):
    """Columns ``x``, then ``u_ij`` row-major, then ``se_ij`` when given."""
    m, n, _ = values.shape
    header = ["x"] + [f"u_{i}{j}" for i in range(n) for j in range(n)]
    if se is not None:
        header += [f"se_{i}{j}" for i in range(n) for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(m):
            row = [repr(float(x[k]))] + [repr(float(v)) for v in values[k].ravel()]
            if se is not None:
                row += [repr(float(v)) for v in se[k].ravel()]
            w.writerow(row)


def read_grid_csv(path):
    """Inverse of :func:`write_grid_csv`: ``(x, values, se or None)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    nu = sum(h.startswith("u_") for h in header)
    n = int(round(np.sqrt(nu)))
    x = data[:, 0]
    values = data[:, 1:1 + nu].reshape(-1, n, n)
    se = data[:, 1 + nu:].reshape(-1, n, n) if len(header) > 1 + nu else None
    return x, values, se


# -- argument handling --------------------------------------------------------


def _load(args):
    path = Path(args.model)
    if not path.is_file():
        raise InputError(f"model file {path} not found")
    try:
        return load_spec(path)
    except json.JSONDecodeError as exc:
        raise InputError(f"model file {path} is not valid JSON: {exc}") from exc


def _scenario(text):
    try:
        return BarrierScenario.parse(text)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _points(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad point list {text!r}") from exc


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, msg):
    if not args.quiet:
        print(msg)


# -- commands -----------------------------------------------------------------


def cmd_compute(args):
    spec = _load(args)
    sc = _scenario(args.scenario)
    ss = ScaleSet(spec)
    res = potential_grid(ss, sc, args.grid)
    out = _outdir(args)
    write_grid_csv(out / "density.csv", res.grid, res.density)
    write_json(out / "atoms.json", {"scenario": str(sc), "lower": res.atom_lower, "upper": res.atom_upper})
    pts = _points(args.points)
    try:
        H = ss.H
    except SnmapError:
        H = None
    matrices = {
        "F0": evaluate_F(spec, 0.0),
        "G": ss.G,
        "H": H,
        "R": ss.R,
        "W": {repr(p): ss.W(p) for p in pts},
    }
    write_json(out / "matrices.json", matrices)
    check = dict(res.mass_check)
    check["truncation"] = list(res.truncation)
    check["zero_points"] = res.zero_points
    write_json(out / "mass.json", check)
    _say(args, f"{sc}: {res.grid.size} grid points written to {out}")
    if "observed_row_sums" in check:
        _say(args, "rows of U(R) diag(q): " + " ".join(repr(float(v)) for v in check["observed_row_sums"]))
    return EXIT_OK


def cmd_simulate(args):
    from . import montecarlo as mc

    spec = _load(args)
    sc = _scenario(args.scenario)
    try:
        cfg = mc.SimConfig(dt=args.dt, n_paths=args.paths, seed=args.seed, bins=args.grid,
                           horizon=args.horizon)
        emp = mc.simulate(spec, sc, cfg)
    except (ConfigTooCoarse, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out = _outdir(args)
    write_grid_csv(out / "histogram.csv", emp.centers, np.moveaxis(emp.density, 2, 0),
                   np.moveaxis(emp.se, 2, 0))
    write_json(out / "atoms.json", {
        "scenario": str(sc),
        "eps_atom": emp.eps_atom,
        "atoms": {"lower": emp.atoms[0], "upper": emp.atoms[1]},
        "atoms_se": {"lower": emp.atoms_se[0], "upper": emp.atoms_se[1]},
        "layer": {"lower": emp.layer[0], "upper": emp.layer[1]},
    })
    write_json(out / "summary.json", {
        "edges": emp.edges,
        "paths": emp.paths,
        "lifetime": emp.lifetime,
        "lifetime_se": emp.lifetime_se,
        "exits": emp.exits,
        "exit_se": emp.exit_se,
    })
    _say(args, f"{sc}: {args.paths} paths, histogram written to {out}")
    return EXIT_OK


def cmd_validate(args):
    from .validation import run_suite

    spec = _load(args)
    report = run_suite(spec, paths=args.paths, seed=args.seed, dt=args.dt)
    out = _outdir(args)
    write_json(out / "report.json", report)
    for c in report["checks"]:
        _say(args, f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['error']:.3g} (<= {c['threshold']:g})")
    _say(args, f"{sum(c['passed'] for c in report['checks'])}/{len(report['checks'])} checks passed")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="JSON model file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true")
    p = argparse.ArgumentParser(prog="snmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compute", parents=[common], help="closed-form density, atoms and matrices")
    c.add_argument("--scenario", required=True, help='e.g. "free", "[-1,2|", "(-inf,1]"')
    c.add_argument("--grid", type=int, default=512, help="number of grid points")
    c.add_argument("--points", default="0.5,1,2", help="comma-separated levels at which W is reported")
    c.set_defaults(func=cmd_compute)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo occupation histogram")
    s.add_argument("--scenario", required=True)
    s.add_argument("--grid", type=int, default=64, help="number of histogram bins")
    s.add_argument("--paths", type=int, default=10_000)
    s.add_argument("--dt", type=float, default=1e-4)
    s.add_argument("--horizon", type=float, default=None)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", parents=[common], help="run the self-consistency suite")
    v.add_argument("--paths", type=int, default=0, help="Monte Carlo paths (0 skips the simulation checks)")
    v.add_argument("--dt", type=float, default=1e-4)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExcludedNondefective as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_EXCLUDED
    except (InputError, SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
