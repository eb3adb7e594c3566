"""Self-consistency suite for one spec.

Every check compares two independent routes to the same quantity and records
the measured error against a fixed threshold.  A non-defective spec is checked
through a uniformly killed copy, plus the checks that only make sense without
killing (environment statistics and limiting laws).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .errors import SnmapError
from .model import MapSpec, evaluate_F, stationary_distribution, time_reverse, validate_spec
from .potential import (
    CASES,
    analytic_mass,
    integrate_density,
    limiting_distribution,
    potential_atoms,
    potential_density,
    scenario,
    transform_identities,
)
from .precise import PreciseSpectrum, large_x_limits, to_numpy
from .scale import ScaleSet, exit_down, exit_up, reflected_passage_up
from .spectral import R_from_left_null

CHECK_KILL = 1.0
LEVELS = (1.0, 1.0)


@dataclass
class Check:
    name: str
    error: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)


def _check(name, error, threshold, **detail):
    error = float(error)
    return Check(name, error, threshold, bool(np.isfinite(error) and error <= threshold), detail)


def _maxabs(M):
    return float(np.max(np.abs(M))) if np.size(M) else 0.0


def _conj(pi, M):
    """``diag(pi)^-1 M^T diag(pi)``."""
    return (M.T * pi[None, :]) / pi[:, None]


# -- spectral and scale checks ----------------------------------------------


def check_passage(ss: ScaleSet):
    G, H, R = ss.G, ss.H, ss.R
    scale = 1.0 + _maxabs(G)
    out = [_check("F(-G)=0", ss.pm.fg_residual, 1e-8)]
    # R from left null vectors never touches H
    out.append(_check("R=H^-1 G H", _maxabs(R_from_left_null(ss.sd) - R) / scale, 1e-8))
    off = G - np.diag(np.diag(G))
    viol = max(-float(off.min()), float(G.sum(axis=1).max()), 0.0)
    eig = float(np.max(np.linalg.eigvals(G).real))
    out.append(_check("G is a sub-generator", max(viol, eig, 0.0), 1e-10))
    out.append(_check("H positive", max(-float(H.min()), 0.0), 0.0, min_entry=float(H.min())))
    return out


def check_residue_sum(ss: ScaleSet):
    """sum_k A_k = W(0) = lim alpha F(alpha)^-1 as alpha -> inf."""
    big = 1e7
    tail = big * np.linalg.inv(evaluate_F(ss.spec, big))
    err = _maxabs(ss.sd.residues.sum(axis=0).real - tail)
    return _check("residues sum to W(0)", err, 1e-5, all_brownian=ss.spec.all_brownian)


def check_transform(ss: ScaleSet, L=20.0):
    """Laplace transform of W on [0, L] plus the analytic tail equals F(alpha)^-1."""
    sd = ss.sd
    top = float(np.max(sd.roots.real))
    shift = max(0.0, top - 4.0)
    errs = {}
    for base in (5.0, 8.0, 12.0):
        al = base + shift
        val, _ = quad_vec(lambda x: np.exp(-al * x) * ss.W(x), 0.0, L, epsabs=1e-14, epsrel=1e-12, limit=4000)
        g = sd.roots
        tail = np.einsum("k,kij->ij", np.exp((g - al) * L) / (al - g), sd.residues).real
        target = np.linalg.inv(evaluate_F(ss.spec, al))
        errs[al] = _maxabs(val + tail - target) / (1.0 + _maxabs(target))
    return _check("Laplace transform of W", max(errs.values()), 1e-8, alphas=list(errs))


def check_W_prime(ss: ScaleSet, rng, h=1e-5, points=20):
    x = rng.uniform(0.05, 3.0, size=points)
    fd = (ss.W(x + h) - ss.W(x - h)) / (2 * h)
    exact = ss.W_prime(x)
    norm = np.max(np.abs(exact), axis=(1, 2)) + 1e-300
    rel = np.max(np.abs(fd - exact), axis=(1, 2)) / norm
    return _check("W' against finite differences", float(rel.max()), 1e-6)


def check_expG(ss: ScaleSet):
    worst = 0.0
    for x in (0.1, 1.0, 10.0):
        E = ss.expG(x)
        rows = E.sum(axis=1)
        worst = max(worst, -float(E.min()), float(rows.max()) - 1.0, -float(rows.min()))
    return _check("e^{Gx} substochastic", max(worst, 0.0), 1e-10)


def check_reversal(ss: ScaleSet):
    spec = ss.spec
    pi = stationary_distribution(spec.Q0)
    rev = ScaleSet(time_reverse(spec))
    err_pm = max(
        _maxabs(rev.G - _conj(pi, ss.R)),
        _maxabs(rev.R - _conj(pi, ss.G)),
        _maxabs(rev.H - _conj(pi, ss.H)),
    )
    err_F = 0.0
    for al in (0.3, 1.7, 2.9):
        err_F = max(err_F, _maxabs(evaluate_F(rev.spec, al) - _conj(pi, evaluate_F(spec, al))))
    err_W = max(_maxabs(rev.W(x) - _conj(pi, ss.W(x))) / (1 + _maxabs(ss.W(x))) for x in (0.3, 1.0, 2.0))
    return [
        _check("time reversal of F", err_F, 1e-12),
        _check("time reversal of G, R, H", err_pm, 1e-8),
        _check("time reversal of W", err_W, 1e-8),
    ]


def check_large_x(ss: ScaleSet, x=30.0, ps=None):
    ps = PreciseSpectrum(ss.sd) if ps is None else ps
    errs = large_x_limits(ps, ss.G, ss.H, ss.R, x=x)
    return _check("large-level limits", max(errs.values()), 1e-6, **errs)


def check_exit_bounds(ss: ScaleSet, a=0.5, b=0.5):
    worst = 0.0
    for M in (exit_up(ss, a, b), exit_down(ss, a), reflected_passage_up(ss, a, b)):
        worst = max(worst, -float(M.min()), float(M.sum(axis=1).max()) - 1.0)
    return _check("exit matrices substochastic", max(worst, 0.0), 1e-10)


# -- potential checks -------------------------------------------------------


def _scenarios(a, b):
    return [scenario(c, a, b) for c in CASES]


def check_nonnegative(ss: ScaleSet, a, b, grid=128):
    worst_u, worst_atom = 0.0, 0.0
    for sc in _scenarios(a, b):
        lo = -a if sc.lower is not None else -8.0
        hi = b if sc.upper is not None else 8.0
        x = np.linspace(lo, hi, grid + 2)[1:-1]
        worst_u = max(worst_u, -float(potential_density(ss, sc, x).min()))
        for atom in potential_atoms(ss, sc):
            worst_atom = max(worst_atom, -float(atom.min()))
    return [
        _check("densities nonnegative", max(worst_u, 0.0), 1e-10),
        _check("atoms nonnegative", max(worst_atom, 0.0), 1e-12),
    ]


def check_mass(ss: ScaleSet, a, b):
    """Quadrature against antiderivatives, and q U(R) = 1 under uniform killing."""
    worst_q = 0.0
    worst_obs = 0.0
    uniform = np.ptp(ss.spec.kill) == 0
    q = float(ss.spec.kill[0])
    for sc in _scenarios(a, b):
        quad, _ = integrate_density(ss, sc)
        total = quad + sum(potential_atoms(ss, sc))
        worst_q = max(worst_q, _maxabs(total - analytic_mass(ss, sc)) / (1 + _maxabs(total)))
        if uniform and "|" not in sc.case:
            worst_obs = max(worst_obs, float(np.max(np.abs(q * total.sum(axis=1) - 1.0))))
    out = [_check("mass by quadrature vs antiderivatives", worst_q, 1e-6)]
    if uniform:
        out.append(_check("mass conservation", worst_obs, 1e-6))
    return out


def check_decomposition(ss: ScaleSet, a, b, points=16):
    """Two-sided reflection splits at the first passage over b."""
    rr = scenario("[-a,b]", a, b)
    rt = scenario("[-a,b|", a, b)
    shifted = scenario("[-a,b]", a + b, 0.0)
    P = reflected_passage_up(ss, a, b)
    x = np.linspace(-a, b, points + 2)[1:-1]
    lhs = potential_density(ss, rr, x)
    rhs = potential_density(ss, rt, x) + P @ potential_density(ss, shifted, x - b)
    atom_err = _maxabs(potential_atoms(ss, rr)[1] - P @ potential_atoms(ss, shifted)[1])
    err = max(_maxabs(lhs - rhs), atom_err) / (1 + _maxabs(lhs))
    return _check("reflection split at first passage", err, 1e-8)


def check_one_sided_limits(ss: ScaleSet, a, b, far=30.0, points=12, ps=None):
    """Two-sided killing densities tend to the one-sided ones as a barrier recedes.

    ``W(a + far)`` is too ill-conditioned in double precision, so the two-sided
    densities are computed with the extended-precision spectrum.
    """
    ps = PreciseSpectrum(ss.sd) if ps is None else ps
    x = np.linspace(-a, b, points + 2)[1:-1]

    def killed(lo, hi):
        ratio = ps.W(lo) * ps.W(lo + hi) ** -1
        out = np.array([to_numpy(ratio * ps.W(hi - v)) for v in x])
        return out - ss.W(-x)

    up = _maxabs(killed(a, far) - potential_density(ss, scenario("|-a,inf)", a), x))
    down = _maxabs(killed(far, b) - potential_density(ss, scenario("(-inf,b|", b=b), x))
    return _check("receding barrier limits", max(up, down), 1e-6, upper=up, lower=down)


def check_transforms(ss: ScaleSet):
    errs = transform_identities(ss)
    return _check("one-sided transform identities", max(errs.values()), 1e-6, **errs)


# -- checks without killing -------------------------------------------------


def check_env(spec: MapSpec):
    ss = ScaleSet(spec)
    st = ss.stats
    out = [_check("pi Q0 = 0", _maxabs(st.pi @ spec.Q0), 1e-12, mu=st.mu)]
    b = 1.0
    law = limiting_distribution(ss, "two_sided", b)
    out.append(_check("two-sided limiting law has mass 1", abs(law.mass() - 1.0), 1e-8))
    kind = {-1: "one_sided_lower", 1: "one_sided_upper"}.get(st.drift_sign)
    if kind is not None:
        law = limiting_distribution(ss, kind)
        out.append(_check(f"{kind} limiting law has mass 1", abs(law.mass() - 1.0), 1e-8))
    return out


# -- Monte Carlo -------------------------------------------------------------


def check_monte_carlo(ss: ScaleSet, paths, seed=0, dt=1e-4, a=1.0, b=1.0, bins=40):
    """Occupation histograms and exit frequencies against the closed forms."""
    from . import montecarlo as mc

    cfg = mc.SimConfig(dt=dt, n_paths=paths, seed=seed, bins=bins)
    scs = _scenarios(a, b)
    emp = mc.simulate_many(ss.spec, scs, cfg)
    frac = {}
    for sc, e in zip(scs, emp):
        frac[sc.case] = mc.fraction_within(ss, e, 3.0)
    worst_frac = min(frac.values())
    ex = mc.estimate_exit_matrices(ss.spec, a, b, mc.SimConfig(dt=dt, n_paths=paths, seed=seed + 1))
    closed = mc.closed_exit_matrices(ss, a, b)
    zs = {k: mc.max_z(ex[k], closed[k]) for k in closed}
    return [
        _check("Monte Carlo histograms (fraction of bins outside 3 se)", 1.0 - worst_frac, 0.05, **frac),
        _check("Monte Carlo exit matrices (max z)", max(zs.values()), 3.0, **zs),
    ]


# -- driver -------------------------------------------------------------------


def run_suite(spec: MapSpec, paths=0, seed=0, dt=1e-4, levels=LEVELS):
    """Run every check on ``spec``; returns a JSON-ready report."""
    validate_spec(spec)
    t0 = time.perf_counter()
    a, b = levels
    checks = []
    killed = spec
    if not spec.defective:
        checks += check_env(spec)
        killed = spec.with_kill(np.full(spec.n, CHECK_KILL))
    ss = ScaleSet(killed)
    rng = np.random.default_rng(seed)
    ps = PreciseSpectrum(ss.sd)
    steps = [
        ("passage matrices", lambda: check_passage(ss)),
        ("residues sum to W(0)", lambda: check_residue_sum(ss)),
        ("Laplace transform of W", lambda: check_transform(ss)),
        ("W' against finite differences", lambda: check_W_prime(ss, rng)),
        ("e^{Gx} substochastic", lambda: check_expG(ss)),
        ("time reversal", lambda: check_reversal(ss)),
        ("large-level limits", lambda: check_large_x(ss, ps=ps)),
        ("exit matrices substochastic", lambda: check_exit_bounds(ss)),
        ("nonnegativity", lambda: check_nonnegative(ss, a, b)),
        ("mass", lambda: check_mass(ss, a, b)),
        ("reflection split at first passage", lambda: check_decomposition(ss, a, b)),
        ("receding barrier limits", lambda: check_one_sided_limits(ss, a, b, ps=ps)),
        ("one-sided transform identities", lambda: check_transforms(ss)),
    ]
    if paths:
        steps.append(("Monte Carlo", lambda: check_monte_carlo(ss, paths, seed, dt, a, b)))
    for name, step in steps:
        try:
            res = step()
        except (SnmapError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            res = Check(name, float("nan"), 0.0, False, {"error": f"{type(exc).__name__}: {exc}"})
        checks += res if isinstance(res, list) else [res]
    return {
        "defective": spec.defective,
        "checked_kill": killed.kill.tolist(),
        "levels": [a, b],
        "checks": [asdict(c) for c in checks],
        "passed": all(c.passed for c in checks),
        "seconds": time.perf_counter() - t0,
    }


__all__ = ["Check", "run_suite"]
