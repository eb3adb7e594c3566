"""Potential densities, atoms and limiting laws of a MAP between barriers.

A scenario is one of nine barrier configurations written in bracket form:
``|`` marks a terminating barrier, ``[``/``]`` a reflecting one and
``(-inf``/``inf)`` an absent one, e.g. ``"[-1,2|"`` reflects at -1 and kills
on passing 2.  The level process starts at 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad_vec

from .errors import DriftConditionViolated, ExcludedNondefective, OutOfInterval
from .scale import ScaleSet

CASES = (
    "(-inf,inf)",
    "(-inf,b|",
    "(-inf,b]",
    "|-a,inf)",
    "[-a,inf)",
    "|-a,b|",
    "[-a,b|",
    "|-a,b]",
    "[-a,b]",
)

TRUNCATION = 1e-12
FALLBACK_WINDOW = 20.0
QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11

_NUM = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_SCENARIO_RE = re.compile(
    rf"^\s*([(\[|])\s*(-\s*inf|{_NUM})\s*,\s*(\+?\s*inf|{_NUM})\s*([)\]|])\s*$"
)


@dataclass(frozen=True)
class Barrier:
    level: float
    reflect: bool

    def __post_init__(self):
        if not np.isfinite(self.level) or self.level < 0:
            raise ValueError(f"barrier distance must be finite and nonnegative, got {self.level}")


@dataclass(frozen=True)
class BarrierScenario:
    """Barriers at ``-a`` (lower) and ``b`` (upper); ``None`` means absent."""

    lower: Optional[Barrier] = None
    upper: Optional[Barrier] = None

    def __post_init__(self):
        if self.lower is not None and self.upper is not None:
            if self.lower.level == 0 and self.upper.level == 0:
                raise ValueError("a and b cannot both be zero")

    @classmethod
    def parse(cls, text: str) -> "BarrierScenario":
        t = text.strip().lower()
        if t in ("free", "(-inf,inf)"):
            return cls()
        m = _SCENARIO_RE.match(t)
        if m is None:
            raise ValueError(f"cannot parse scenario {text!r}")
        lb, lo, hi, rb = m.groups()
        lo, hi = lo.replace(" ", ""), hi.replace(" ", "").lstrip("+")
        if (lb == "(") != (lo == "-inf") or (rb == ")") != (hi == "inf"):
            raise ValueError(f"scenario {text!r}: use '(' and ')' exactly for infinite ends")
        lower = None if lo == "-inf" else Barrier(-float(lo), lb == "[")
        upper = None if hi == "inf" else Barrier(float(hi), rb == "]")
        return cls(lower, upper)

    @property
    def a(self):
        return np.inf if self.lower is None else self.lower.level

    @property
    def b(self):
        return np.inf if self.upper is None else self.upper.level

    @property
    def case(self) -> str:
        left = "(-inf" if self.lower is None else ("[-a" if self.lower.reflect else "|-a")
        right = "inf)" if self.upper is None else ("b]" if self.upper.reflect else "b|")
        return f"{left},{right}"

    @property
    def reflects_lower(self):
        return self.lower is not None and self.lower.reflect

    @property
    def reflects_upper(self):
        return self.upper is not None and self.upper.reflect

    def __str__(self):
        if self.lower is None and self.upper is None:
            return "free"
        left = "(-inf" if self.lower is None else ("[" if self.lower.reflect else "|") + repr(-self.lower.level)
        right = "inf)" if self.upper is None else repr(self.upper.level) + ("]" if self.upper.reflect else "|")
        return f"{left},{right}"


def scenario(case: str, a=None, b=None) -> BarrierScenario:
    """Build a scenario from a case code in :data:`CASES` and levels."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    lower = None if case.startswith("(") else Barrier(float(a), case[0] == "[")
    upper = None if case.endswith(")") else Barrier(float(b), case[-1] == "]")
    return BarrierScenario(lower, upper)


# -- non-defective admission ------------------------------------------------

_EXCLUDED = {
    -1: {"[-a,inf)"},
    0: {"(-inf,inf)", "[-a,inf)", "(-inf,b]"},
    1: {"(-inf,b]"},
}


def nondefective_guard(sc: BarrierScenario, stats) -> BarrierScenario:
    """Return ``sc`` if its potential measure is finite and given by the defective formula."""
    sign = stats.drift_sign
    symbol = {-1: "μ<0", 0: "μ=0", 1: "μ>0"}[sign]
    if sc.case == "[-a,b]":
        # a doubly reflected process without killing lives forever
        raise ExcludedNondefective(sc.case, "no killing with two reflecting barriers")
    if sc.case in _EXCLUDED[sign]:
        raise ExcludedNondefective(sc.case, symbol)
    return sc


def _admit(ss: ScaleSet, sc: BarrierScenario):
    if not ss.spec.defective:
        nondefective_guard(sc, ss.stats)


# -- densities --------------------------------------------------------------


def _rsolve(A, B):
    """``A B^-1``."""
    return np.linalg.solve(B.T, A.T).T


def potential_density(ss: ScaleSet, sc: BarrierScenario, x):
    """Density ``u_I(x)`` of the potential measure; scalar x gives an n x n matrix.

    Points must lie in the open interval ``(-a, b)``; at ``x = 0`` the density
    is not unique and the formula value is returned.
    """
    _admit(ss, sc)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xs = np.atleast_1d(x)
    a, b = sc.a, sc.b
    if np.any(xs <= -a) or np.any(xs >= b) or not np.all(np.isfinite(xs)):
        raise OutOfInterval(f"points must lie in ({-a}, {b})")
    out = _DENSITY[sc.case](ss, a, b, xs)
    return out[0] if scalar else out


def _u_free(ss, a, b, x):
    out = np.empty((x.size, ss.n, ss.n))
    pos = x >= 0
    if pos.any():
        out[pos] = ss.expG(x[pos]) @ ss.H
    if (~pos).any():
        xn = x[~pos]
        out[~pos] = -ss.W_rest(-xn)
    return out


def _u_upper_term(ss, b, x):
    out = np.empty((x.size, ss.n, ss.n))
    eGb = ss.expG(b)
    pos = x >= 0
    if pos.any():
        out[pos] = eGb @ ss.W(b - x[pos])
    if (~pos).any():
        xn = x[~pos]
        out[~pos] = eGb @ ss.W_rest(b - xn) - ss.W_rest(-xn)
    return out


def _u_upper_reflect(ss, b, x):
    out = np.empty((x.size, ss.n, ss.n))
    M = -np.linalg.solve(ss.G, ss.expG(b))
    pos = x >= 0
    if pos.any():
        out[pos] = M @ ss.W_prime(b - x[pos])
    if (~pos).any():
        xn = x[~pos]
        out[~pos] = M @ ss.W_rest_prime(b - xn) - ss.W_rest(-xn)
    return out


def _u_lower_term(ss, a, b, x):
    return ss.W(a) @ ss.expR(x + a) - ss.W(-x)


def _u_lower_reflect(ss, a, b, x):
    return ss.Z(a) @ ss.F0_inv_R @ ss.expR(x + a) - ss.W(-x)


def _u_tt(ss, a, b, x):
    return _rsolve(ss.W(a), ss.W(a + b)) @ ss.W(b - x) - ss.W(-x)


def _u_rt(ss, a, b, x):
    return _rsolve(ss.Z(a), ss.Z(a + b)) @ ss.W(b - x) - ss.W(-x)


def _u_tr(ss, a, b, x):
    return _rsolve(ss.W(a), ss.W_prime(a + b)) @ ss.W_prime(b - x) - ss.W(-x)


def _u_rr(ss, a, b, x):
    M = -ss.Z(a) @ _rsolve(np.linalg.inv(ss.F0), ss.W(a + b))
    return M @ ss.W_prime(b - x) - ss.W(-x)


_DENSITY = {
    "(-inf,inf)": _u_free,
    "(-inf,b|": lambda ss, a, b, x: _u_upper_term(ss, b, x),
    "(-inf,b]": lambda ss, a, b, x: _u_upper_reflect(ss, b, x),
    "|-a,inf)": _u_lower_term,
    "[-a,inf)": _u_lower_reflect,
    "|-a,b|": _u_tt,
    "[-a,b|": _u_rt,
    "|-a,b]": _u_tr,
    "[-a,b]": _u_rr,
}


def potential_atoms(ss: ScaleSet, sc: BarrierScenario):
    """Point masses ``(U{-a}, U{b})``; nonzero only at an upper reflecting barrier."""
    _admit(ss, sc)
    n = ss.n
    zero = np.zeros((n, n))
    a, b = sc.a, sc.b
    case = sc.case
    W0 = ss.W0
    if case == "[-a,b]":
        upper = -ss.Z(a) @ _rsolve(np.linalg.inv(ss.F0), ss.W(a + b)) @ W0
    elif case == "|-a,b]":
        upper = _rsolve(ss.W(a), ss.W_prime(a + b)) @ W0
    elif case == "(-inf,b]":
        upper = -np.linalg.solve(ss.G, ss.expG(b)) @ W0
    else:
        upper = zero.copy()
    return zero.copy(), upper


# -- supports and masses ----------------------------------------------------


def _decay_rates(ss: ScaleSet):
    """Exponential decay rates of the density tails at +inf and -inf."""
    sd = ss.sd
    if sd.laurent is not None:
        return 0.0, 0.0
    g = sd.roots[sd.g_set].real
    rest = sd.roots[sd.rest_set].real
    up = float(np.min(g)) if g.size else 0.0
    down = float(np.min(-rest)) if rest.size else 0.0
    return max(up, 0.0), max(down, 0.0)


def support(ss: ScaleSet, sc: BarrierScenario):
    """Finite integration window ``(lo, hi)`` and whether truncation loses < 1e-12 of peak."""
    up, down = _decay_rates(ss)
    integrable = True
    span = np.log(1.0 / TRUNCATION)
    if sc.lower is None:
        if down > 1e-9:
            lo = -span / down
        else:
            lo, integrable = -FALLBACK_WINDOW, False
    else:
        lo = -sc.a
    if sc.upper is None:
        if up > 1e-9:
            hi = span / up
        else:
            hi, integrable = FALLBACK_WINDOW, False
        hi = max(hi, lo + 1.0)
    else:
        hi = sc.b
    return lo, hi, integrable


def _quad(f, lo, hi, n):
    pts = [lo]
    if lo < 0 < hi:
        pts.append(0.0)
    pts.append(hi)
    total = np.zeros((n, n))
    err = 0.0
    for u, v in zip(pts[:-1], pts[1:]):
        val, e = quad_vec(f, u, v, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=4000)
        total += val
        err += float(e)
    return total, err


def integrate_density(ss: ScaleSet, sc: BarrierScenario, c=-np.inf, d=np.inf, weight=None):
    """``int_{[c,d]} weight(x) u(x) dx`` over the (truncated) support, with error estimate."""
    lo, hi, _ = support(ss, sc)
    u, v = max(lo, c), min(hi, d)
    if u >= v:
        return np.zeros((ss.n, ss.n)), 0.0
    inner_lo, inner_hi = np.nextafter(-sc.a, 0.0), np.nextafter(sc.b, 0.0)

    def f(x):
        val = potential_density(ss, sc, min(max(x, inner_lo), inner_hi))
        return val if weight is None else weight(x) * val

    return _quad(f, u, v, ss.n)


def analytic_mass(ss: ScaleSet, sc: BarrierScenario):
    """Total mass ``U_I(R) = int u + atoms`` from antiderivatives of the residue sums."""
    if not ss.spec.defective:
        raise ValueError("finite total mass requires killing")
    a, b = sc.a, sc.b
    W, IW, Z, Wp = ss.W, ss.W_int, ss.Z, ss.W_prime
    F0inv = np.linalg.inv(ss.F0)
    W0 = ss.W0
    sd = ss.sd
    rest = sd.rest_set
    gr = sd.roots[rest]
    Ar = sd.residues[rest]

    def rest_int(y):
        # int_0^inf W_rest(y + s) ds
        return np.einsum("k,kij->ij", -np.exp(gr * y) / gr, Ar).real

    case = sc.case
    if case == "(-inf,inf)":
        return -np.linalg.solve(ss.G, ss.H) - rest_int(0.0)
    if case == "(-inf,b|":
        eGb = ss.expG(b)
        return eGb @ IW(b) + eGb @ rest_int(b) - rest_int(0.0)
    if case == "(-inf,b]":
        M = -np.linalg.solve(ss.G, ss.expG(b))
        return M @ (W(b) - W0) - M @ ss.W_rest(b) - rest_int(0.0) + M @ W0
    if case == "|-a,inf)":
        return -W(a) @ np.linalg.inv(ss.R) - IW(a)
    if case == "[-a,inf)":
        return -Z(a) @ ss.F0_inv_R @ np.linalg.inv(ss.R) - IW(a)
    if case == "|-a,b|":
        return _rsolve(W(a), W(a + b)) @ IW(a + b) - IW(a)
    if case == "[-a,b|":
        return _rsolve(Z(a), Z(a + b)) @ IW(a + b) - IW(a)
    if case == "|-a,b]":
        M = _rsolve(W(a), Wp(a + b))
        return M @ (W(a + b) - W0) - IW(a) + M @ W0
    M = -Z(a) @ _rsolve(F0inv, W(a + b))
    return M @ (W(a + b) - W0) - IW(a) + M @ W0


@dataclass
class PotentialResult:
    scenario: BarrierScenario
    grid: np.ndarray
    density: np.ndarray
    atom_lower: np.ndarray
    atom_upper: np.ndarray
    zero_points: np.ndarray
    truncation: tuple
    mass_check: dict = field(default_factory=dict)


def potential_grid(ss: ScaleSet, sc: BarrierScenario, grid: int = 512, mass=True) -> PotentialResult:
    """Density on ``grid`` uniform interior points of the (truncated) support, atoms and mass diagnostics."""
    if grid < 1:
        raise ValueError("grid must be positive")
    lo, hi, integrable = support(ss, sc)
    x = np.linspace(lo, hi, grid + 2)[1:-1]
    dens = potential_density(ss, sc, x)
    lower, upper = potential_atoms(ss, sc)
    zero = np.flatnonzero(np.abs(x) <= 1e-12 * max(1.0, hi - lo))
    check = {"truncated": sc.lower is None or sc.upper is None, "integrable": integrable}
    if mass:
        total, err = integrate_density(ss, sc)
        total = total + lower + upper
        check["mass"] = total
        check["quad_error"] = err
        if ss.spec.defective:
            check["observed"] = total @ np.diag(ss.spec.kill)
            check["observed_row_sums"] = check["observed"].sum(axis=1)
            check["analytic_mass"] = analytic_mass(ss, sc)
    return PotentialResult(sc, x, dens, lower, upper, zero, (lo, hi), check)


def observation_distribution(ss: ScaleSet, sc: BarrierScenario, c, d):
    """``P[X_I(T) in [c,d], J(T)] = U_I([c,d]) Delta_q`` at the first killing epoch T."""
    if not ss.spec.defective:
        raise ValueError("observation law needs a defective spec")
    if c > d:
        raise ValueError("empty interval")
    U, _ = integrate_density(ss, sc, c, d)
    lower, upper = potential_atoms(ss, sc)
    if c <= -sc.a <= d:
        U = U + lower
    if c <= sc.b <= d:
        U = U + upper
    return U @ np.diag(ss.spec.kill)


# -- limiting distributions -------------------------------------------------


@dataclass
class LimitingLaw:
    """Row-vector law: ``density(x)`` has shape ``(m, n)``, ``atom`` sits at ``atom_at``."""

    kind: str
    support: tuple
    density: object
    atom: np.ndarray
    atom_at: float

    def mass(self):
        lo, hi = self.support
        val, _ = quad_vec(lambda x: self.density(np.array([x]))[0], lo, hi,
                          epsabs=1e-13, epsrel=1e-11, limit=4000)
        return float(val.sum() + self.atom.sum())


def limiting_distribution(ss: ScaleSet, kind: str, b=None) -> LimitingLaw:
    """Long-run law of a reflected non-defective process.

    ``kind`` is ``"two_sided"`` (reflection at 0 and ``b``), ``"one_sided_lower"``
    (reflection at 0 from below; needs mu < 0) or ``"one_sided_upper"``
    (reflection at 0 from above; needs mu > 0).
    """
    if ss.spec.defective:
        raise ValueError("limiting laws are defined for non-defective specs")
    st = ss.stats
    pi = st.pi
    if kind == "two_sided":
        if b is None or b <= 0:
            raise ValueError("two_sided needs b > 0")
        row = np.linalg.solve(ss.W(b).T, pi)
        dens = lambda x: np.einsum("j,mjk->mk", row, ss.W_prime(b - np.asarray(x)))
        return LimitingLaw(kind, (0.0, float(b)), dens, row @ ss.W0, float(b))
    if kind == "one_sided_lower":
        if st.drift_sign >= 0:
            raise DriftConditionViolated("one-sided lower reflection needs mu < 0")
        row = -pi @ ss.R
        dens = lambda x: np.einsum("j,mjk->mk", row, ss.expR(np.atleast_1d(x)))
        up = float(np.min(-np.linalg.eigvals(ss.R).real))
        return LimitingLaw(kind, (0.0, np.log(1 / TRUNCATION) / up), dens, np.zeros(ss.n), 0.0)
    if kind == "one_sided_upper":
        if st.drift_sign <= 0:
            raise DriftConditionViolated("one-sided upper reflection needs mu > 0")
        row = st.mu * st.pi_G
        # pi_G annihilates the growing terms of W'
        dens = lambda x: np.einsum("j,mjk->mk", row, ss.W_rest_prime(-np.asarray(x)))
        _, down = _decay_rates(ss)
        return LimitingLaw(kind, (-np.log(1 / TRUNCATION) / down, 0.0), dens, row @ ss.W0, 0.0)
    raise ValueError(f"unknown kind {kind!r}")


# -- transform identities ---------------------------------------------------


def transform_identities(ss: ScaleSet, alphas=(0.5, 2.0)):
    """Errors of the two transform identities of the one-sided potential measures.

    ``-(int e^{alpha x} U_{(-inf,0]}(dx)) F(alpha) = I + alpha G^-1`` and
    ``-F(0) int e^{-beta x} U_{[0,inf)}(dx) = I + beta (R - beta I)^-1``.
    """
    from .model import evaluate_F

    n = ss.n
    I = np.eye(n)
    out = {}
    down = scenario("(-inf,b]", b=0.0)
    up = scenario("[-a,inf)", a=0.0)
    for al in alphas:
        M, _ = integrate_density(ss, down, weight=lambda x: np.exp(al * x))
        M = M + potential_atoms(ss, down)[1]
        lhs = -M @ evaluate_F(ss.spec, al).real
        out[f"upper_reflected_alpha={al}"] = float(np.max(np.abs(lhs - (I + al * np.linalg.inv(ss.G)))))
    for be in alphas:
        M, _ = integrate_density(ss, up, weight=lambda x: np.exp(-be * x))
        M = M + potential_atoms(ss, up)[0]
        lhs = -ss.F0 @ M
        rhs = I + be * np.linalg.inv(ss.R - be * I)
        out[f"lower_reflected_beta={be}"] = float(np.max(np.abs(lhs - rhs)))
    return out
