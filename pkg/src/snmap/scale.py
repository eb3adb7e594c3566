"""Scale matrices W, Z and the exit/hitting matrices built from them.

``W(x) = sum_k A_k exp(gamma_k x)`` is evaluated as a residue sum over all
roots of det F.  For a non-defective spec with zero asymptotic drift the
origin is a double root and contributes the linear term ``C2 x + C1``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import HUnavailable, ScaleOverflow, SingularW
from .model import EnvStats, MapSpec, drift_sign, evaluate_F, stationary_distribution, validate_spec
from .model import asymptotic_drift
from .spectral import (
    LIMIT_EPS,
    limit_nondefective,
    passage_matrices,
    solve_spectrum,
    zero_drift_passage,
    zero_drift_spectrum,
)

OVERFLOW_EXPONENT = 300.0


def _as_grid(x):
    x = np.asarray(x, dtype=float)
    return x, x.ndim == 0


class ScaleSet:
    """Immutable bundle of the spectral data of one spec and its scale evaluators.

    Every evaluator accepts a scalar (returns an ``n x n`` matrix) or an array
    of points (returns a stack of shape ``(m, n, n)``).
    """

    def __init__(self, spec: MapSpec, eps=LIMIT_EPS):
        validate_spec(spec)
        self.spec = spec
        self.F0 = evaluate_F(spec, 0.0)
        self.eps = tuple(eps)
        self.stats = None
        if spec.defective:
            self.sd = solve_spectrum(spec)
            self.pm = passage_matrices(self.sd)
            return
        pi = stationary_distribution(spec.Q0)
        mu = asymptotic_drift(spec, pi)
        if drift_sign(mu) != 0:
            self.sd = solve_spectrum(spec)
            self.pm = passage_matrices(self.sd)
        else:
            self.sd = zero_drift_spectrum(spec)
            self.pm = zero_drift_passage(self.sd)
        pi_G = stationary_distribution(self.pm.G) if drift_sign(mu) >= 0 else None
        self.stats = EnvStats(pi, mu, pi_G)

    def __repr__(self):
        return f"ScaleSet(n={self.n}, defective={self.spec.defective}, mu={self.drift_sign})"

    @property
    def n(self):
        return self.spec.n

    @property
    def drift_sign(self):
        return None if self.stats is None else self.stats.drift_sign

    @property
    def G(self):
        return self.pm.G

    @property
    def R(self):
        return self.pm.R

    @property
    def H(self):
        if self.pm.H is None:
            raise HUnavailable("H is infinite for a non-defective spec with zero drift")
        return self.pm.H

    @cached_property
    def limit(self):
        """Richardson limits of the killed quantities (non-defective specs only)."""
        if self.spec.defective:
            return None
        return limit_nondefective(self.spec, self.eps)

    @cached_property
    def R_inv_F0(self):
        """``R^-1 F(0)``, as a q -> 0 limit when R is singular."""
        if self.spec.defective or self.drift_sign < 0:
            return np.linalg.solve(self.R, self.F0)
        return self.limit.R_inv_F0

    @cached_property
    def F0_inv_R(self):
        """``F(0)^-1 R``, as a q -> 0 limit when mu > 0; infinite when mu <= 0."""
        if self.spec.defective:
            return np.linalg.solve(self.F0, self.R)
        if self.drift_sign > 0:
            return self.limit.F0_inv_R
        raise ArithmeticError("F(0)^-1 R has no finite limit unless mu > 0")

    # -- residue sums ---------------------------------------------------------

    def _check_range(self, x, idx):
        if x.size == 0 or idx.size == 0:
            return
        top = np.max(self.sd.roots[idx].real) * np.max(x)
        if top > OVERFLOW_EXPONENT:
            raise ScaleOverflow(f"max Re(gamma) x = {top:.1f} exceeds {OVERFLOW_EXPONENT:.0f}")

    def _sum(self, x, weights, idx=None, poly=None):
        """``sum_k weights_k(x) A_k`` over root indices ``idx``, zero for x < 0.

        ``poly(x, C2, C1)`` adds the double-zero-root term when present.
        """
        x, scalar = _as_grid(x)
        sd = self.sd
        idx = np.arange(sd.roots.size) if idx is None else np.asarray(idx, dtype=int)
        flat = np.atleast_1d(x)
        pos = flat >= 0
        self._check_range(flat[pos], idx)
        out = np.zeros((flat.size, self.n, self.n))
        if idx.size and pos.any():
            w = weights(flat[pos][:, None], sd.roots[idx][None, :])
            out[pos] = np.einsum("mk,kij->mij", w, sd.residues[idx]).real
        if sd.laurent is not None and poly is not None and pos.any():
            C2, C1 = sd.laurent
            out[pos] += poly(flat[pos][:, None, None], C2, C1)
        return out[0] if scalar else out

    def W(self, x):
        return self._sum(x, lambda x, g: np.exp(g * x), poly=_poly_W)

    def W_prime(self, x):
        """Right derivative of W (zero for x < 0)."""
        return self._sum(x, lambda x, g: g * np.exp(g * x), poly=_poly_Wp)

    def W_int(self, x):
        """``IW(x) = int_0^x W(y) dy``."""

        def w(x, g):
            safe = np.where(g == 0, 1.0, g)
            return np.where(g == 0, x, np.expm1(g * x) / safe)

        return self._sum(x, w, poly=_poly_IW)

    def W_rest(self, x):
        """W without the terms of the G-set roots (those cancel against e^{Gx})."""
        return self._sum(x, lambda x, g: np.exp(g * x), self._rest, poly=_poly_W)

    def W_rest_prime(self, x):
        return self._sum(x, lambda x, g: g * np.exp(g * x), self._rest, poly=_poly_Wp)

    @cached_property
    def _rest(self):
        sd = self.sd
        # with a double zero root the G-set is the positive roots plus the vector 1
        return sd.minus_set if sd.laurent is not None else sd.rest_set

    def Z(self, x):
        """``Z(x) = I - IW(x) F(0)``; equals I for x <= 0."""
        IW = self.W_int(x)
        return np.eye(self.n) - IW @ self.F0

    @cached_property
    def W0(self):
        if self.spec.all_brownian:
            # unbounded variation in every state
            return np.zeros((self.n, self.n))
        return self.W(0.0)

    @cached_property
    def W0_prime(self):
        return self.W_prime(0.0)

    def expG(self, x):
        return self._expm(self.G, x)

    def expR(self, x):
        return self._expm(self.R, x)

    @staticmethod
    def _expm(M, x):
        x, scalar = _as_grid(x)
        if scalar:
            return sla.expm(M * float(x))
        return np.array([sla.expm(M * float(v)) for v in x.ravel()])


def _poly_W(x, C2, C1):
    return C2 * x + C1


def _poly_Wp(x, C2, C1):
    return C2 + 0 * x


def _poly_IW(x, C2, C1):
    return C2 * x * x / 2 + C1 * x


def exit_up(ss: ScaleSet, a, b):
    """``P[tau_b^+ < tau_-a^-; J]`` = W(a) W(a+b)^-1."""
    if a < 0 or b < 0:
        raise ValueError("levels must be nonnegative")
    if a + b < 1e-12:
        raise SingularW("a + b is too small for W(a+b) to be invertible")
    return np.linalg.solve(ss.W(a + b).T, ss.W(a).T).T


def exit_down(ss: ScaleSet, a):
    """``P[tau_-a^- < infinity; J]`` = Z(a) - W(a) R^-1 F(0)."""
    if a < 0:
        raise ValueError("level must be nonnegative")
    return ss.Z(a) - ss.W(a) @ ss.R_inv_F0


def hitting_matrix(ss: ScaleSet, x):
    """``P[T_x < infinity; J(T_x)]`` = e^{Gx} - W(-x) H^-1."""
    if x < 0:
        # e^{Gx} H - W(-x) loses its growing terms analytically
        return -np.linalg.solve(ss.H.T, ss.W_rest(-x).T).T
    if x > 0 or not np.any(ss.W0):
        return ss.expG(x)
    return np.eye(ss.n) - np.linalg.solve(ss.H.T, ss.W0.T).T


def reflected_passage_up(ss: ScaleSet, a, b):
    """Up-passage over b of the process reflected at -a: Z(a) Z(a+b)^-1."""
    if a < 0 or b < 0:
        raise ValueError("levels must be nonnegative")
    return np.linalg.solve(ss.Z(a + b).T, ss.Z(a).T).T
