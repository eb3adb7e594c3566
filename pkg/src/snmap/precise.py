"""Extended-precision residue sums for checks at large levels.

At x = 30 the terms of W(x) span more than a hundred orders of magnitude, so
double precision cannot resolve products such as ``e^{Gx} W(x)``.  Here the
double roots are polished by Newton's method in mpmath and every quantity is
rebuilt from the polished roots and null vectors.
"""

from __future__ import annotations

import mpmath
import numpy as np
import scipy.linalg as sla

from .spectral import SpectralData


class PreciseSpectrum:
    """High-precision copy of a :class:`SpectralData` (simple roots only)."""

    def __init__(self, sd: SpectralData, dps: int = 100, newton_steps: int = 20):
        self.ctx = ctx = mpmath.MPContext()
        ctx.dps = dps
        self.spec = spec = sd.spec
        if sd.zero_index is not None:
            raise ValueError("extended-precision limits are defined for defective specs")
        self.n = spec.n
        self._laws = self._collect_laws(spec)
        roots, H, V = [], [], []
        for k in range(sd.roots.size):
            g = ctx.mpc(complex(sd.roots[k]))
            g, h = self._newton(g, sd.right_null[:, k], newton_steps, transpose=False)
            _, v = self._newton(g, sd.left_null[:, k], newton_steps, transpose=True)
            roots.append(g)
            H.append(h)
            V.append(v)
        self.roots = roots
        self.residues = []
        for g, h, v in zip(roots, H, V):
            denom = (v.T * self.F_prime(g) * h)[0]
            self.residues.append(h * v.T / denom)
        g_set = [int(k) for k in sd.g_set]
        self.g_set = g_set
        E = ctx.matrix(self.n, self.n)
        for c, k in enumerate(g_set):
            for r in range(self.n):
                E[r, c] = H[k][r]
        self._E = E
        self._Einv = E**-1
        self._gamma_g = [roots[k] for k in g_set]
        self.H = sum((self.residues[k] for k in g_set), ctx.zeros(self.n, self.n))
        self.F0 = self.F(ctx.mpf(0))

    @staticmethod
    def _collect_laws(spec):
        state = {}
        for i, j in enumerate(spec.jumps):
            if j is not None:
                state[i] = (j.rate, j.law)
        switch = {ij: law for ij, law in spec.switch_jumps.items() if spec.Q0[ij] > 0}
        return state, switch

    def _phi(self, law, alpha, deriv=False):
        ctx = self.ctx
        m = law.order
        M = ctx.matrix(m, m)
        for i in range(m):
            for j in range(m):
                M[i, j] = (alpha if i == j else 0) - law.T[i, j]
        t = ctx.matrix(law.exit_vector.tolist())
        beta = ctx.matrix([law.beta.tolist()])
        y = ctx.lu_solve(M, t)
        if deriv:
            y = -ctx.lu_solve(M, y)
        return (beta * y)[0]

    def F(self, alpha):
        ctx, spec, n = self.ctx, self.spec, self.n
        state, switch = self._laws
        out = ctx.matrix(n, n)
        for i in range(n):
            d = spec.drift[i] * alpha + ctx.mpf(spec.var[i]) / 2 * alpha**2 - spec.kill[i]
            if i in state:
                lam, law = state[i]
                d += lam * (self._phi(law, alpha) - 1)
            out[i, i] = d + spec.Q0[i, i]
            for k in range(n):
                if k == i or spec.Q0[i, k] == 0:
                    continue
                w = self._phi(switch[i, k], alpha) if (i, k) in switch else 1
                out[i, k] = spec.Q0[i, k] * w
        return out

    def F_prime(self, alpha):
        ctx, spec, n = self.ctx, self.spec, self.n
        state, switch = self._laws
        out = ctx.matrix(n, n)
        for i in range(n):
            d = spec.drift[i] + ctx.mpf(spec.var[i]) * alpha
            if i in state:
                lam, law = state[i]
                d += lam * self._phi(law, alpha, deriv=True)
            out[i, i] = d
            for k in range(n):
                if (i, k) in switch:
                    out[i, k] = spec.Q0[i, k] * self._phi(switch[i, k], alpha, deriv=True)
        return out

    def _newton(self, gamma, vec, steps, transpose):
        ctx, n = self.ctx, self.n
        h = ctx.matrix([ctx.mpc(complex(c)) for c in vec])
        c = [ctx.conj(h[i]) for i in range(n)]
        norm = sum(c[i] * h[i] for i in range(n))
        c = [ci / norm for ci in c]
        tol = ctx.mpf(10) ** (-(ctx.dps - 5))
        for _ in range(steps):
            F = self.F(gamma)
            Fp = self.F_prime(gamma)
            if transpose:
                F, Fp = F.T, Fp.T
            J = ctx.matrix(n + 1, n + 1)
            r = ctx.matrix(n + 1, 1)
            Fh = F * h
            Fph = Fp * h
            for i in range(n):
                for j in range(n):
                    J[i, j] = F[i, j]
                J[i, n] = Fph[i]
                J[n, i] = c[i]
                r[i] = -Fh[i]
            r[n] = 1 - sum(c[i] * h[i] for i in range(n))
            step = ctx.lu_solve(J, r)
            for i in range(n):
                h[i] += step[i]
            gamma += step[n]
            if abs(step[n]) < tol * (1 + abs(gamma)):
                break
        return gamma, h

    # -- evaluators; return mpmath matrices --------------------------------

    def W(self, x):
        ctx = self.ctx
        x = ctx.mpf(x)
        out = ctx.zeros(self.n, self.n)
        for g, A in zip(self.roots, self.residues):
            out += A * ctx.exp(g * x)
        return out

    def W_int(self, x):
        ctx = self.ctx
        x = ctx.mpf(x)
        out = ctx.zeros(self.n, self.n)
        for g, A in zip(self.roots, self.residues):
            out += A * (x if g == 0 else ctx.expm1(g * x) / g)
        return out

    def Z(self, x):
        return self.ctx.eye(self.n) - self.W_int(x) * self.F0

    def expG(self, x):
        ctx = self.ctx
        D = ctx.diag([ctx.exp(-g * ctx.mpf(x)) for g in self._gamma_g])
        return self._E * D * self._Einv

    def expR(self, x):
        return self.H**-1 * self.expG(x) * self.H


def to_numpy(M):
    """Real part of an mpmath matrix as a float array."""
    return np.array([[float(mpmath.re(M[i, j])) for j in range(M.cols)] for i in range(M.rows)])


def large_x_limits(ps: PreciseSpectrum, G, H, R, x=30.0, y=1.0):
    """Distances of the large-level expressions from their limits.

    ``G``, ``H`` and ``R`` are the double-precision matrices under test; the
    expressions on the left are evaluated in extended precision.
    """
    Wx = ps.W(x)
    Wxy = ps.W(x + y)
    Zx = ps.Z(x)
    F0inv = ps.F0**-1
    Wx_inv = Wx**-1
    pairs = {
        "expG_W": (ps.expG(x) * Wx, H),
        "W_expR": (Wx * ps.expR(x), H),
        "W_ratio_right": (Wx * Wxy**-1, _expm(G, y)),
        "W_ratio_left": (Wxy**-1 * Wx, _expm(R, y)),
        "Z_F0inv_Winv": (Zx * F0inv * Wx_inv, np.linalg.inv(G)),
        "Winv_Z_F0inv": (Wx_inv * Zx * F0inv, np.linalg.inv(R)),
    }
    return {k: float(np.max(np.abs(to_numpy(a) - b))) for k, (a, b) in pairs.items()}


def _expm(M, y):
    return sla.expm(M * y)


__all__ = ["PreciseSpectrum", "large_x_limits", "to_numpy"]
