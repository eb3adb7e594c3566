"""Roots of det F, residues of F(alpha)^-1 and the matrices G, H, R.

The rational exponent is linearised into a pencil ``A v = gamma B v`` with
unknowns ``v = (h, gamma h over Brownian states, phase-type resolvent
blocks)``; the block elimination of the auxiliary unknowns recovers
``F(gamma) h = 0``.  Every root is then polished by Newton's method on the
bordered system and its residue ``A_k = h v^T / (v^T F'(gamma) h)`` becomes a
term of the scale matrix ``W(x) = sum_k A_k exp(gamma_k x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (
    ExtrapolationDiverged,
    RootMultiplicity,
    SingularEigenbasis,
    SpectralCountMismatch,
    TransformPole,
)
from .model import (
    EnvStats,
    MapSpec,
    asymptotic_drift,
    drift_sign,
    evaluate_F,
    evaluate_F_matrix,
    evaluate_F_prime,
    stationary_distribution,
    validate_spec,
)

MULTIPLICITY_TOL = 1e-8
RESIDUAL_TOL = 1e-10
IMAG_TOL = 1e-8
ZERO_ROOT_TOL = 1e-7
LIMIT_EPS = (1e-3, 5e-4, 2.5e-4)


@dataclass(frozen=True, eq=False)
class SpectralData:
    spec: MapSpec
    roots: np.ndarray
    right_null: np.ndarray
    left_null: np.ndarray
    residues: np.ndarray
    plus_set: np.ndarray
    minus_set: np.ndarray
    zero_index: Optional[int] = None
    mu: Optional[float] = None
    residuals: np.ndarray = field(default=None, repr=False)
    # (C2, C1) with F(alpha)^-1 ~ C2/alpha^2 + C1/alpha at a double zero root
    laurent: Optional[tuple] = None

    @property
    def n(self):
        return self.spec.n

    @property
    def g_set(self):
        """Roots whose null vectors span the eigenbasis of -G."""
        idx = list(self.plus_set)
        if self.zero_index is not None and drift_sign(self.mu) > 0:
            idx.append(self.zero_index)
        return np.array(sorted(idx, key=lambda k: self.roots[k].real), dtype=int)

    @property
    def rest_set(self):
        """Complement of :attr:`g_set`; these terms of W decay at +infinity relative to H."""
        g = set(self.g_set.tolist())
        return np.array([k for k in range(self.roots.size) if k not in g], dtype=int)


@dataclass(frozen=True, eq=False)
class PassageMatrices:
    G: np.ndarray
    H: Optional[np.ndarray]
    R: np.ndarray
    fg_residual: float = np.nan


def build_pencil(spec: MapSpec):
    """Real matrices ``(A, B)`` whose finite eigenvalues contain the roots of det F."""
    n = spec.n
    brownian = [i for i in range(n) if spec.var[i] > 0]
    w_index = {i: n + k for k, i in enumerate(brownian)}
    size = n + len(brownian)
    y_blocks = {}
    for i, j in enumerate(spec.jumps):
        if j is not None:
            y_blocks[i] = (size, j.law)
            size += j.law.order
    z_blocks = {}
    for (i, k), law in sorted(spec.switch_jumps.items()):
        if spec.Q0[i, k] > 0:
            z_blocks[i, k] = (size, law)
            size += law.order

    A = np.zeros((size, size))
    B = np.zeros((size, size))
    r = 0
    for i in brownian:
        A[r, w_index[i]] = 1.0
        B[r, i] = 1.0
        r += 1
    lam = spec.jump_rates
    for i in range(n):
        if i in w_index:
            B[r, w_index[i]] = 0.5 * spec.var[i]
        B[r, i] = spec.drift[i]
        A[r, i] = -(spec.Q0[i, i] - lam[i] - spec.kill[i])
        for k in range(n):
            if k == i or spec.Q0[i, k] == 0:
                continue
            if (i, k) in z_blocks:
                off, law = z_blocks[i, k]
                A[r, off : off + law.order] = -spec.Q0[i, k] * law.beta
            else:
                A[r, k] = -spec.Q0[i, k]
        if i in y_blocks:
            off, law = y_blocks[i]
            A[r, off : off + law.order] = -lam[i] * law.beta
        r += 1
    for i, (off, law) in y_blocks.items():
        m = law.order
        B[off : off + m, off : off + m] = np.eye(m)
        A[off : off + m, off : off + m] = law.T
        A[off : off + m, i] = law.exit_vector
    for (i, k), (off, law) in z_blocks.items():
        m = law.order
        B[off : off + m, off : off + m] = np.eye(m)
        A[off : off + m, off : off + m] = law.T
        A[off : off + m, k] = law.exit_vector
    return A, B


def _null_vectors(F):
    U, s, Vh = np.linalg.svd(F)
    h = Vh[-1].conj()
    v = U[:, -1].conj()
    return h, v, s


def _newton_refine(spec, gamma, h, iters=6):
    n = spec.n
    c = h.conj() / np.vdot(h, h)
    for _ in range(iters):
        F = evaluate_F(spec, gamma)
        Fp = evaluate_F_prime(spec, gamma)
        J = np.zeros((n + 1, n + 1), dtype=complex)
        J[:n, :n] = F
        J[:n, n] = Fp @ h
        J[n, :n] = c
        res = np.concatenate([F @ h, [c @ h - 1.0]])
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            break
        h = h + step[:n]
        gamma = gamma + step[n]
        if abs(step[n]) <= 1e-16 * (1.0 + abs(gamma)):
            break
    return gamma, h


def _realify(vec):
    k = np.argmax(np.abs(vec))
    vec = vec * (abs(vec[k]) / vec[k])
    return vec.real.astype(complex)


def _root_data(spec, gamma):
    F = evaluate_F(spec, gamma)
    h, v, s = _null_vectors(F)
    if abs(gamma.imag) <= 1e-12 * (1 + abs(gamma)):
        gamma = complex(gamma.real, 0.0)
    gamma, h = _newton_refine(spec, gamma, h)
    if abs(gamma.imag) <= 1e-12 * (1 + abs(gamma)):
        gamma = complex(gamma.real, 0.0)
    F = evaluate_F(spec, gamma)
    h, v, s = _null_vectors(F)
    if gamma.imag == 0.0:
        h, v = _realify(h), _realify(v)
    residual = np.linalg.norm(F @ h) / F_magnitude(spec, gamma)
    return gamma, h, v, residual


def F_magnitude(spec, gamma):
    """Size of the individual terms of F(gamma); the yardstick for root residuals."""
    g = abs(gamma)
    diag = (
        np.abs(spec.drift) * g
        + 0.5 * spec.var * g * g
        + 2.0 * spec.jump_rates
        + spec.kill
        + np.abs(np.diag(spec.Q0))
    )
    return float(np.linalg.norm(np.abs(spec.Q0 - np.diag(np.diag(spec.Q0))) + np.diag(diag), 2))


def solve_spectrum(spec: MapSpec, allow_zero_root: Optional[bool] = None) -> SpectralData:
    """All roots of det F with null vectors and residues of F^-1.

    Non-defective specs carry an exact zero root (null vectors ``1`` and
    ``pi``); a double zero root (zero asymptotic drift) raises
    :class:`RootMultiplicity`.
    """
    validate_spec(spec)
    if allow_zero_root is None:
        allow_zero_root = not spec.defective
    A, B = build_pencil(spec)
    eig = sla.eig(A, B, right=False)
    eig = eig[np.isfinite(eig)]
    poles = spec.poles()
    scale = 1.0 + np.max(np.abs(A))

    mu = None
    pi = None
    if not spec.defective:
        pi = stationary_distribution(spec.Q0)
        mu = asymptotic_drift(spec, pi)

    near_zero = [k for k, g in enumerate(eig) if abs(g) < ZERO_ROOT_TOL * scale]
    if not spec.defective and allow_zero_root:
        if len(near_zero) > 1 or drift_sign(mu) == 0:
            raise RootMultiplicity("zero root is repeated (zero asymptotic drift)")

    roots, hs, vs, res = [], [], [], []
    zero_index = None
    for k, g in enumerate(eig):
        g = complex(g)
        if poles.size and np.min(np.abs(g - poles)) < 1e-8 * (1 + abs(g)):
            continue
        if not spec.defective and allow_zero_root and k in near_zero:
            zero_index = len(roots)
            n = spec.n
            roots.append(0j)
            hs.append(np.ones(n, dtype=complex))
            vs.append(pi.astype(complex))
            res.append(0.0)
            continue
        try:
            gamma, h, v, r = _root_data(spec, g)
        except TransformPole:
            continue
        if r > 1e-6:
            # spurious eigenvalue of the linearisation (pole/zero cancellation)
            continue
        roots.append(gamma)
        hs.append(h)
        vs.append(v)
        res.append(r)

    return _assemble(spec, roots, hs, vs, res, zero_index, mu, spec.n if spec.defective else None, scale)


def _assemble(spec, roots, hs, vs, res, zero_index, mu, n_plus, scale, laurent=None):
    """Sort, pair and check the roots, then attach residues."""
    roots = np.array(roots, dtype=complex)
    if roots.size == 0 and laurent is None:
        raise SpectralCountMismatch("no roots found")
    order = np.lexsort((roots.imag, roots.real))
    roots = roots[order]
    H_ = np.array(hs, dtype=complex).reshape(-1, spec.n)[order].T
    V_ = np.array(vs, dtype=complex).reshape(-1, spec.n)[order].T
    res = np.array(res, dtype=float)[order]
    if zero_index is not None:
        zero_index = int(np.where(order == zero_index)[0][0])

    K = roots.size
    for a in range(K):
        for b in range(a + 1, K):
            if abs(roots[a] - roots[b]) < MULTIPLICITY_TOL * (1 + abs(roots[a])):
                raise RootMultiplicity(
                    f"roots {roots[a]:.6g} and {roots[b]:.6g} coincide; perturb the killing rates"
                )

    # enforce exact conjugate symmetry
    for a in range(K):
        if roots[a].imag > 0:
            cand = np.argmin(np.abs(roots - roots[a].conjugate()))
            if cand == a or abs(roots[cand] - roots[a].conjugate()) > 1e-6 * (1 + abs(roots[a])):
                raise SpectralCountMismatch(f"root {roots[a]} has no conjugate partner")
            roots[cand] = roots[a].conjugate()
            H_[:, cand] = H_[:, a].conj()
            V_[:, cand] = V_[:, a].conj()

    residues = np.empty((K, spec.n, spec.n), dtype=complex)
    for k in range(K):
        h, v = H_[:, k], V_[:, k]
        denom = v @ evaluate_F_prime(spec, roots[k]) @ h
        residues[k] = np.outer(h, v) / denom
        if roots[k].imag == 0.0:
            if np.max(np.abs(residues[k].imag)) > IMAG_TOL * max(np.max(np.abs(residues[k])), 1e-300):
                raise SpectralCountMismatch(f"residue of real root {roots[k]} is not real")
            residues[k] = residues[k].real

    # with killing no root lies on the imaginary axis, so the sign alone decides
    tol = 0.0 if spec.defective else ZERO_ROOT_TOL * scale
    plus = np.array([k for k in range(K) if roots[k].real > tol and k != zero_index], dtype=int)
    minus = np.array([k for k in range(K) if k not in set(plus) and k != zero_index], dtype=int)
    if n_plus is not None and plus.size != n_plus:
        raise SpectralCountMismatch(
            f"{plus.size} roots in the right half-plane, expected {n_plus}"
        )
    return SpectralData(spec, roots, H_, V_, residues, plus, minus, zero_index, mu, res, laurent)


def _real(M, what):
    M = np.asarray(M)
    if np.iscomplexobj(M):
        if np.max(np.abs(M.imag)) > IMAG_TOL * max(np.max(np.abs(M)), 1.0):
            raise SingularEigenbasis(f"{what} has a non-negligible imaginary part")
        return M.real.copy()
    return M.copy()


def passage_matrices(sd: SpectralData) -> PassageMatrices:
    """G from the right null vectors, H as the sum of right-half residues, R = H^-1 G H."""
    spec = sd.spec
    idx = sd.g_set
    if idx.size != spec.n:
        raise SpectralCountMismatch(f"{idx.size} roots available for G, expected {spec.n}")
    E = sd.right_null[:, idx]
    if np.linalg.cond(E) > 1e12:
        raise SingularEigenbasis("null vectors of the right-half roots are not independent")
    G = _real(-E @ np.diag(sd.roots[idx]) @ np.linalg.inv(E), "G")
    H = _real(sd.residues[idx].sum(axis=0), "H")
    R = np.linalg.solve(H, G @ H)
    F0 = evaluate_F(spec, 0.0)
    resid = np.linalg.norm(evaluate_F_matrix(spec, -G), 2) / max(np.linalg.norm(F0, 2), 1e-300)
    return PassageMatrices(G, H, R, float(resid))


def R_from_left_null(sd: SpectralData) -> np.ndarray:
    """Left solution of F(-R)=0 built from left null vectors (independent of H)."""
    idx = sd.g_set
    V = sd.left_null[:, idx].T
    return _real(-np.linalg.solve(V, np.diag(sd.roots[idx]) @ V), "R")


def richardson(values, ratio):
    """Extrapolate ``values`` taken at h, h/2, h/4 to h=0.

    ``ratio`` is the factor by which the leading error term shrinks when h is
    halved (2 for an expansion in h, sqrt(2) for one in sqrt(h)).
    """
    f = [np.asarray(v, dtype=float) for v in values]
    r = ratio
    l1a = (r * f[1] - f[0]) / (r - 1)
    l1b = (r * f[2] - f[1]) / (r - 1)
    l2 = (r * r * l1b - l1a) / (r * r - 1)
    return l2, float(np.max(np.abs(l2 - l1b)))


@dataclass(frozen=True, eq=False)
class NondefectiveLimit:
    """Killing-rate limits q -> 0 of a non-defective spec."""

    G: np.ndarray
    H: Optional[np.ndarray]
    R: np.ndarray
    stats: EnvStats
    pi_rows: np.ndarray
    G_rows: Optional[np.ndarray]
    R_inv_F0: np.ndarray
    F0_inv_R: Optional[np.ndarray]
    errors: dict
    power: float


def limit_nondefective(spec: MapSpec, eps=LIMIT_EPS) -> NondefectiveLimit:
    """Richardson extrapolation of the uniformly killed quantities to zero killing.

    The expansion variable is the killing rate itself when the asymptotic drift
    is nonzero and its square root when the drift vanishes (the roots near the
    origin then behave like sqrt(q)).
    """
    validate_spec(spec)
    if spec.defective:
        raise ValueError("limit_nondefective needs a spec without killing")
    n = spec.n
    pi = stationary_distribution(spec.Q0)
    mu = asymptotic_drift(spec, pi)
    sign = drift_sign(mu)
    power = 0.5 if sign == 0 else 1.0
    seq = {k: [] for k in ("G", "H", "R", "pi_rows", "G_rows", "R_inv_F0", "F0_inv_R")}
    for e in eps:
        killed = spec.with_kill(np.full(n, e))
        pm = passage_matrices(solve_spectrum(killed))
        F0 = spec.Q0 - e * np.eye(n)
        seq["G"].append(pm.G)
        seq["H"].append(pm.H)
        seq["R"].append(pm.R)
        seq["pi_rows"].append(-e * np.linalg.inv(F0))
        seq["G_rows"].append(-e * np.linalg.inv(pm.G))
        seq["R_inv_F0"].append(np.linalg.solve(pm.R, F0))
        seq["F0_inv_R"].append(np.linalg.solve(F0, pm.R))
    ratio = 2.0**power
    out, errors = {}, {}
    skip = set()
    if sign == 0:
        skip.add("H")
    if sign < 0:
        skip |= {"G_rows", "F0_inv_R"}  # infinite limits
    elif sign == 0:
        skip.add("F0_inv_R")
    for k, vals in seq.items():
        if k in skip:
            continue
        # q(qI - Q0)^-1 is analytic in q whatever the drift
        out[k], errors[k] = richardson(vals, 2.0 if k == "pi_rows" else ratio)
        scale = 1.0 + np.max(np.abs(out[k]))
        if not np.isfinite(errors[k]) or errors[k] > 1e-2 * scale:
            raise ExtrapolationDiverged(f"{k}: extrapolation error estimate {errors[k]:.3g}")
    pi_G = stationary_distribution(out["G"]) if sign >= 0 else None
    stats = EnvStats(pi, mu, pi_G)
    return NondefectiveLimit(
        out["G"],
        out.get("H"),
        out["R"],
        stats,
        out["pi_rows"],
        out.get("G_rows"),
        out["R_inv_F0"],
        out.get("F0_inv_R"),
        errors,
        power,
    )


def zero_drift_spectrum(spec: MapSpec, cluster_tol=1e-5, nodes=128) -> SpectralData:
    """Simple roots of a non-defective spec with zero drift plus the Laurent pair at 0.

    The double root at the origin contributes ``C2 x + C1`` to W; both
    coefficients are contour integrals of F^-1 over a circle that excludes
    every other root and pole (the trapezoidal rule converges geometrically).
    """
    validate_spec(spec)
    if spec.defective:
        raise ValueError("zero-drift spectrum needs a spec without killing")
    pi = stationary_distribution(spec.Q0)
    mu = asymptotic_drift(spec, pi)
    if drift_sign(mu) != 0:
        raise ValueError("asymptotic drift is not zero")
    A, B = build_pencil(spec)
    eig = sla.eig(A, B, right=False)
    eig = eig[np.isfinite(eig)]
    poles = spec.poles()
    roots, hs, vs, res = [], [], [], []
    for g in eig:
        g = complex(g)
        if abs(g) < cluster_tol:
            continue
        if poles.size and np.min(np.abs(g - poles)) < 1e-8 * (1 + abs(g)):
            continue
        try:
            gamma, h, v, r = _root_data(spec, g)
        except TransformPole:
            continue
        if r > 1e-6:
            continue
        roots.append(gamma)
        hs.append(h)
        vs.append(v)
        res.append(r)
    far = np.abs(np.concatenate([np.array(roots, dtype=complex), poles]))
    radius = 0.5 * min(1.0, float(np.min(far))) if far.size else 0.5
    alpha = radius * np.exp(2j * np.pi * (np.arange(nodes) + 0.5) / nodes)
    inv = np.array([np.linalg.inv(evaluate_F(spec, a_)) for a_ in alpha])
    C1 = _real(np.mean(inv * alpha[:, None, None], axis=0), "Laurent coefficient")
    C2 = _real(np.mean(inv * (alpha**2)[:, None, None], axis=0), "Laurent coefficient")
    return _assemble(spec, roots, hs, vs, res, None, mu, spec.n - 1, 1.0 + np.max(np.abs(A)), (C2, C1))


def zero_drift_passage(spec_or_sd) -> PassageMatrices:
    """G and R of a non-defective spec with zero asymptotic drift.

    The double root at the origin carries only the null vectors ``1`` (right)
    and ``pi`` (left); together with the n-1 positive roots they give G and R
    without any extrapolation.  H is infinite in this case.
    """
    sd = spec_or_sd if isinstance(spec_or_sd, SpectralData) else zero_drift_spectrum(spec_or_sd)
    spec = sd.spec
    n = spec.n
    pi = stationary_distribution(spec.Q0)
    plus = sd.plus_set
    gam = np.concatenate([[0j], sd.roots[plus]])
    E = np.column_stack([np.ones(n, dtype=complex), sd.right_null[:, plus]])
    V = np.vstack([pi.astype(complex), sd.left_null[:, plus].T])
    if np.linalg.cond(E) > 1e12 or np.linalg.cond(V) > 1e12:
        raise SingularEigenbasis("null vectors for zero drift are not independent")
    G = _real(-E @ np.diag(gam) @ np.linalg.inv(E), "G")
    R = _real(-np.linalg.solve(V, np.diag(gam) @ V), "R")
    resid = np.linalg.norm(evaluate_F_matrix(spec, -G), 2) / max(np.linalg.norm(spec.Q0, 2), 1e-300)
    return PassageMatrices(G, None, R, float(resid))


def nondefective_G(spec: MapSpec, mu: float) -> np.ndarray:
    """G of a non-defective spec (exact in every drift regime)."""
    if drift_sign(mu) == 0:
        return zero_drift_passage(spec).G
    return passage_matrices(solve_spectrum(spec)).G
