"""Spectrally negative Markov additive processes with phase-type jumps.

A :class:`MapSpec` fixes the environment generator ``Q0``, the per-state
Brownian drift and variance, killing rates, downward phase-type jumps inside
each state and downward phase-type jumps attached to environment switches.
The matrix exponent

    F(alpha)_ij = delta_ij (a_i alpha + var_i alpha^2 / 2 + lam_i (phi_i(alpha) - 1) - q_i)
                  + Q0_ij phi_ij(alpha)

is rational in ``alpha``, which is what makes the spectral machinery exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DownwardSubordinatorState,
    InvalidGenerator,
    NonPhaseTypeJump,
    TransformPole,
)

GENERATOR_TOL = 1e-10
POLE_TOL = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhaseType:
    """Phase-type law with initial vector ``beta`` and sub-generator ``T``."""

    beta: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        beta = _frozen(np.atleast_1d(self.beta))
        T = _frozen(np.atleast_2d(self.T))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "T", T)

    @classmethod
    def exponential(cls, rate):
        return cls([1.0], [[-float(rate)]])

    @classmethod
    def erlang(cls, k, rate):
        T = -rate * np.eye(k) + rate * np.eye(k, k=1)
        beta = np.zeros(k)
        beta[0] = 1.0
        return cls(beta, T)

    @classmethod
    def hyperexponential(cls, probs, rates):
        return cls(probs, -np.diag(np.asarray(rates, dtype=float)))

    @property
    def order(self):
        return self.beta.shape[0]

    @property
    def exit_vector(self):
        return -self.T.sum(axis=1)

    def check(self):
        m = self.order
        beta, T = self.beta, self.T
        if T.shape != (m, m):
            raise NonPhaseTypeJump(f"T has shape {T.shape}, expected {(m, m)}")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(T))):
            raise NonPhaseTypeJump("non-finite phase-type parameters")
        if np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-12:
            raise NonPhaseTypeJump("beta must be a probability vector without an atom at zero")
        off = T - np.diag(np.diag(T))
        if np.any(off < 0) or np.any(np.diag(T) >= 0):
            raise NonPhaseTypeJump("T must have negative diagonal and nonnegative off-diagonal")
        if np.any(self.exit_vector < -GENERATOR_TOL):
            raise NonPhaseTypeJump("T row sums must be nonpositive")
        if np.all(self.exit_vector <= GENERATOR_TOL):
            raise NonPhaseTypeJump("T has no exit to absorption")
        if np.linalg.cond(T) > 1e12:
            raise NonPhaseTypeJump("T is (numerically) singular; absorption not certain")
        return self

    @property
    def poles(self):
        return np.linalg.eigvals(self.T)

    @property
    def mean(self):
        return float(self.beta @ np.linalg.solve(-self.T, np.ones(self.order)))

    def _resolvent(self, alpha):
        m = self.order
        M = alpha * np.eye(m) - self.T
        if np.min(np.abs(alpha - self.poles)) < POLE_TOL * (1.0 + abs(alpha)):
            raise TransformPole(f"alpha={alpha} is a pole of the jump transform")
        return M

    def transform(self, alpha):
        """E[exp(-alpha Y)] for the jump magnitude Y, analytically continued."""
        M = self._resolvent(alpha)
        return self.beta @ np.linalg.solve(M, self.exit_vector.astype(M.dtype))

    def transform_derivative(self, alpha):
        M = self._resolvent(alpha)
        y = np.linalg.solve(M, self.exit_vector.astype(M.dtype))
        return -(self.beta @ np.linalg.solve(M, y))

    def matrix_transform(self, M):
        """The transform evaluated at a square matrix argument ``M``.

        Equals ``int exp(-Y M) dF(Y)``, i.e. ``(beta x I)(I x M - T x I)^-1 (t x I)``.
        """
        M = np.asarray(M)
        n = M.shape[0]
        m = self.order
        K = np.kron(np.eye(m), M) - np.kron(self.T, np.eye(n))
        rhs = np.kron(self.exit_vector[:, None], np.eye(n))
        X = np.linalg.solve(K, rhs.astype(K.dtype))
        return np.kron(self.beta[None, :], np.eye(n)) @ X

    def to_dict(self):
        return {"beta": self.beta.tolist(), "T": self.T.tolist()}


@dataclass(frozen=True, eq=False)
class StateJump:
    """Downward jumps at Poisson rate ``rate`` with magnitudes ``law``."""

    rate: float
    law: PhaseType


@dataclass(frozen=True, eq=False)
class MapSpec:
    Q0: np.ndarray
    drift: np.ndarray
    var: np.ndarray
    kill: Optional[np.ndarray] = None
    jumps: Sequence[Optional[StateJump]] = ()
    switch_jumps: Mapping[tuple, PhaseType] = field(default_factory=dict)

    def __post_init__(self):
        Q0 = _frozen(np.atleast_2d(self.Q0))
        n = Q0.shape[0]
        object.__setattr__(self, "Q0", Q0)
        object.__setattr__(self, "drift", _frozen(np.broadcast_to(self.drift, (n,))))
        object.__setattr__(self, "var", _frozen(np.broadcast_to(self.var, (n,))))
        kill = np.zeros(n) if self.kill is None else np.broadcast_to(self.kill, (n,))
        object.__setattr__(self, "kill", _frozen(kill))
        jumps = list(self.jumps) if self.jumps else [None] * n
        if len(jumps) != n:
            raise InvalidGenerator(f"jumps has {len(jumps)} entries for {n} states")
        jumps = [None if (j is None or j.rate == 0) else j for j in jumps]
        object.__setattr__(self, "jumps", tuple(jumps))
        sw = {(int(i), int(j)): law for (i, j), law in dict(self.switch_jumps).items()}
        object.__setattr__(self, "switch_jumps", MappingProxyType(sw))

    @property
    def n(self):
        return self.Q0.shape[0]

    @property
    def defective(self):
        return bool(np.max(self.kill) > 0)

    @property
    def jump_rates(self):
        return np.array([0.0 if j is None else j.rate for j in self.jumps])

    def with_kill(self, kill):
        return MapSpec(self.Q0, self.drift, self.var, kill, self.jumps, dict(self.switch_jumps))

    def nondefective(self):
        return self.with_kill(np.zeros(self.n))

    @property
    def all_brownian(self):
        return bool(np.all(self.var > 0))

    def poles(self):
        out = [j.law.poles for j in self.jumps if j is not None]
        out += [law.poles for (i, k), law in self.switch_jumps.items() if self.Q0[i, k] > 0]
        return np.concatenate(out) if out else np.zeros(0, dtype=complex)

    def __repr__(self):
        return (
            f"MapSpec(n={self.n}, drift={self.drift.tolist()}, var={self.var.tolist()}, "
            f"kill={self.kill.tolist()}, jumps={sum(j is not None for j in self.jumps)}, "
            f"switch_jumps={len(self.switch_jumps)})"
        )


@dataclass(frozen=True)
class EnvStats:
    pi: np.ndarray
    mu: float
    pi_G: Optional[np.ndarray] = None

    @property
    def drift_sign(self):
        return drift_sign(self.mu)


MU_TOL = 1e-10


def drift_sign(mu):
    if abs(mu) <= MU_TOL:
        return 0
    return 1 if mu > 0 else -1


def validate_spec(spec: MapSpec) -> MapSpec:
    """Return ``spec`` unchanged if it satisfies every model requirement."""
    Q0 = spec.Q0
    n = spec.n
    if Q0.shape != (n, n) or not np.all(np.isfinite(Q0)):
        raise InvalidGenerator(f"Q0 must be a finite square matrix, got shape {Q0.shape}")
    off = Q0 - np.diag(np.diag(Q0))
    if np.any(off < 0):
        raise InvalidGenerator("Q0 has negative off-diagonal rates")
    scale = 1.0 + np.max(np.abs(Q0))
    rows = Q0.sum(axis=1)
    if np.any(np.abs(rows) > GENERATOR_TOL * scale):
        raise InvalidGenerator(f"Q0 row sums must vanish, got {rows.tolist()}")
    if n > 1:
        ncomp, _ = connected_components(off > 0, directed=True, connection="strong")
        if ncomp != 1:
            raise InvalidGenerator("Q0 is not irreducible")
    for name in ("drift", "var", "kill"):
        v = getattr(spec, name)
        if v.shape != (n,) or not np.all(np.isfinite(v)):
            raise InvalidGenerator(f"{name} must be a finite vector of length {n}")
    if np.any(spec.var < 0):
        raise InvalidGenerator("variances must be nonnegative")
    if np.any(spec.kill < 0):
        raise InvalidGenerator("killing rates must be nonnegative")
    for i, j in enumerate(spec.jumps):
        if j is None:
            continue
        if not isinstance(j, StateJump) or not isinstance(j.law, PhaseType):
            raise NonPhaseTypeJump(f"jump law of state {i} is not phase-type")
        if not np.isfinite(j.rate) or j.rate < 0:
            raise NonPhaseTypeJump(f"jump rate of state {i} must be nonnegative")
        j.law.check()
    for (i, k), law in spec.switch_jumps.items():
        if not (0 <= i < n and 0 <= k < n) or i == k:
            raise NonPhaseTypeJump(f"switch jump attached to invalid pair {(i, k)}")
        if not isinstance(law, PhaseType):
            raise NonPhaseTypeJump(f"switch jump law on {(i, k)} is not phase-type")
        law.check()
    for i in range(n):
        if spec.var[i] == 0 and spec.drift[i] <= 0:
            raise DownwardSubordinatorState(i)
    return spec


def _phi_state(spec, i, alpha):
    j = spec.jumps[i]
    return 1.0 if j is None else j.law.transform(alpha)


def _phi_switch(spec, i, k, alpha):
    law = spec.switch_jumps.get((i, k))
    return 1.0 if law is None else law.transform(alpha)


def evaluate_F(spec: MapSpec, alpha) -> np.ndarray:
    """Matrix exponent F(alpha); complex output for complex ``alpha``."""
    n = spec.n
    dtype = complex if np.iscomplexobj(alpha) else float
    F = np.array(spec.Q0, dtype=dtype)
    lam = spec.jump_rates
    for i in range(n):
        F[i, i] += (
            spec.drift[i] * alpha
            + 0.5 * spec.var[i] * alpha**2
            + lam[i] * (_phi_state(spec, i, alpha) - 1.0)
            - spec.kill[i]
        )
    for (i, k), law in spec.switch_jumps.items():
        if spec.Q0[i, k] > 0:
            F[i, k] = spec.Q0[i, k] * law.transform(alpha)
    return F


def evaluate_F_prime(spec: MapSpec, alpha) -> np.ndarray:
    n = spec.n
    dtype = complex if np.iscomplexobj(alpha) else float
    D = np.zeros((n, n), dtype=dtype)
    for i in range(n):
        D[i, i] = spec.drift[i] + spec.var[i] * alpha
        j = spec.jumps[i]
        if j is not None:
            D[i, i] += j.rate * j.law.transform_derivative(alpha)
    for (i, k), law in spec.switch_jumps.items():
        if spec.Q0[i, k] > 0:
            D[i, k] = spec.Q0[i, k] * law.transform_derivative(alpha)
    return D


def evaluate_F_matrix(spec: MapSpec, M, side="right") -> np.ndarray:
    """F evaluated at a matrix argument.

    ``side="right"`` gives ``sum_ij E_ij f_ij(M)`` so that ``F(M) h = F(g) h`` for
    every eigenpair ``M h = g h``; ``side="left"`` gives ``sum_ij f_ij(M) E_ij``,
    the version that annihilates left eigenvectors.  ``F(-G)`` (right) and
    ``F(-R)`` (left) vanish for the first-passage matrices.
    """
    M = np.asarray(M)
    n = spec.n
    if M.shape != (n, n):
        raise ValueError(f"matrix argument must be {n}x{n}")
    I = np.eye(n)
    M2 = M @ M
    lam = spec.jump_rates
    blocks = {}
    for i in range(n):
        f = 0.5 * spec.var[i] * M2 + spec.drift[i] * M + (spec.Q0[i, i] - lam[i] - spec.kill[i]) * I
        if spec.jumps[i] is not None:
            f = f + lam[i] * spec.jumps[i].law.matrix_transform(M)
        blocks[i, i] = f
    for i in range(n):
        for k in range(n):
            if i == k or spec.Q0[i, k] == 0:
                continue
            law = spec.switch_jumps.get((i, k))
            blocks[i, k] = spec.Q0[i, k] * (I if law is None else law.matrix_transform(M))
    out = np.zeros((n, n), dtype=np.result_type(M, float))
    for (i, k), f in blocks.items():
        if side == "right":
            out[i, :] += f[k, :]
        else:
            out[:, k] += f[:, i]
    return out


def stationary_distribution(Q) -> np.ndarray:
    """Stationary row vector of an irreducible generator."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def asymptotic_drift(spec: MapSpec, pi=None) -> float:
    if pi is None:
        pi = stationary_distribution(spec.Q0)
    per_state = spec.drift.astype(float).copy()
    for i, j in enumerate(spec.jumps):
        if j is not None:
            per_state[i] -= j.rate * j.law.mean
    for (i, k), law in spec.switch_jumps.items():
        per_state[i] -= spec.Q0[i, k] * law.mean
    return float(pi @ per_state)


def env_stats(spec: MapSpec) -> EnvStats:
    """Stationary law of the environment, asymptotic drift and (for mu >= 0) pi_G.

    Quantities refer to the process without killing.
    """
    validate_spec(spec)
    pi = stationary_distribution(spec.Q0)
    mu = asymptotic_drift(spec, pi)
    pi_G = None
    if drift_sign(mu) >= 0:
        from .spectral import nondefective_G

        G = nondefective_G(spec.nondefective(), mu)
        pi_G = stationary_distribution(G)
    return EnvStats(_frozen(pi), mu, None if pi_G is None else _frozen(pi_G))


def time_reverse(spec: MapSpec) -> MapSpec:
    """The dual process with exponent diag(pi)^-1 F(alpha)^T diag(pi)."""
    pi = stationary_distribution(spec.Q0)
    Qhat = (spec.Q0.T * pi[None, :]) / pi[:, None]
    np.fill_diagonal(Qhat, np.diag(spec.Q0))
    switch = {(k, i): law for (i, k), law in spec.switch_jumps.items()}
    return MapSpec(Qhat, spec.drift, spec.var, spec.kill, spec.jumps, switch)


# -- JSON model files ------------------------------------------------------


def spec_to_dict(spec: MapSpec) -> dict:
    jumps = []
    for i, j in enumerate(spec.jumps):
        if j is not None:
            jumps.append({"state": i, "rate": float(j.rate), **j.law.to_dict()})
    switch = [
        {"from": i, "to": k, **law.to_dict()} for (i, k), law in sorted(spec.switch_jumps.items())
    ]
    return {
        "n": spec.n,
        "Q0": spec.Q0.tolist(),
        "drift": spec.drift.tolist(),
        "var": spec.var.tolist(),
        "kill": spec.kill.tolist(),
        "jumps": jumps,
        "switch_jumps": switch,
    }


def spec_from_dict(d: Mapping) -> MapSpec:
    try:
        n = int(d["n"])
        Q0 = np.asarray(d["Q0"], dtype=float)
        drift = np.asarray(d["drift"], dtype=float)
        var = np.asarray(d["var"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGenerator(f"malformed model document: {exc}") from exc
    if Q0.shape != (n, n) or drift.shape != (n,) or var.shape != (n,):
        raise InvalidGenerator("model dimensions do not match n")
    kill = np.asarray(d.get("kill", np.zeros(n)), dtype=float)
    if kill.shape != (n,):
        raise InvalidGenerator("kill must have length n")
    jumps = [None] * n
    for entry in d.get("jumps", []) or []:
        try:
            i = int(entry["state"])
            jumps[i] = StateJump(float(entry["rate"]), PhaseType(entry["beta"], entry["T"]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise NonPhaseTypeJump(f"malformed jump entry {entry!r}: {exc}") from exc
    switch = {}
    for entry in d.get("switch_jumps", []) or []:
        try:
            switch[int(entry["from"]), int(entry["to"])] = PhaseType(entry["beta"], entry["T"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NonPhaseTypeJump(f"malformed switch jump entry {entry!r}: {exc}") from exc
    return MapSpec(Q0, drift, var, kill, jumps, switch)


def load_spec(path) -> MapSpec:
    with open(path) as fh:
        return validate_spec(spec_from_dict(json.load(fh)))


def save_spec(spec: MapSpec, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec_to_dict(spec), indent=2))
    return path
