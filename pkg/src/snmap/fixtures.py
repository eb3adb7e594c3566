"""Reference specs used throughout the tests and the validation suite."""

from __future__ import annotations

import numpy as np

from .errors import SnmapError
from .model import MapSpec, PhaseType, StateJump


def bm1(q=1.0):
    """Scalar Brownian motion with variance 2, no drift, killed at rate q."""
    return MapSpec([[0.0]], [0.0], [2.0], [q])


def mm2(q=(1.0, 1.0)):
    """Two-state Markov-modulated Brownian motion with drifts (1, -2)."""
    return MapSpec([[-1.0, 1.0], [1.0, -1.0]], [1.0, -2.0], [2.0, 2.0], q)


def drifted_bm(drift, var=2.0, q=0.0):
    return MapSpec([[0.0]], [drift], [var], [q])


def bounded_variation(q=(1.0, 1.0)):
    """State 0 has no Brownian part (drift 1, exponential jumps); state 1 is Brownian."""
    return MapSpec(
        [[-1.0, 1.0], [1.0, -1.0]],
        [1.0, -2.0],
        [0.0, 2.0],
        q,
        [StateJump(1.0, PhaseType.exponential(2.0)), None],
    )


def _random_law(rng):
    kind = rng.integers(3)
    if kind == 0:
        return PhaseType.exponential(rng.uniform(1.0, 4.0))
    if kind == 1:
        return PhaseType.erlang(2, rng.uniform(2.0, 6.0))
    p = rng.uniform(0.2, 0.8)
    return PhaseType.hyperexponential([p, 1 - p], rng.uniform(1.0, 5.0, size=2))


def _random_candidate(rng, n):
    Q0 = rng.uniform(0.3, 1.5, size=(n, n))
    # sparsify but keep a cycle so the chain stays irreducible
    mask = rng.random((n, n)) < 0.3
    for i in range(n):
        mask[i, (i + 1) % n] = False
    Q0[mask] = 0.0
    np.fill_diagonal(Q0, 0.0)
    np.fill_diagonal(Q0, -Q0.sum(axis=1))
    var = np.where(rng.random(n) < 0.7, rng.uniform(0.5, 2.5, size=n), 0.0)
    var[0] = max(var[0], 0.8)  # at least one Brownian state
    drift = rng.uniform(-1.5, 1.5, size=n)
    drift[var == 0] = rng.uniform(0.5, 1.5, size=int(np.sum(var == 0)))
    jumps = [
        StateJump(rng.uniform(0.2, 1.5), _random_law(rng)) if rng.random() < 0.6 else None
        for _ in range(n)
    ]
    if all(j is None for j in jumps):
        jumps[rng.integers(n)] = StateJump(rng.uniform(0.2, 1.5), _random_law(rng))
    switch = {}
    for i in range(n):
        for k in range(n):
            if i != k and Q0[i, k] > 0 and rng.random() < 0.25:
                switch[i, k] = _random_law(rng)
    kill = rng.uniform(0.2, 1.0, size=n)
    return MapSpec(Q0, drift, var, kill, jumps, switch)


def _well_conditioned(spec):
    from .spectral import passage_matrices, solve_spectrum

    sd = solve_spectrum(spec)
    passage_matrices(sd)
    r = sd.roots
    plus = r[sd.plus_set].real
    minus = r[sd.minus_set].real
    if plus.max() > 4.5 or plus.min() < 0.6 or (-minus).min() < 0.3:
        return False
    gaps = np.abs(r[:, None] - r[None, :]) + np.eye(r.size) * 1e9
    return gaps.min() > 1e-2


def random_defective_spec(seed, n=None, max_tries=500):
    """Random defective spec with mixed Brownian and phase-type-jump states.

    Draws are rejected until the roots are well separated and lie in a band
    that keeps the large-level checks inside double range.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        m = int(rng.integers(2, 5)) if n is None else n
        spec = _random_candidate(rng, m)
        try:
            if _well_conditioned(spec):
                return spec
        except SnmapError:
            continue
    raise RuntimeError(f"no well-conditioned spec after {max_tries} draws")
