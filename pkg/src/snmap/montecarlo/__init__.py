"""Monte Carlo oracle: empirical potential measures, atoms and exit matrices.

Every path owns three Philox streams (Brownian increments, environment events,
bridge extremes) keyed by the seed and counted by the path index, so results
are bit-reproducible and do not depend on how paths are scheduled.  Several
barrier scenarios can be estimated from the same paths (common random numbers),
see :func:`simulate_many`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from ..errors import ConfigTooCoarse
from ..model import MapSpec, stationary_distribution, time_reverse, validate_spec
from ..potential import BarrierScenario, scenario
from . import kernel as K
from .compare import bin_average, closed_exit_matrices, fraction_within, max_z, z_scores

STREAMS = ("brownian", "events", "bridge")
SURVIVAL_TARGET = 1e-4
DEFAULT_SPAN = 4.0


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``n_paths`` is the total number of paths; with ``start_state=None`` they are
    split evenly over the start states so every row of the output is estimated.
    ``start_state`` may also be an index or a probability vector.  ``horizon``
    defaults (defective specs only) to the time by which the unkilled mass of
    the environment drops below 1e-4.  ``substeps`` groups that many steps of
    length ``dt`` into one step, which keeps the Brownian path of a run with
    step ``2 dt`` coupled to the run with step ``dt``.  ``window`` sets the
    histogram range where a barrier is absent.
    """

    dt: float = 1e-4
    horizon: Optional[float] = None
    n_paths: int = 10_000
    seed: int = 0
    start_level: float = 0.0
    start_state: Union[None, int, Sequence[float]] = None
    bins: int = 64
    window: Optional[tuple] = None
    substeps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.bins < 1 or self.substeps < 1:
            raise ValueError("bins and substeps must be positive")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def step(self):
        return self.dt * self.substeps


@dataclass
class EmpiricalPotential:
    """Empirical occupation measure of one scenario.

    ``density[i, j, m]`` is the expected time spent in bin ``m`` and state
    ``j`` per unit length, starting from state ``i``; ``se`` its standard
    error.  ``atoms[side, i, j]`` (side 0 lower, 1 upper) is the expected time
    held exactly at a reflecting barrier; ``layer`` the time within
    ``eps_atom`` of it and ``pushed`` the total length of steps in which the
    regulator acted.  ``exits[code]`` holds ``P[outcome, J = j]`` per start
    state with standard errors in ``exit_se``.
    """

    scenario: BarrierScenario
    edges: np.ndarray
    density: np.ndarray
    se: np.ndarray
    atoms: np.ndarray
    atoms_se: np.ndarray
    layer: np.ndarray
    pushed: np.ndarray
    lifetime: np.ndarray
    lifetime_se: np.ndarray
    paths: np.ndarray
    eps_atom: float
    exits: dict = field(default_factory=dict)
    exit_se: dict = field(default_factory=dict)
    outcome: dict = field(default_factory=dict)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self):
        return float(self.edges[1] - self.edges[0])

    def mass(self):
        """Binned occupation plus atoms, per start and end state."""
        return self.density.sum(axis=2) * self.width + self.atoms.sum(axis=0)


# -- packing ---------------------------------------------------------------


def _pack_model(spec: MapSpec):
    n = spec.n
    laws, sw_law = [], np.full((n, n), -1, dtype=np.int64)
    jump_law = np.full(n, -1, dtype=np.int64)
    for (i, k), law in spec.switch_jumps.items():
        if spec.Q0[i, k] > 0:
            sw_law[i, k] = len(laws)
            laws.append(law)
    lam = np.zeros(n)
    for i, jmp in enumerate(spec.jumps):
        if jmp is not None and jmp.rate > 0:
            jump_law[i] = len(laws)
            laws.append(jmp.law)
            lam[i] = jmp.rate
    m = max([law.order for law in laws], default=1)
    L = max(len(laws), 1)
    beta_cdf = np.ones((L, m))
    ph_rates = np.ones((L, m))
    next_cdf = np.ones((L, m, m))
    orders = np.ones(L, dtype=np.int64)
    for idx, law in enumerate(laws):
        o = law.order
        orders[idx] = o
        beta_cdf[idx, :o] = np.cumsum(law.beta / law.beta.sum())
        out = -np.diag(law.T)
        ph_rates[idx, :o] = out
        P = law.T / out[:, None]
        np.fill_diagonal(P, 0.0)
        next_cdf[idx, :o, :o] = np.cumsum(P, axis=1)
    off = spec.Q0 - np.diag(np.diag(spec.Q0))
    kill = np.asarray(spec.kill, dtype=float)
    rate = off.sum(axis=1) + lam + kill
    probs = np.column_stack([kill, off, lam])
    with np.errstate(invalid="ignore", divide="ignore"):
        ev_cdf = np.where(rate[:, None] > 0, np.cumsum(probs, axis=1) / rate[:, None], 1.0)
    ev_cdf[:, -1] = 1.0
    return (
        np.asarray(spec.drift, dtype=float),
        np.sqrt(np.asarray(spec.var, dtype=float)),
        rate,
        ev_cdf,
        sw_law,
        jump_law,
        beta_cdf,
        ph_rates,
        next_cdf,
        orders,
    )


def _window(sc: BarrierScenario, cfg: SimConfig):
    x0 = cfg.start_level
    lo = -sc.a if sc.lower is not None else None
    hi = sc.b if sc.upper is not None else None
    if cfg.window is not None:
        wlo, whi = cfg.window
        lo = wlo if lo is None else max(lo, wlo)
        hi = whi if hi is None else min(hi, whi)
    else:
        if lo is None:
            lo = (x0 if hi is None else min(x0, hi)) - DEFAULT_SPAN
        if hi is None:
            hi = max(x0, lo) + DEFAULT_SPAN
    if not hi > lo:
        raise ValueError("empty histogram window")
    return float(lo), float(hi)


def _kind(barrier):
    if barrier is None:
        return K.NONE
    return K.REFLECT if barrier.reflect else K.TERMINATE


def _pack_slots(scenarios, cfg, targets, records, eps):
    rows = []
    for sc, tg, rec in zip(scenarios, targets, records):
        lo = -sc.a if sc.lower is not None else -np.inf
        hi = sc.b if sc.upper is not None else np.inf
        if not lo <= cfg.start_level <= hi:
            raise ValueError(f"start level {cfg.start_level} outside scenario {sc}")
        wlo, whi = _window(sc, cfg)
        rows.append((lo, hi, _kind(sc.lower), _kind(sc.upper), np.nan if tg is None else tg,
                     rec, wlo, (whi - wlo) / cfg.bins))
    cols = list(zip(*rows))
    return (
        np.array(cols[0], dtype=float),
        np.array(cols[1], dtype=float),
        np.array(cols[2], dtype=np.int64),
        np.array(cols[3], dtype=np.int64),
        np.array(cols[4], dtype=float),
        np.array(cols[5], dtype=np.bool_),
        np.array(cols[6], dtype=float),
        np.array(cols[7], dtype=float),
        np.full(len(rows), eps),
    )


def default_horizon(spec: MapSpec, target=SURVIVAL_TARGET):
    """Time at which the killed environment retains less than ``target`` mass."""
    if not spec.defective:
        raise ValueError("a non-defective spec needs an explicit horizon")
    Qk = spec.Q0 - np.diag(spec.kill)
    ones = np.ones(spec.n)
    t = 1.0
    while np.max(sla.expm(Qk * t) @ ones) >= target:
        t *= 1.25
        if t > 1e6:
            raise ValueError("killing too weak for an automatic horizon")
    return t


def _check_config(spec: MapSpec, cfg: SimConfig):
    d = -np.diag(spec.Q0)
    limit = 1e-3 * np.min(1.0 / d[d > 0]) if np.any(d > 0) else np.inf
    if cfg.step > limit * (1 + 1e-12):
        raise ConfigTooCoarse(f"step {cfg.step:g} exceeds 1e-3 / max|Q0_ii| = {limit:g}")


def _start_states(spec: MapSpec, cfg: SimConfig):
    n, N = spec.n, cfg.n_paths
    s = cfg.start_state
    if s is None:
        per = np.full(n, N // n)
        per[: N % n] += 1
        return np.repeat(np.arange(n), per)
    if np.ndim(s) == 0:
        if not 0 <= int(s) < n:
            raise ValueError("start_state out of range")
        return np.full(N, int(s))
    p = np.asarray(s, dtype=float)
    if p.shape != (n,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise ValueError("start_state distribution must be a probability vector of length n")
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, len(STREAMS)]))
    return rng.choice(n, size=N, p=p)


class _Streams:
    """Per-path Philox streams; path ``p`` uses counter ``(0, p, 0, 0)``."""

    def __init__(self, seed):
        self.bits = [np.random.Philox(key=[seed, k]) for k in range(len(STREAMS))]
        self.gens = [np.random.Generator(b) for b in self.bits]
        self._states = [b.state for b in self.bits]

    def reset(self, p):
        for b, st in zip(self.bits, self._states):
            st["state"]["counter"] = np.array([0, p, 0, 0], dtype=np.uint64)
            st["buffer_pos"] = 4
            st["has_uint32"] = 0
            b.state = st
        return self.gens


def _run(spec, scenarios, cfg, targets=None, records=None, track=None):
    validate_spec(spec)
    _check_config(spec, cfg)
    horizon = cfg.horizon if cfg.horizon is not None else default_horizon(spec)
    n_slots = len(scenarios)
    targets = [None] * n_slots if targets is None else targets
    records = [True] * n_slots if records is None else records
    sig_max = float(np.sqrt(np.max(spec.var)))
    eps = 10 * sig_max * np.sqrt(cfg.step)
    model = _pack_model(spec)
    slots = _pack_slots(scenarios, cfg, targets, records, eps)
    track_up, track_down = (np.zeros(0), np.zeros(0)) if track is None else track
    n, N, B = spec.n, cfg.n_paths, cfg.bins
    starts = _start_states(spec, cfg)
    occ = np.zeros((n_slots, n, B))
    extra = np.zeros((n_slots, 4, 2, n))
    occ_sum = np.zeros((n_slots, n, n, B))
    occ_sq = np.zeros_like(occ_sum)
    extra_sum = np.zeros((n_slots, 4, 2, n, n))
    extra_sq = np.zeros_like(extra_sum)
    out_code = np.full((n_slots, N), -1, dtype=np.int64)
    out_state = np.zeros((n_slots, N), dtype=np.int64)
    out_time = np.zeros((n_slots, N))
    out_level = np.zeros((n_slots, N))
    out_track = np.zeros((N, track_up.size), dtype=np.int8)
    streams = _Streams(cfg.seed)
    x0 = float(cfg.start_level)
    for p in range(N):
        gb, ge, ga = streams.reset(p)
        K.run_path(
            gb, ge, ga, p, int(starts[p]), x0, *model, *slots,
            float(cfg.dt), int(cfg.substeps), float(horizon),
            np.asarray(track_up, dtype=float), np.asarray(track_down, dtype=float),
            occ, extra, occ_sum, occ_sq, extra_sum, extra_sq,
            out_code, out_state, out_time, out_level, out_track,
        )
    counts = np.bincount(starts, minlength=n).astype(float)
    return dict(
        slots=slots, eps=eps, counts=counts, starts=starts, horizon=horizon,
        occ_sum=occ_sum, occ_sq=occ_sq, extra_sum=extra_sum, extra_sq=extra_sq,
        code=out_code, state=out_state, time=out_time, level=out_level, track=out_track,
    )


def _mean_se(s, sq, counts):
    """Mean and standard error per start state (first axis after slot) from sums."""
    shape = (-1,) + (1,) * (s.ndim - 1)
    N = counts.reshape(shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s / N
        var = np.maximum(sq / N - mean**2, 0.0) * N / np.maximum(N - 1, 1)
        se = np.sqrt(var / N)
    return mean, se


def outcome_matrix(starts, codes, states, code, n):
    """Frequency ``P[outcome == code, J = j]`` per start state with binomial errors."""
    counts = np.bincount(starts, minlength=n).astype(float)
    M = np.zeros((n, n))
    hit = codes == code
    np.add.at(M, (starts[hit], states[hit]), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = M / counts[:, None]
        se = np.sqrt(P * (1 - P) / counts[:, None])
    return P, se


_CODES = {"horizon": K.HORIZON, "up": K.EXIT_UP, "down": K.EXIT_DOWN, "hit": K.HIT, "killed": K.KILLED}


def _empirical(raw, k, sc, cfg, n):
    counts = raw["counts"]
    lo, w = raw["slots"][6][k], raw["slots"][7][k]
    edges = lo + w * np.arange(cfg.bins + 1)
    dens, se = _mean_se(raw["occ_sum"][k], raw["occ_sq"][k], counts)
    xs, xq = raw["extra_sum"][k], raw["extra_sq"][k]
    rows = []
    for r in range(4):
        m0, s0 = _mean_se(xs[r, 0], xq[r, 0], counts)
        m1, s1 = _mean_se(xs[r, 1], xq[r, 1], counts)
        rows.append((np.stack([m0, m1]), np.stack([s0, s1])))
    ep = EmpiricalPotential(
        scenario=sc, edges=edges, density=dens / w, se=se / w,
        atoms=rows[K.PINNED][0], atoms_se=rows[K.PINNED][1],
        layer=rows[K.LAYER][0], pushed=rows[K.PUSHED][0],
        lifetime=rows[K.TOTAL][0][0], lifetime_se=rows[K.TOTAL][1][0],
        paths=counts, eps_atom=float(raw["eps"]),
    )
    code, state = raw["code"][k], raw["state"][k]
    for name, c in _CODES.items():
        ep.exits[name], ep.exit_se[name] = outcome_matrix(raw["starts"], code, state, c, n)
    ep.outcome = dict(code=code, state=state, time=raw["time"][k], level=raw["level"][k],
                      start=raw["starts"])
    return ep


def simulate_many(spec: MapSpec, scenarios, cfg: SimConfig):
    """Estimate several scenarios from the same simulated paths."""
    scs = [BarrierScenario.parse(s) if isinstance(s, str) else s for s in scenarios]
    if not scs:
        return []
    raw = _run(spec, scs, cfg)
    return [_empirical(raw, k, sc, cfg, spec.n) for k, sc in enumerate(scs)]


def simulate(spec: MapSpec, sc: BarrierScenario, cfg: SimConfig) -> EmpiricalPotential:
    """Empirical potential measure, atoms and exit frequencies of one scenario."""
    return simulate_many(spec, [sc], cfg)[0]


@dataclass
class ExitEstimate:
    value: np.ndarray
    se: np.ndarray


def estimate_exit_matrices(spec: MapSpec, a, b, cfg: SimConfig):
    """Empirical ``exit_up``, ``exit_down``, ``reflected_passage_up`` and the hitting matrix of ``-a``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    scs = [scenario("|-a,b|", a, b), scenario("|-a,inf)", a), scenario("[-a,b|", a, b), BarrierScenario()]
    raw = _run(spec, scs, cfg, targets=[None, None, None, -a], records=[False] * 4)
    st, n = raw["starts"], spec.n
    picks = {"exit_up": (0, K.EXIT_UP), "exit_down": (1, K.EXIT_DOWN),
             "reflected_passage_up": (2, K.EXIT_UP), "hitting": (3, K.HIT)}
    return {
        name: ExitEstimate(*outcome_matrix(st, raw["code"][k], raw["state"][k], c, n))
        for name, (k, c) in picks.items()
    }


def check_reversal_duality(spec: MapSpec, a, b, t, cfg: SimConfig, points=10):
    """Compare both sides of the finite-time reversal identity for two-sided reflection.

    Left: ``P_a[X_[0,a+b](t) >= x; J(t)]`` for the process reflected in
    ``[0, a+b]`` started at ``a``.  Right: the reversed process started at 0,
    with ``tau`` its exit time from ``[x-a-b, x)``, gives
    ``P[tau <= t, exit upward; J(t)] + P[tau > t, X(t) + a >= x; J(t)]``,
    transposed and conjugated by the stationary law.
    """
    if cfg.horizon is not None and t > cfg.horizon:
        raise ValueError("t exceeds the horizon")
    n = spec.n
    pi = stationary_distribution(spec.Q0)
    xs = (np.arange(points) + 0.5) * (a + b) / points
    base = dict(dt=cfg.dt, n_paths=cfg.n_paths, start_level=0.0, start_state=None,
                bins=cfg.bins, substeps=cfg.substeps, horizon=float(t))
    left = _run(spec, [scenario("[-a,b]", a, b)], SimConfig(seed=cfg.seed, **base), records=[False])
    rev = time_reverse(spec)
    right = _run(rev, [BarrierScenario()], SimConfig(seed=cfg.seed + 1, **base),
                 records=[False], track=(xs.copy(), xs - a - b))
    lhs = np.zeros((points, n, n))
    lhs_se = np.zeros_like(lhs)
    rhs = np.zeros_like(lhs)
    rhs_se = np.zeros_like(lhs)
    alive_l = left["code"][0] == K.HORIZON
    alive_r = right["code"][0] == K.HORIZON
    level_r = right["level"][0]
    for m, x in enumerate(xs):
        ok_l = alive_l & (left["level"][0] + a >= x)
        st = right["track"][:, m]
        ok_r = alive_r & ((st == 1) | ((st == 0) & (level_r + a >= x)))
        P, s = outcome_matrix(left["starts"], np.where(ok_l, 1, 0), left["state"][0], 1, n)
        lhs[m], lhs_se[m] = P, s
        # reversed side: row j = start of the reversed path, column i = its state at t
        P, s = outcome_matrix(right["starts"], np.where(ok_r, 1, 0), right["state"][0], 1, n)
        conj = pi[None, :] / pi[:, None]
        rhs[m], rhs_se[m] = conj * P.T, conj * s.T
    pooled = np.sqrt(lhs_se**2 + rhs_se**2)
    diff = np.abs(lhs - rhs)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(pooled > 0, diff / pooled, np.where(diff > 0, np.inf, 0.0))
    return {
        "x": xs,
        "lhs": lhs,
        "rhs": rhs,
        "pooled_se": pooled,
        "max_discrepancy": float(diff.max()),
        "max_z": float(z.max()),
        "passed": bool(z.max() <= 3.0),
    }


__all__ = [
    "SimConfig",
    "EmpiricalPotential",
    "ExitEstimate",
    "simulate",
    "simulate_many",
    "estimate_exit_matrices",
    "check_reversal_duality",
    "default_horizon",
    "outcome_matrix",
    "bin_average",
    "z_scores",
    "fraction_within",
    "closed_exit_matrices",
    "max_z",
]
