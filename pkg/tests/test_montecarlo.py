import numpy as np
import pytest

from snmap import montecarlo as mc
from snmap.errors import ConfigTooCoarse
from snmap.fixtures import bm1, bounded_variation, mm2
from snmap.model import env_stats
from snmap.potential import CASES, BarrierScenario, potential_atoms, scenario
from snmap.scale import ScaleSet
from snmap.montecarlo import SimConfig


def test_determinism():
    cfg = SimConfig(n_paths=300, seed=42, bins=16)
    scs = [scenario(c, 1, 1) for c in CASES]
    r1 = mc.simulate_many(mm2(), scs, cfg)
    r2 = mc.simulate_many(mm2(), scs, cfg)
    for e1, e2 in zip(r1, r2):
        np.testing.assert_array_equal(e1.density, e2.density)
        np.testing.assert_array_equal(e1.se, e2.se)
        np.testing.assert_array_equal(e1.atoms, e2.atoms)
        np.testing.assert_array_equal(e1.outcome["level"], e2.outcome["level"])
    r3 = mc.simulate_many(mm2(), scs, SimConfig(n_paths=300, seed=43, bins=16))
    assert not np.array_equal(r1[0].density, r3[0].density)


def test_paths_are_independent_of_batch():
    # path p uses the same streams whatever the total number of paths
    a = mc.simulate(bm1(), BarrierScenario(), SimConfig(n_paths=50, seed=1, start_state=0))
    b = mc.simulate(bm1(), BarrierScenario(), SimConfig(n_paths=80, seed=1, start_state=0))
    np.testing.assert_array_equal(a.outcome["level"], b.outcome["level"][:50])


def test_zero_horizon():
    emp = mc.simulate(mm2(), scenario("[-a,b]", 1, 1), SimConfig(n_paths=100, horizon=0.0))
    assert emp.density.max() == 0.0 and emp.atoms.max() == 0.0 and emp.lifetime.max() == 0.0
    assert np.all(np.isfinite(emp.se))


def test_config_errors():
    with pytest.raises(ConfigTooCoarse):
        mc.simulate(mm2(), BarrierScenario(), SimConfig(dt=2e-3, n_paths=10))
    with pytest.raises(ValueError):
        mc.simulate(mm2((0.0, 0.0)), BarrierScenario(), SimConfig(n_paths=10))
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)


def test_default_horizon_leaves_little_mass():
    from scipy.linalg import expm

    spec = mm2((0.5, 2.0))
    t = mc.default_horizon(spec)
    surv = expm((spec.Q0 - np.diag(spec.kill)) * t).sum(axis=1)
    assert surv.max() < mc.SURVIVAL_TARGET


def test_start_state_options():
    emp = mc.simulate(mm2(), BarrierScenario(), SimConfig(n_paths=101, start_state=1))
    assert list(emp.paths) == [0, 101]
    emp = mc.simulate(mm2(), BarrierScenario(), SimConfig(n_paths=1000, start_state=[0.25, 0.75]))
    assert emp.paths.sum() == 1000 and 600 < emp.paths[1] < 900
    emp = mc.simulate(mm2(), BarrierScenario(), SimConfig(n_paths=101))
    assert list(emp.paths) == [51, 50]


def test_bm1_free_histogram():
    ss = ScaleSet(bm1())
    emp = mc.simulate(bm1(), BarrierScenario(), SimConfig(n_paths=5000, seed=3, bins=32))
    assert mc.fraction_within(ss, emp) >= 0.95
    assert np.all(emp.density >= 0)


def test_bm1_two_sided_lifetime():
    emp = mc.simulate(bm1(), scenario("[-a,b]", 1, 1), SimConfig(n_paths=5000, seed=4, bins=16))
    # mean Exp(1) killing time
    assert abs(emp.lifetime[0, 0] - 1.0) <= 3 * emp.lifetime_se[0, 0]
    assert emp.mass()[0, 0] == pytest.approx(emp.lifetime[0, 0], rel=1e-9)


@pytest.mark.slow
def test_bounded_variation_atom():
    spec = bounded_variation()
    ss = ScaleSet(spec)
    sc = scenario("|-a,b]", 0.5, 0.5)
    emp = mc.simulate(spec, sc, SimConfig(n_paths=20_000, seed=6, bins=16))
    _, upper = potential_atoms(ss, sc)
    z = np.abs(emp.atoms[1] - upper) / np.where(emp.atoms_se[1] > 0, emp.atoms_se[1], np.inf)
    assert z.max() <= 3.0
    assert upper[0, 0] > 0 and emp.atoms[1, 0, 0] > 0


def test_brownian_atom_layer_shrinks_with_dt():
    sc = scenario("[-a,b]", 1, 1)
    fine = mc.simulate(bm1(), sc, SimConfig(n_paths=4000, seed=8, dt=1e-4, bins=8))
    coarse = mc.simulate(bm1(), sc, SimConfig(n_paths=4000, seed=8, dt=4e-4, bins=8))
    assert fine.atoms.max() == 0.0 and coarse.atoms.max() == 0.0
    assert fine.layer.sum() < 0.75 * coarse.layer.sum()


@pytest.mark.slow
def test_halving_dt_moves_cells_less_than_one_se():
    # step 2 dt versus dt on coupled paths at 1e5 paths
    scs = [scenario("[-a,b]", 1, 1), scenario("|-a,b]", 1, 1)]
    fine = mc.simulate_many(bm1(), scs, SimConfig(n_paths=100_000, seed=7, dt=1e-4, bins=40))
    coarse = mc.simulate_many(bm1(), scs, SimConfig(n_paths=100_000, seed=7, dt=1e-4, substeps=2, bins=40))
    for f, c in zip(fine, coarse):
        assert np.max(np.abs(f.density - c.density) / f.se) < 1.0


@pytest.mark.slow
@pytest.mark.parametrize("spec", [mm2((0.0, 0.0)), bounded_variation((0.0, 0.0))], ids=["mm2", "bv"])
def test_free_drift(spec):
    T = 5.0
    st = env_stats(spec)
    emp = mc.simulate(spec, BarrierScenario(), SimConfig(n_paths=5_000, seed=9, horizon=T, start_state=st.pi, bins=8))
    rate = emp.outcome["level"] / T
    se = rate.std(ddof=1) / np.sqrt(rate.size)
    assert abs(rate.mean() - st.mu) <= 3 * se


@pytest.mark.slow
@pytest.mark.parametrize("name,spec,a,b,t,paths", [
    ("bm1", bm1(), 0.5, 0.5, 1.0, 20_000),
    ("mm2", mm2(), 0.5, 0.5, 2.0, 100_000),
    ("bv", bounded_variation(), 0.5, 0.5, 1.0, 20_000),
])
def test_reversal_duality(name, spec, a, b, t, paths):
    # 40 correlated cells per check; the 3 se bound is applied to all of them
    rep = mc.check_reversal_duality(spec, a, b, t, SimConfig(n_paths=paths, seed=10))
    assert rep["passed"], rep["max_z"]


@pytest.mark.slow
@pytest.mark.parametrize("spec,a,b", [(bm1(), 1.0, 1.0), (mm2(), 0.5, 0.5), (mm2(), 0.8, 0.8)], ids=["bm1", "mm2", "mm2-0.8"])
def test_exit_matrices(spec, a, b):
    ss = ScaleSet(spec)
    est = mc.estimate_exit_matrices(spec, a, b, SimConfig(n_paths=20_000, seed=12))
    closed = mc.closed_exit_matrices(ss, a, b)
    for k in closed:
        assert mc.max_z(est[k], closed[k]) <= 3.0, k
