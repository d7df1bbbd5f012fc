import math

import numpy as np
import pytest

from snsmem.attractor import (PointCloud, attractor_estimate, deterministic_attractor, hausdorff,
                              hausdorff_semidist, load_cloud, pullback_ensemble, sample_ball,
                              semicontinuity_sweep, separation_growth, shift_velocity, stationary_z)
from snsmem.checks import _random_state
from snsmem.config import build_sim_config, load_config
from snsmem.solver import SimState, integrate
from snsmem.stochastic import sample_wiener


@pytest.fixture(scope="module")
def small():
    cfg = load_config({"integration": {"dt": 0.01, "n_nodes": 16}, "experiment": {"initial": {"kind": "steady"}}})
    return cfg, build_sim_config(cfg, epsilon=0.0), build_sim_config(cfg, epsilon=0.5)


@pytest.fixture(scope="module")
def cloud(small):
    return sample_ball(small[1], 6, 4.0, seed=3)


class TestCloud:
    def test_ball_norms(self, cloud):
        n = cloud.norms()
        assert len(cloud) == 6
        assert np.all(n >= 2.0 - 1e-12) and np.all(n <= 4.0 + 1e-12)

    def test_ball_is_reproducible(self, small, cloud):
        again = sample_ball(small[1], 6, 4.0, seed=3)
        assert np.array_equal(again.state.v.coef, cloud.state.v.coef)

    def test_hausdorff(self, cloud):
        sub = cloud.select([0, 1])
        assert hausdorff(cloud, cloud) == 0.0
        assert hausdorff_semidist(sub, cloud) == 0.0
        assert hausdorff_semidist(cloud, sub) > 0.0
        assert cloud.diameter() >= hausdorff_semidist(cloud, sub)

    def test_hausdorff_needs_matching_nodes(self, small, cloud):
        other = sample_ball(small[1].with_(n_nodes=8, s_nodes=None), 2, 1.0)
        with pytest.raises(ValueError):
            hausdorff(cloud, other)

    def test_save_load(self, cloud, tmp_path):
        cloud.save(tmp_path, "c")
        back = load_cloud(tmp_path / "c.json")
        assert np.array_equal(back.state.v.coef, cloud.state.v.coef)
        assert np.array_equal(back.state.eta.values, cloud.state.eta.values)
        assert back.label == cloud.label

    def test_rejects_unbatched(self, small):
        with pytest.raises(ValueError):
            PointCloud(_random_state(small[1], 1))


class TestShift:
    def test_shift_roundtrip(self, small):
        st = _random_state(small[2], 1)
        back = shift_velocity(shift_velocity(st, small[2], 0.7, -1.0), small[2], 0.7, 1.0)
        assert np.allclose(back.v.coef, st.v.coef, atol=1e-15)

    def test_stationary_z_matches_solver(self, small):
        sim = small[2]
        path = sample_wiener(2, -1.0, 0.0, sim.dt)
        st = _random_state(sim, 1)
        tr = integrate(SimState(-1.0, st.v, st.eta), path, sim, t_end=0.0)
        assert tr["z"][0] == pytest.approx(stationary_z(path, sim, -1.0), abs=1e-14)
        assert tr.z_final == pytest.approx(stationary_z(path, sim, 0.0), abs=1e-14)
        assert stationary_z(None, small[1], 0.0) == 0.0


class TestPullback:
    def test_zero_horizon_is_identity(self, cloud, small):
        out = pullback_ensemble(cloud, 0, 0.0, small[2])
        assert np.array_equal(out.state.v.coef, cloud.state.v.coef)

    def test_rejects_negative_horizon(self, cloud, small):
        with pytest.raises(ValueError):
            pullback_ensemble(cloud, 0, -1.0, small[2])

    def test_same_seed_same_cloud(self, cloud, small):
        a = pullback_ensemble(cloud, 4, 1.0, small[2])
        b = pullback_ensemble(cloud, 4, 1.0, small[2])
        assert np.array_equal(a.state.v.coef, b.state.v.coef)
        assert a.label["dropped"] == [] and a.label["seed"] == 4

    def test_pullback_contracts_toward_the_steady_state(self, cloud, small):
        out = pullback_ensemble(cloud, 0, 6.0, small[1])
        assert out.diameter() < 0.5 * cloud.diameter()

    def test_deterministic_attractor_converges(self, small):
        init = sample_ball(small[1], 4, 0.5, seed=1)
        est = deterministic_attractor(small[1], init, 60.0, 4.0, tol=1e-2)
        assert est.converged and est.distances[-1] <= 1e-2 * est.scales[-1]

    def test_estimate_records_horizons(self, cloud, small):
        est = attractor_estimate(0, small[2], [1.0, 2.0], cloud, tol=1e-12)
        assert not est.converged and est.horizons == [1.0, 2.0] and len(est.distances) == 1


class TestSweep:
    def test_rejects_ascending_epsilons(self, cloud, small):
        with pytest.raises(ValueError):
            semicontinuity_sweep([0.1, 0.5], [0], None, cloud, [1.0], None)

    def test_tiny_sweep(self, small, tmp_path):
        cfg = small[0]
        init = sample_ball(small[1], 3, 0.5, seed=2)
        ref = deterministic_attractor(small[1], init, 4.0, 2.0)
        rep = semicontinuity_sweep([0.5, 0.0], [1], lambda e: build_sim_config(cfg, epsilon=e), init,
                                   [1.0, 2.0], ref)
        assert rep.distances["0.0"] == [0.0]
        assert rep.distances["0.5"][0] > 0.0
        rep.write(tmp_path / "s")
        assert (tmp_path / "s.csv").read_text().startswith("epsilon,mean_dist")


class TestSeparation:
    def test_finite_rate(self, small):
        sim = small[2]
        st = _random_state(sim, 5)
        r = separation_growth(sim, st, sample_wiener(1, 0.0, 1.0, sim.dt), 1.0)
        assert r["finite"] and r["bound_ok"]
        assert r["d"][0] == pytest.approx(1e-6, rel=1e-9)
