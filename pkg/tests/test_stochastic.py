import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snsmem.memory import make_kernel
from snsmem.spaces import random_field
from snsmem.stochastic import (BLOCK, NoisePath, OUProcess, batch_means_se, beta1, build_ledger, choose_sigma,
                               default_truncation, ergodic_average_check, expected_beta1, ou_advance,
                               ou_pullback, ou_run, ou_series, sample_wiener, temperedness_profile)


class TestWienerPath:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(-5000, 5000), st.integers(1, 3000))
    def test_increments_depend_only_on_index(self, seed, start, count):
        p = sample_wiener(seed, -1.0, 1.0, 1e-3)
        whole = p.increments(start - 100, count + 200)
        assert np.array_equal(p.increments(start, count), whole[100:100 + count])

    def test_extension_keeps_values(self):
        p = sample_wiener(4, 0.0, 1.0, 1e-2)
        q = p.extended(t0=-5.0, t1=3.0)
        assert np.array_equal(q.increments(0, 100), p.increments())

    def test_header_window(self):
        p = sample_wiener(1, -0.5, 0.5, 0.01)
        assert (p.n0, p.n1) == (-50, 50)
        assert len(p.increments()) == 100
        assert len(p.times()) == 101

    def test_shift(self):
        p = sample_wiener(2, -3.0, 3.0, 0.01)
        tau = 0.7
        q = p.shifted(tau)
        n = np.arange(-100, 100)
        k = 70
        assert np.allclose(q.W(n), p.W(n + k) - p.W(k), atol=1e-13)
        with pytest.raises(ValueError):
            p.shifted(0.005)

    def test_W_starts_at_zero(self):
        p = sample_wiener(3, -1.0, 1.0, 0.01)
        assert p.W(0)[0] == 0.0
        assert p.W(5)[0] == pytest.approx(p.increments(0, 5).sum())
        assert p.W(-5)[0] == pytest.approx(-p.increments(-5, 5).sum())

    def test_block_boundaries(self):
        p = sample_wiener(9, 0.0, 1.0, 1.0)
        inc = p.increments(BLOCK - 3, 6)
        assert np.array_equal(inc[:3], p.increments(BLOCK - 3, 3))
        assert np.array_equal(inc[3:], p.increments(BLOCK, 3))

    def test_increment_variance(self):
        dt = 0.01
        inc = sample_wiener(5, 0.0, 2000.0, dt).increments()
        se = math.sqrt(2.0 / len(inc)) * dt
        assert abs(inc.var() - dt) < 4 * se

    def test_different_seeds_differ(self):
        a = sample_wiener(1, 0.0, 1.0, 0.01).increments()
        b = sample_wiener(2, 0.0, 1.0, 0.01).increments()
        assert not np.allclose(a, b)

    def test_validation(self):
        with pytest.raises(ValueError):
            NoisePath(0, 1.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            NoisePath(0, 0.0, 1.0, 0.0)


class TestOU:
    def test_noise_free_decay(self):
        sigma, dt = 3.0, 0.01
        z = ou_run(2.0, np.zeros(500), dt, sigma)
        assert np.max(np.abs(z - 2.0 * np.exp(-sigma * dt * np.arange(501)))) < 1e-12

    def test_run_matches_single_steps(self):
        sigma, dt = 1.5, 0.02
        dW = sample_wiener(3, 0.0, 2.0, dt).increments()
        z, ref = ou_run(0.3, dW, dt, sigma), [0.3]
        for d in dW:
            ref.append(ou_advance(ref[-1], d, dt, sigma))
        assert np.allclose(z, ref, rtol=1e-13, atol=1e-15)

    def test_one_step_variance_is_exact(self):
        sigma, dt = 4.0, 0.3
        a = math.exp(-sigma * dt)
        # z1 = a z0 + b dW with Var(b dW) = (1 - e^{-2 sigma dt}) / (2 sigma)
        b = ou_advance(0.0, 1.0, dt, sigma)
        assert b**2 * dt == pytest.approx((1 - a * a) / (2 * sigma), rel=1e-14)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            ou_run(0.0, np.zeros(3), 0.1, 0.0)

    def test_default_truncation(self):
        T = default_truncation(2.0, 0.01)
        assert math.exp(-2.0 * T) <= math.exp(-40.0) * (1 + 1e-12)
        assert T / 0.01 == pytest.approx(round(T / 0.01))

    def test_pullback_bound_and_limit(self):
        p = sample_wiener(7, -50.0, 0.0, 0.01)
        z1, b1 = ou_pullback(p, 1.0, 0.0, 10.0)
        z2, _ = ou_pullback(p, 1.0, 0.0, 30.0)
        assert b1 == pytest.approx(math.exp(-10.0))
        assert abs(z1 - z2) < 10 * b1
        with pytest.raises(ValueError):
            ou_pullback(p, 1.0, 5.0, 1.0)

    def test_series_is_consistent_with_pullback(self):
        p = sample_wiener(8, -10.0, 1.0, 0.01)
        z, dW = ou_series(p, 2.0, -100, 100, 20.0)
        z_end, _ = ou_pullback(p, 2.0, 0.0, 21.0)
        assert z[-1] == pytest.approx(z_end, abs=1e-12)
        assert len(dW) == 100

    def test_process_wrapper(self):
        p = sample_wiener(8, -10.0, 1.0, 0.01)
        proc = OUProcess.stationary(p, 2.0, n=0, T_trunc=20.0)
        proc.advance(10)
        assert proc.n == 10
        assert proc.z == pytest.approx(ou_series(p, 2.0, 0, 10, 20.0)[0][-1], abs=1e-13)

    def test_stationary_moments(self):
        sigma, dt = 2.0, 0.01
        p = sample_wiener(21, 0.0, 2000.0, dt)
        z = ou_run(0.0, p.increments(), dt, sigma)[1000:]
        assert abs((z**2).mean() - 1 / (2 * sigma)) < 3 * batch_means_se(z**2)
        assert abs((z**4).mean() - 3 / (4 * sigma**2)) < 3 * batch_means_se(z**4)


class TestFunctionals:
    def test_beta1(self):
        assert beta1(2.0) == 20.0
        assert np.allclose(beta1(np.array([0.0, 1.0])), [0.0, 2.0])

    def test_expected_beta1(self):
        assert expected_beta1(1.0) == pytest.approx(1.25)

    def test_ergodic_check_flags_quarter_sigma_bound(self):
        p = sample_wiener(1, -300.0, 0.0, 0.01)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            rep = ergodic_average_check(p, 1.0, 200.0)
        assert not rep["quarter_sigma_bound_holds"]
        assert any(issubclass(x.category, RuntimeWarning) for x in w)
        assert rep["n_se"] < 4

    def test_temperedness(self):
        p = sample_wiener(1, -100.0, 0.0, 0.01)
        t, prof = temperedness_profile(p, 1.0, 0.5, 50.0)
        assert prof[-1] < prof.max() and t[-1] == pytest.approx(50.0)


class TestLedger:
    def test_constants(self, grid32):
        h = random_field(grid32, 1, 2.0).truncate()
        led = build_ledger(0.05, 1.0, make_kernel(1.0), h, 0.0145, epsilon=0.5)
        assert led.delta0 == pytest.approx(0.025)
        assert led.delta2 == pytest.approx(0.05 / 8)
        assert led.c_tilde == pytest.approx(max(h.norm_H(), h.norm_V(), h.norm_W()))
        assert led.c0 == pytest.approx(2 * (0.0145 * led.c_tilde) ** 2 / 0.05)
        assert led.c5 == led.c5_long > led.c5_short
        assert led.sigma == pytest.approx(choose_sigma(led, 0.5))
        assert led.provenance["sigma"] == "choose_sigma"

    def test_choose_sigma_formula(self, grid32):
        h = random_field(grid32, 1, 2.0).truncate()
        led = build_ledger(0.05, 1.0, make_kernel(1.0), h, 0.0145)
        for eps in (0.0, 0.1, 1.0):
            d0 = led.delta0
            expect = 1.1 * max(led.c0 * eps**2 / (2 * d0), led.c5 * eps**4 / (2 * d0), d0)
            assert choose_sigma(led, eps) == pytest.approx(expect)

    def test_sigma_override_and_validation(self, grid32):
        h = random_field(grid32, 1).truncate()
        led = build_ledger(0.05, 1.0, make_kernel(1.0), h, 0.01, sigma=3.0)
        assert led.sigma == 3.0 and led.provenance["sigma"] == "input"
        with pytest.raises(ValueError):
            build_ledger(0.05, 1.0, make_kernel(1.0), h, float("nan"))
