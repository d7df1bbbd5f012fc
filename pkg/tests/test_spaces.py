import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snsmem.spaces import (ModeSet, SpectralField, SpectralGrid, divergence, leray_project, make_grid,
                           random_field, stokes_apply)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


class TestGrid:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            make_grid(2 * math.pi, 7)
        with pytest.raises(ValueError):
            make_grid(2 * math.pi, 6)
        with pytest.raises(ValueError):
            make_grid(-1.0, 32)

    def test_lambda1_and_shape(self, grid32):
        assert grid32.lambda1 == pytest.approx(1.0)
        assert make_grid(math.pi, 16).lambda1 == pytest.approx(4.0)
        assert grid32.shape == (2, 32, 17)

    def test_mean_and_nyquist_inactive(self, grid32):
        assert not grid32.active[0, 0]
        assert not grid32.active[16].any()
        assert not grid32.active[:, 16].any()

    def test_equality_by_value(self):
        assert make_grid(2 * math.pi, 32) == make_grid(2 * math.pi, 32)
        assert make_grid(2 * math.pi, 32) != make_grid(2 * math.pi, 16)

    def test_galerkin_mode_count(self, grid32):
        # |ix| <= 10 (21 values) times 0 <= iy <= 10 (11 values), minus the mean mode
        assert ModeSet(grid32).mode_shape == (230,)


class TestLeray:
    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_idempotent_and_divergence_free(self, seed):
        g = make_grid(2 * math.pi, 16)
        c = random_field(g, seed, 1.0).coef + np.stack([g.kx, g.ky]) * random_field(g, seed + 1, 1.0).coef[0]
        p1 = leray_project(g, c)
        p2 = leray_project(g, p1)
        assert np.max(np.abs(p2 - p1)) <= 1e-14 * np.max(np.abs(p1))
        assert np.max(np.abs(divergence(g, p1))) <= 1e-13 * np.max(np.abs(c))

    def test_removes_gradients(self, grid16):
        phi = random_field(grid16, 3, 1.0).coef[0]
        grad = np.stack([1j * grid16.kx * phi, 1j * grid16.ky * phi])
        assert np.max(np.abs(leray_project(grid16, grad))) < 1e-14

    def test_modeset_leray_matches_full(self, grid32):
        ms = ModeSet(grid32)
        c = random_field(grid32, 1, 1.0).coef + np.stack([grid32.kx, grid32.ky]) * random_field(grid32, 2).coef[0]
        c = c * grid32.dealias
        assert np.allclose(ms.leray(ms.gather(c)), ms.gather(leray_project(grid32, c)), atol=1e-15)


class TestField:
    def test_parseval(self, grid32):
        u = random_field(grid32, 5, 1.5)
        phys = u.to_physical()
        integral = (phys**2).sum() * grid32.dx**2
        assert u.energy() == pytest.approx(integral, rel=1e-12)

    def test_random_field_energy_and_divergence(self, grid32):
        u = random_field(grid32, 9, 2.0, energy=3.0)
        assert u.energy() == pytest.approx(3.0, rel=1e-13)
        assert u.max_divergence() < 1e-13

    def test_physical_roundtrip(self, grid32):
        u = random_field(grid32, 4, 1.0)
        back = SpectralField.from_physical(grid32, u.to_physical())
        assert np.max(np.abs(back.coef - u.coef)) < 1e-15

    def test_norm_ordering_on_unit_box(self, grid32):
        # lambda1 = 1, so |u| <= |u|_V <= |u|_W
        u = random_field(grid32, 8, 1.0)
        assert u.norm_H() <= u.norm_V() <= u.norm_W()

    def test_stokes_is_minus_laplacian(self, grid32):
        u = random_field(grid32, 8, 2.0)
        assert u.stokes(2).inner(u) == pytest.approx(u.norm_V() ** 2, rel=1e-12)
        half = SpectralField(grid32, stokes_apply(grid32, u.coef, 1.0))
        assert half.norm_H() == pytest.approx(u.norm_V(), rel=1e-12)

    def test_arithmetic_checks_grid(self, grid32, grid16):
        with pytest.raises(ValueError):
            random_field(grid32, 1) + random_field(grid16, 1)

    def test_truncate_keeps_mask(self, grid32):
        u = random_field(grid32, 1).truncate()
        assert np.all(u.coef[:, ~grid32.dealias] == 0)


class TestSerialization:
    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_bytes_roundtrip(self, seed):
        g = make_grid(2 * math.pi, 16)
        u = random_field(g, seed, 1.0)
        back = SpectralField.from_bytes(u.to_bytes())
        assert back.grid == g
        assert np.array_equal(back.coef, u.coef)

    def test_json_roundtrip(self, grid16):
        u = random_field(grid16, 2, 1.0)
        back = SpectralField.from_json(u.to_json())
        assert np.array_equal(back.coef, u.coef)

    def test_rejects_wrong_size(self, grid16):
        blob = random_field(grid16, 2).to_bytes()
        with pytest.raises(ValueError):
            SpectralField.from_bytes(blob[:-16])
        with pytest.raises(ValueError):
            SpectralField.from_bytes(b"XXXX" + blob[4:])

    def test_rejects_batched(self, grid16):
        batch = SpectralField(grid16, np.stack([random_field(grid16, 1).coef] * 2))
        with pytest.raises(ValueError):
            batch.to_bytes()


class TestModeSet:
    def test_gather_scatter_roundtrip(self, grid32):
        ms = ModeSet(grid32)
        u = random_field(grid32, 6).truncate()
        assert np.array_equal(ms.scatter(ms.gather(u.coef)), u.coef)

    def test_inner_matches_full_layout(self, grid32):
        ms = ModeSet(grid32)
        u, v = random_field(grid32, 6).truncate(), random_field(grid32, 7).truncate()
        for r in (0, 1, 2):
            assert ms.inner(ms.gather(u.coef), ms.gather(v.coef), r) == pytest.approx(u.inner(v, r), rel=1e-12)

    def test_unknown_kind(self, grid32):
        with pytest.raises(ValueError):
            ModeSet(grid32, "bogus")
