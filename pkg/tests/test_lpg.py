import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpgdepth.core import ComputationRecord, Tensor, ops
from lpgdepth.core.gradcheck import check_op
from lpgdepth.lpg import (
    EPS,
    PlaneCoeffMap,
    angles_to_normal,
    expand_planes,
    fit_plane_to_patch,
    lpg_expand,
    patch_grid,
    ray_plane_depth,
    reduce_to_coeffs,
    reduction_widths,
)


def analytic_patch(n, n4, k):
    """Plane depth over the k x k half-pixel grid, written out with plain loops."""
    out = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            u, v = (j + 0.5) / k, (i + 0.5) / k
            out[i, j] = n4 / (n[0] * u + n[1] * v + n[2])
    return out


def coeff_map(theta, phi, n4, k, kappa=10.0):
    return PlaneCoeffMap(Tensor(theta), Tensor(phi), Tensor(n4), k, kappa)


class TestPatchGrid:
    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    def test_half_pixel_coordinates(self, k):
        g = patch_grid(k)
        for i in range(k):
            for j in range(k):
                assert g.u[i, j] == (j + 0.5) / k
                assert g.v[i, j] == (i + 0.5) / k
        assert np.all((g.u > 0) & (g.u < 1))

    def test_cached_and_read_only(self):
        assert patch_grid(4) is patch_grid(4)
        with pytest.raises(ValueError):
            patch_grid(4).u[0, 0] = 1.0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            patch_grid(0)


class TestNormals:
    def test_pole_and_equator(self):
        np.testing.assert_allclose(angles_to_normal(0.0, 1.234), (0, 0, 1), atol=1e-15)
        np.testing.assert_allclose(angles_to_normal(math.pi / 2, 0.0), (1, 0, 0), atol=1e-15)

    def test_oblique_value(self):
        n = angles_to_normal(math.pi / 3, math.pi / 4)
        np.testing.assert_allclose(n, (0.61237, 0.61237, 0.5), atol=5e-6)
        # sqrt(3)/2 * sqrt(2)/2 = sqrt(6)/4
        assert abs(n[0] - math.sqrt(6) / 4) < 1e-15

    def test_unit_norm_bulk(self):
        rng = np.random.default_rng(0)
        theta = rng.uniform(-20, 20, 100_000)
        phi = rng.uniform(-20, 20, 100_000)
        n1, n2, n3 = angles_to_normal(theta, phi)
        assert np.max(np.abs(np.sqrt(n1**2 + n2**2 + n3**2) - 1)) < 1e-6

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_unit_norm_property(self, theta, phi):
        n = np.array(angles_to_normal(theta, phi))
        assert abs(np.linalg.norm(n) - 1) < 1e-6


class TestRayPlaneDepth:
    def test_fronto_parallel(self):
        for u, v in [(0.1, 0.9), (0.5, 0.5)]:
            assert ray_plane_depth((0, 0, 1), 5.0, u, v) == 5.0

    def test_oblique(self):
        assert ray_plane_depth((0.6, 0.0, 0.8), 4.0, 0.5, 0.5) == pytest.approx(4.0 / 1.1, rel=1e-12)

    def test_clamp_branch(self):
        assert ray_plane_depth((0, 1, 0), 1.0, 0.5, 1e-9) == pytest.approx(1e4, rel=1e-12)

    def test_clamped_cells_get_zero_angle_gradient(self):
        theta = Tensor(np.full((1, 1, 1, 1), math.pi / 2), requires_grad=True)
        phi = Tensor(np.full((1, 1, 1, 1), math.pi), requires_grad=True)  # normal (-1, 0, 0): every denominator < 0
        n4 = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
        with ComputationRecord() as rec:
            out = lpg_expand(PlaneCoeffMap(theta, phi, n4, 2, 10.0))
            loss = ops.sum(out)
        rec.backward(loss)
        np.testing.assert_allclose(out.numpy(), 1.0 / EPS, rtol=1e-6)
        assert theta.grad.item() == 0.0 and phi.grad.item() == 0.0
        assert n4.grad.item() == pytest.approx(4 / EPS, rel=1e-6)


class TestExpand:
    def test_fronto_parallel_cell(self):
        out = lpg_expand(coeff_map(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), np.full((1, 1, 1, 1), 5.0), 2))
        np.testing.assert_array_equal(out.numpy(), np.full((1, 1, 2, 2), 5.0))

    def test_oblique_cell_matches_analytic_plane(self):
        theta, phi, n4 = 0.4, 1.1, 3.0
        want = analytic_patch(angles_to_normal(theta, phi), n4, 2)
        got = expand_planes(np.array([[theta]]), np.array([[phi]]), np.array([[n4]]), 2)
        np.testing.assert_allclose(got, want, rtol=1e-12)
        got32 = lpg_expand(coeff_map(*(np.full((1, 1, 1, 1), a) for a in (theta, phi, n4)), 2)).numpy()[0, 0]
        np.testing.assert_allclose(got32, want, rtol=1e-6)

    def test_layout_places_each_cell_in_its_patch(self):
        rng = np.random.default_rng(1)
        theta = rng.uniform(0, 0.8, (2, 1, 3, 2))
        phi = rng.uniform(-3, 3, theta.shape)
        n4 = rng.uniform(1, 9, theta.shape)
        k = 4
        out = lpg_expand(coeff_map(theta, phi, n4, k)).numpy()
        assert out.shape == (2, 1, 12, 8)
        for b in range(2):
            for r in range(3):
                for c in range(2):
                    n = angles_to_normal(theta[b, 0, r, c], phi[b, 0, r, c])
                    want = analytic_patch(n, n4[b, 0, r, c], k)
                    np.testing.assert_allclose(out[b, 0, k * r:k * r + k, k * c:k * c + k], want, rtol=1e-5)

    def test_patch_independence(self):
        rng = np.random.default_rng(2)
        theta = rng.uniform(0, 0.8, (1, 1, 3, 3))
        phi = rng.uniform(-3, 3, theta.shape)
        n4 = rng.uniform(1, 9, theta.shape)
        base = lpg_expand(coeff_map(theta, phi, n4, 2)).numpy()
        n4b = n4.copy()
        n4b[0, 0, 1, 2] += 0.5
        changed = lpg_expand(coeff_map(theta, phi, n4b, 2)).numpy() != base
        expect = np.zeros_like(changed)
        expect[0, 0, 2:4, 4:6] = True
        np.testing.assert_array_equal(changed, expect)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 9.99))
    def test_positive_and_bounded(self, theta, phi, n4):
        out = lpg_expand(coeff_map(*(np.full((1, 1, 1, 1), a) for a in (theta, phi, n4)), 4)).numpy()
        assert np.all(out > 0) and np.all(out < 10.0 / EPS * (1 + 1e-6))

    def test_grid_mismatch_rejected(self):
        cm = coeff_map(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)), 2)
        with pytest.raises(ValueError):
            lpg_expand(cm, patch_grid(4))

    def test_gradcheck_fifty_cells(self):
        # 10 sample points x (2 batches x 2 x 2 cells) covers well over 50 cells.
        result = check_op("lpg_expand", points=13, tol=1e-3, seed=3)
        assert result.passed, result.max_error


class TestReduction:
    @pytest.mark.parametrize(
        "c,widths", [(16, [16, 8, 4, 3]), (4, [4, 3]), (64, [64, 32, 16, 8, 4, 3]), (6, [6, 3]), (7, [7, 3])]
    )
    def test_widths(self, c, widths):
        assert reduction_widths(c) == widths

    def test_too_narrow(self):
        with pytest.raises(ValueError):
            reduction_widths(3)

    def test_zero_logit_gives_half_kappa(self):
        feats = Tensor(np.random.default_rng(0).standard_normal((1, 4, 2, 2)))
        w = Tensor(np.zeros((3, 4, 1, 1)))
        b = Tensor(np.zeros(3))
        cm = reduce_to_coeffs(feats, [(w, b)], kappa=10.0, k=2)
        np.testing.assert_allclose(cm.n4.numpy(), 5.0)
        assert cm.theta.shape == (1, 1, 2, 2)

    def test_channel_routing(self):
        feats = Tensor(np.ones((1, 4, 1, 1)))
        w = np.zeros((3, 4, 1, 1))
        b = np.array([0.3, -1.2, 2.0])
        cm = reduce_to_coeffs(feats, [(Tensor(w), Tensor(b))], kappa=8.0, k=2)
        assert cm.theta.item() == pytest.approx(0.3)
        assert cm.phi.item() == pytest.approx(-1.2)
        assert cm.n4.item() == pytest.approx(8.0 / (1 + math.exp(-2.0)), rel=1e-6)

    def test_layer_count_checked(self):
        with pytest.raises(ValueError):
            reduce_to_coeffs(Tensor(np.ones((1, 16, 1, 1))), [], kappa=1.0, k=2)


class TestPlaneFit:
    def test_init_at_truth_is_fixed_point(self):
        theta, phi, n4 = 0.3, 0.7, 4.0
        patch = expand_planes(np.array([[theta]]), np.array([[phi]]), np.array([[n4]]), 4)
        fit = fit_plane_to_patch(patch, patch_grid(4), init=(theta, phi, n4))
        assert fit.residual == 0.0 and fit.iterations == 0

    @pytest.mark.parametrize("seed", range(6))
    def test_random_plane_converges(self, seed):
        rng = np.random.default_rng(seed)
        k = (2, 4, 8)[seed % 3]
        while True:  # planes whose patch stays inside (0, kappa=10)
            theta, phi, n4 = rng.uniform(0, math.pi / 3), rng.uniform(-math.pi, math.pi), rng.uniform(1, 9)
            patch = expand_planes(np.array([[theta]]), np.array([[phi]]), np.array([[n4]]), k)
            if patch.max() < 10:
                break
        fit = fit_plane_to_patch(patch, patch_grid(k), iterations=2000, lr=0.05, rng=rng)
        assert fit.residual < 1e-3 * patch.mean()

    def test_lstsq_start_is_near_exact(self):
        patch = expand_planes(np.array([[0.5]]), np.array([[-2.0]]), np.array([[6.0]]), 8)
        fit = fit_plane_to_patch(patch, patch_grid(8), iterations=0, init="lstsq")
        assert fit.residual < 1e-9 * patch.mean()

    def test_near_pole_plane_converges(self):
        patch = expand_planes(np.array([[0.0233]]), np.array([[-2.466]]), np.array([[6.18]]), 4)
        fit = fit_plane_to_patch(patch, patch_grid(4), rng=np.random.default_rng(1))
        assert fit.residual < 1e-3 * patch.mean()

    def test_noise_patch_has_positive_residual(self):
        patch = np.random.default_rng(0).uniform(1, 5, (4, 4))
        fit = fit_plane_to_patch(patch, patch_grid(4), iterations=200)
        assert fit.residual > 0

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            fit_plane_to_patch(np.zeros((2, 2)), patch_grid(2))
