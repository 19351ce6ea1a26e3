"""Grid projection tests: backfitting, concave residual fits, closed forms."""

import numpy as np
import pytest

from acdcreg.population import (
    CANONICAL_EXAMPLES,
    GridDensity,
    GridFunction,
    additive_projection_grid,
    canonical_example,
    decoupled_concave_projection_grid,
    gaussian_quadratic_projection,
)

H_REF = np.array([[1.6, 2.0], [2.0, 5.0]])


def uniform_square(lo=0.0, hi=1.0, m=41):
    ax = np.linspace(lo, hi, m)
    vol = (hi - lo) ** 2
    return (ax, ax), np.full((m, m), 1.0 / vol)


# ---------------------------------------------------------------------------


class TestGridDensity:
    def test_uniform_mass_is_one(self):
        axes, w = uniform_square()
        dens = GridDensity(axes, w)
        assert abs(dens.mass() - 1.0) <= 1e-12
        np.testing.assert_allclose(dens.marginal(0).sum(), 1.0, atol=1e-12)

    def test_wrong_mass_rejected(self):
        axes, w = uniform_square()
        with pytest.raises(ValueError, match="mass"):
            GridDensity(axes, 2.0 * w)

    def test_negative_values_rejected(self):
        axes, w = uniform_square()
        w = w.copy()
        w[3, 3] = -w[3, 3]
        with pytest.raises(ValueError, match="nonnegative"):
            GridDensity(axes, w)

    def test_shape_mismatch_rejected(self):
        axes, w = uniform_square()
        with pytest.raises(ValueError, match="shape"):
            GridDensity(axes, w[:-1, :])

    def test_unsorted_axis_rejected(self):
        axes, w = uniform_square()
        bad = (axes[0][::-1].copy(), axes[1])
        with pytest.raises(ValueError, match="increasing"):
            GridDensity(bad, w)

    def test_dimension_cap(self):
        ax = np.linspace(0.0, 1.0, 5)
        w = np.full((5, 5, 5, 5), 1.0)
        with pytest.raises(ValueError, match="dimension"):
            GridDensity((ax, ax, ax, ax), w)

    def test_three_dims_supported(self):
        ax = np.linspace(0.0, 1.0, 9)
        dens = GridDensity((ax, ax, ax), np.full((9, 9, 9), 1.0))
        assert dens.dim == 3
        assert abs(dens.mass() - 1.0) <= 1e-12

    def test_weights_read_only(self):
        axes, w = uniform_square()
        dens = GridDensity(axes, w)
        with pytest.raises(ValueError):
            dens.weights[0, 0] = 5.0


class TestGridFunction:
    def test_nonfinite_rejected(self):
        ax = np.linspace(0.0, 1.0, 5)
        vals = np.zeros((5, 5))
        vals[2, 2] = np.nan
        with pytest.raises(ValueError, match="finite"):
            GridFunction((ax, ax), vals)

    def test_shape_mismatch_rejected(self):
        ax = np.linspace(0.0, 1.0, 5)
        with pytest.raises(ValueError, match="shape"):
            GridFunction((ax, ax), np.zeros((5, 4)))


# ---------------------------------------------------------------------------


class TestAdditiveProjection:
    def test_additive_input_is_fixed_point(self):
        rng = np.random.default_rng(7)
        ax1 = np.sort(rng.uniform(-1.0, 1.0, 31))
        ax2 = np.sort(rng.uniform(0.0, 2.0, 27))
        w1 = 1.0 + 0.4 * np.sin(3.0 * ax1)
        w2 = np.exp(-ax2)
        vals = w1[:, None] * w2[None, :]
        q1 = np.zeros_like(ax1)
        q1[:-1] += 0.5 * np.diff(ax1)
        q1[1:] += 0.5 * np.diff(ax1)
        q2 = np.zeros_like(ax2)
        q2[:-1] += 0.5 * np.diff(ax2)
        q2[1:] += 0.5 * np.diff(ax2)
        vals /= (vals * q1[:, None] * q2[None, :]).sum()
        dens = GridDensity((ax1, ax2), vals)
        g1 = ax1 ** 2
        g2 = np.abs(ax2 - 0.8)
        f = GridFunction((ax1, ax2), g1[:, None] + g2[None, :])
        res = additive_projection_grid(f, dens)
        m1 = dens.marginal(0)
        m2 = dens.marginal(1)
        want1 = g1 - (m1 / m1.sum()) @ g1
        want2 = g2 - (m2 / m2.sum()) @ g2
        np.testing.assert_allclose(res.components[0].values, want1, atol=1e-10)
        np.testing.assert_allclose(res.components[1].values, want2, atol=1e-10)
        assert res.residual_norm <= 1e-10
        assert res.converged

    def test_doubly_odd_surface_projects_to_zero(self):
        f, dens = canonical_example("egg-carton")
        res = additive_projection_grid(f, dens)
        for comp in res.components:
            assert np.abs(comp.values).max() <= 1e-8
        assert abs(res.mu_star) <= 1e-10

    def test_half_plane_tilt_drops_second_coordinate(self):
        f, dens = canonical_example("tilting-slope")
        res = additive_projection_grid(f, dens)
        c1, c2 = res.components
        assert np.abs(c2.values).max() <= 1e-8
        np.testing.assert_allclose(c1.values, 0.5 * c1.axes[0], atol=1e-8)

    def test_mean_matches_quadrature(self):
        f, dens = canonical_example("gaussian-quadratic")
        res = additive_projection_grid(f, dens)
        direct = float((dens.cell_masses() * f.values).sum())
        assert abs(res.mu_star - direct) <= 1e-10

    def test_components_centered_against_marginals(self):
        f, dens = canonical_example("gaussian-quadratic", alpha=-0.3)
        res = additive_projection_grid(f, dens)
        for k, comp in enumerate(res.components):
            marg = dens.marginal(k)
            assert abs(marg @ comp.values) / marg.sum() <= 1e-8

    def test_product_density_needs_no_iteration(self):
        # under a product density the projection is the per-coordinate
        # conditional mean, no backfitting coupling at all
        rng = np.random.default_rng(11)
        m = 33
        ax = np.linspace(-1.0, 1.0, m)
        w1 = 1.0 + 0.5 * np.sin(2.0 * ax)
        w2 = 1.1 + ax / 3.0
        vals = np.outer(w1, w2)
        q = np.zeros(m)
        q[:-1] += 0.5 * np.diff(ax)
        q[1:] += 0.5 * np.diff(ax)
        vals /= (vals * np.outer(q, q)).sum()
        dens = GridDensity((ax, ax), vals)
        fv = np.outer(ax, ax ** 2) + rng.normal(size=(m, m)) * 0.0
        fv = fv + np.outer(ax ** 3, np.ones(m))
        f = GridFunction((ax, ax), fv)
        res = additive_projection_grid(f, dens)
        masses = dens.cell_masses()
        mu = (masses * fv).sum()
        for k in range(2):
            other = 1 - k
            cond = (masses * fv).sum(axis=other) / masses.sum(axis=other)
            marg = dens.marginal(k)
            want = cond - mu
            want = want - (marg / marg.sum()) @ want
            np.testing.assert_allclose(res.components[k].values, want,
                                       atol=1e-9)

    def test_sweep_cap_reports_nonconvergence(self):
        f, dens = canonical_example("gaussian-quadratic", alpha=-0.6)
        res = additive_projection_grid(f, dens, max_sweeps=1)
        assert res.iterations == 1
        assert not res.converged
        assert res.residual_norm > 1e-10

    def test_zero_mass_slice_rejected(self):
        axes, w = uniform_square(m=21)
        w = w.copy()
        w[:, 10] = 0.0
        q = np.zeros(21)
        q[:-1] += 0.5 * np.diff(axes[0])
        q[1:] += 0.5 * np.diff(axes[0])
        w /= (w * np.outer(q, q)).sum()
        dens = GridDensity(axes, w)
        f = GridFunction(axes, np.outer(axes[0], axes[1]))
        with pytest.raises(ValueError, match="zero-mass"):
            additive_projection_grid(f, dens)

    def test_axis_mismatch_rejected(self):
        f, dens = canonical_example("egg-carton")
        other = canonical_example("egg-carton", resolution=51)[1]
        with pytest.raises(ValueError, match="axes"):
            additive_projection_grid(f, other)


# ---------------------------------------------------------------------------


class TestConcaveResidualFit:
    def test_convex_additive_leaves_nothing(self):
        # even convex components on a symmetric grid: the whole residual
        # sits in the polar cone, so the concave fit is zero
        m = 41
        ax = np.linspace(-1.0, 1.0, m)
        axes, w = uniform_square(-1.0, 1.0, m)
        dens = GridDensity(axes, w)
        f = GridFunction(axes, (ax ** 2)[:, None] + (ax ** 2)[None, :])
        res = additive_projection_grid(f, dens)
        for k in range(2):
            g = decoupled_concave_projection_grid(f, dens, res, k)
            assert np.abs(g.values).max() <= 1e-8

    def test_constant_function_gives_zero(self):
        axes, w = uniform_square(m=21)
        dens = GridDensity(axes, w)
        f = GridFunction(axes, np.full((21, 21), 3.0))
        res = additive_projection_grid(f, dens)
        g = decoupled_concave_projection_grid(f, dens, res, 0)
        assert np.abs(g.values).max() <= 1e-10

    def test_recovers_concave_component_past_critical_correlation(self):
        # past the correlation where the first quadratic coefficient
        # turns negative, the convex stage has nothing to offer and the
        # concave pass picks up the full quadratic
        f, dens = canonical_example("gaussian-quadratic", alpha=-0.6)
        res = additive_projection_grid(f, dens)
        g = decoupled_concave_projection_grid(f, dens, res, 0)
        assert np.abs(g.values).max() > 0.01
        ax = g.axes[0]
        marg = dens.marginal(0)
        marg = marg / marg.sum()
        design = np.stack([ax ** 2, ax, np.ones_like(ax)], axis=1)
        wdes = design * marg[:, None]
        coef = np.linalg.solve(design.T @ wdes, wdes.T @ g.values)
        a1, _ = gaussian_quadratic_projection(H_REF, -0.6)
        np.testing.assert_allclose(coef[0], a1, rtol=1e-3)
        gaps = np.diff(ax)
        div2 = (np.diff(g.values[1:]) / gaps[1:]
                - np.diff(g.values[:-1]) / gaps[:-1])
        assert div2.max() <= 1e-8
        assert abs(marg @ g.values) <= 1e-10

    def test_critical_correlation_leaves_zero_residual(self):
        # at the exactly-critical correlation the conditional-mean
        # residual vanishes identically and so does the concave fit
        f, dens = canonical_example("gaussian-quadratic", alpha=-0.5)
        res = additive_projection_grid(f, dens)
        g = decoupled_concave_projection_grid(f, dens, res, 0)
        assert np.abs(g.values).max() <= 1e-8

    def test_out_of_range_coordinate(self):
        f, dens = canonical_example("egg-carton", resolution=21)
        res = additive_projection_grid(f, dens)
        with pytest.raises(IndexError):
            decoupled_concave_projection_grid(f, dens, res, 2)


# ---------------------------------------------------------------------------


class TestGaussianClosedForm:
    def test_critical_correlation_zeroes_first_component(self):
        a1, a2 = gaussian_quadratic_projection(H_REF, -0.5)
        assert abs(a1) <= 1e-12
        np.testing.assert_allclose(a2, 3.4, atol=1e-12)

    def test_independent_case_reads_off_diagonal(self):
        a1, a2 = gaussian_quadratic_projection(H_REF, 0.0)
        np.testing.assert_allclose([a1, a2], [1.6, 5.0], atol=1e-14)

    def test_past_critical_coefficients(self):
        a1, a2 = gaussian_quadratic_projection(H_REF, -0.6)
        np.testing.assert_allclose(a1, -0.1647058823529411, atol=1e-12)
        np.testing.assert_allclose(a2, 3.235294117647059, atol=1e-12)

    def test_swapping_diagonal_swaps_components(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            b = rng.normal(size=(2, 2))
            H = b @ b.T + 0.5 * np.eye(2)
            alpha = rng.uniform(-0.9, 0.9)
            a1, a2 = gaussian_quadratic_projection(H, alpha)
            swapped = np.array([[H[1, 1], H[0, 1]], [H[0, 1], H[0, 0]]])
            b1, b2 = gaussian_quadratic_projection(swapped, alpha)
            np.testing.assert_allclose([a1, a2], [b2, b1], atol=1e-10)

    def test_grid_projection_matches_closed_form(self):
        for alpha in (-0.3, 0.25):
            f, dens = canonical_example("gaussian-quadratic", alpha=alpha)
            res = additive_projection_grid(f, dens)
            want = gaussian_quadratic_projection(H_REF, alpha)
            for k in range(2):
                ax = res.components[k].axes[0]
                marg = dens.marginal(k)
                marg = marg / marg.sum()
                design = np.stack([ax ** 2, ax, np.ones_like(ax)], axis=1)
                wdes = design * marg[:, None]
                coef = np.linalg.solve(design.T @ wdes,
                                       wdes.T @ res.components[k].values)
                assert abs(coef[0] - want[k]) <= 0.02 * max(1.0, abs(want[k]))

    def test_degenerate_correlation_rejected(self):
        for alpha in (-1.0, 1.0, 1.3):
            with pytest.raises(ValueError, match="alpha"):
                gaussian_quadratic_projection(H_REF, alpha)

    def test_bad_matrix_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            gaussian_quadratic_projection([[1.0, 0.5], [0.2, 1.0]], 0.1)
        with pytest.raises(ValueError, match="definite"):
            gaussian_quadratic_projection([[1.0, 2.0], [2.0, 1.0]], 0.1)
        with pytest.raises(ValueError, match="2x2"):
            gaussian_quadratic_projection(np.eye(3), 0.1)


# ---------------------------------------------------------------------------


class TestCanonicalExamples:
    def test_names_cover_catalog(self):
        for name in CANONICAL_EXAMPLES:
            f, dens = canonical_example(name)
            assert f.axes == dens.axes
            assert abs(dens.mass() - 1.0) <= 1e-8

    def test_doubly_odd_surface_peak(self):
        f, dens = canonical_example("egg-carton")
        i = int(np.searchsorted(f.axes[0], 0.25))
        assert f.axes[0][i] == 0.25
        np.testing.assert_allclose(f.values[i, i], 1.0, atol=1e-12)
        assert np.ptp(dens.weights) <= 1e-12

    def test_tilt_corner_value(self):
        f, _ = canonical_example("tilting-slope")
        np.testing.assert_allclose(f.values[0, -1], -1.0, atol=1e-14)

    def test_mixture_density_strictly_positive(self):
        _, dens = canonical_example("boundary-flat-mixture")
        assert dens.weights.min() > 0.0
        assert dens.axes[0][0] == -5.3 and dens.axes[0][-1] == 5.3
        assert abs(dens.mass() - 1.0) <= 1e-8

    def test_truncated_gaussian_domain(self):
        f, dens = canonical_example("gaussian-quadratic")
        assert dens.axes[0].shape == (201,)
        assert dens.axes[0][0] == -5.0 and dens.axes[0][-1] == 5.0
        # corners of the box carry next to no mass but stay nonnegative
        assert dens.weights.min() >= 0.0

    def test_resolution_override(self):
        f, dens = canonical_example("egg-carton", resolution=51)
        assert f.axes[0].shape == (51,)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown example"):
            canonical_example("saddle")

    def test_bad_mixture_params_rejected(self):
        with pytest.raises(ValueError, match="weight"):
            canonical_example("boundary-flat-mixture", weight=0.0)
        with pytest.raises(ValueError, match="eps"):
            canonical_example("boundary-flat-mixture", eps=-0.1)
        with pytest.raises(ValueError, match="alpha"):
            canonical_example("gaussian-quadratic", alpha=1.0)


class TestMixtureTrend:
    def test_first_component_magnitude_shrinks_with_weight(self):
        # the wider-uniform mixture keeps the dropped coordinate alive;
        # its weighted squared magnitude falls with the mixture weight
        # but never reaches zero
        mags = []
        for weight in (1e-2, 1e-3, 1e-4):
            f, dens = canonical_example("boundary-flat-mixture",
                                        weight=weight)
            res = additive_projection_grid(f, dens)
            c1 = res.components[0]
            marg = dens.marginal(0)
            marg = marg / marg.sum()
            mags.append(float(marg @ (c1.values ** 2)))
        assert mags[0] > mags[1] > mags[2] > 0.0
        np.testing.assert_allclose(
            mags, [3.942250, 0.3622958, 0.02846536], rtol=1e-5)
        assert mags[2] < 0.05
