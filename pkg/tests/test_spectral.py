import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpaccel import spectral as sp
from fpaccel.errors import BoundUnavailableError


def _sorted(z):
    z = np.asarray(z, dtype=complex)
    return z[np.lexsort((np.round(z.imag, 9), np.round(z.real, 9)))]


def _stationary_state_map(G, c, variant, betas):
    """One step of the stationary recurrence on the stacked state (x_k, ..., x_{k-m})."""
    n = G.shape[0]
    m = len(betas) - 1 if variant == "sngmres" else len(betas)

    def q(x):
        return G @ x + c

    def step(state):
        xs = [state[i * n:(i + 1) * n] for i in range(m + 1)]
        qk = q(xs[0])
        if variant == "saa":
            new = qk + sum(b * (qk - q(xs[i])) for i, b in enumerate(betas, 1))
        elif variant == "sngmres":
            new = qk + sum(b * (qk - xs[i]) for i, b in enumerate(betas))
        else:
            new = qk + sum(b * (qk - xs[i]) for i, b in enumerate(betas, 1))
        return np.concatenate([new] + xs[:-1])
    return step, (m + 1) * n


class TestCompanion:
    def test_saa_zero_beta_decouples(self):
        Q = np.array([[0.5, 0.1], [0.0, -0.3]])
        T = sp.build_companion(Q, "saa", (0.0,)).matrix
        np.testing.assert_array_equal(T[:2, :2], Q)
        np.testing.assert_array_equal(T[:2, 2:], 0)
        np.testing.assert_array_equal(T[2:, :2], np.eye(2))
        ev = np.linalg.eigvals(T)
        nonzero = ev[np.abs(ev) > 1e-12]
        np.testing.assert_allclose(_sorted(nonzero), _sorted(np.linalg.eigvals(Q)), atol=1e-12)

    @pytest.mark.parametrize("mu,beta", [(0.75, 1 / 3), (-0.4, 0.2), (0.9, -0.5)])
    def test_scalar_saa_roots(self, mu, beta):
        ev = np.linalg.eigvals(sp.build_companion([[mu]], "saa", (beta,)).matrix)
        roots = np.roots([1, -(1 + beta) * mu, beta * mu])
        np.testing.assert_allclose(_sorted(ev), _sorted(roots), atol=1e-12)

    @pytest.mark.parametrize("mu,beta", [(0.6, 1 / 9), (-0.8, 0.3), (0.2, -0.7)])
    def test_scalar_sngmresr_roots(self, mu, beta):
        ev = np.linalg.eigvals(sp.build_companion([[mu]], "sngmresr", (beta,)).matrix)
        roots = np.roots([1, -(1 + beta) * mu, beta])
        np.testing.assert_allclose(_sorted(ev), _sorted(roots), atol=1e-12)

    @pytest.mark.parametrize("variant,betas", [("saa", (0.3, -0.2)), ("sngmres", (0.1, 0.4, -0.3)),
                                               ("sngmresr", (0.2, 0.1)), ("saa", (0.5,))])
    def test_matches_jacobian_of_recurrence(self, variant, betas):
        rng = np.random.default_rng(0)
        G = rng.standard_normal((4, 4)) * 0.4
        step, dim = _stationary_state_map(G, rng.standard_normal(4), variant, betas)
        base = rng.standard_normal(dim)
        J = np.column_stack([(step(base + e) - step(base - e)) / 2 for e in np.eye(dim)])
        np.testing.assert_allclose(sp.build_companion(G, variant, betas).matrix, J, atol=1e-12)

    def test_dimension(self):
        assert sp.build_companion(np.eye(3), "sngmres", (0.1, 0.2, 0.3)).matrix.shape == (9, 9)

    def test_quadratic_residual(self):
        rng = np.random.default_rng(1)
        G = rng.standard_normal((5, 5)) * 0.3
        beta = 0.37
        T = sp.build_companion(G, "saa", (beta,)).matrix
        mus = np.linalg.eigvals(G)
        for lam in np.linalg.eigvals(T):
            res = np.min(np.abs(lam ** 2 - (1 + beta) * mus * lam + beta * mus))
            assert res < 1e-10

    def test_bad_variant(self):
        with pytest.raises(ValueError):
            sp.build_companion(np.eye(2), "foo", (0.1,))


class TestModifiedSpectralRadius:
    def test_exclusion(self):
        rep = sp.modified_spectral_radius(np.diag([1.0, 1.0, 0.5, 0.3]), 2, 1.0)
        assert rep.rho == 0.5
        assert rep.num_excluded == 2

    def test_no_exclusion(self):
        assert sp.modified_spectral_radius(np.diag([0.2, -0.7]), 0).rho == pytest.approx(0.7)

    def test_double_root(self):
        T = sp.build_companion([[0.75]], "saa", (1 / 3,)).matrix
        assert sp.modified_spectral_radius(T, 0).rho == pytest.approx(0.5, abs=1e-7)

    def test_warns_when_excluded_is_far(self):
        with pytest.warns(UserWarning):
            sp.modified_spectral_radius(np.diag([0.9, 0.5]), 1, 1.0)

    def test_json(self, tmp_path):
        rep = sp.modified_spectral_radius(np.diag([1.0, 0.5]), 1)
        rep.kappa_bar, rep.L, rep.ell = 4.0, 2.0, 0.5
        data = json.loads(rep.to_json(tmp_path / "r.json"))
        assert set(data) == {"eigs_re", "eigs_im", "excluded", "rho", "kappa_bar", "L", "ell"}
        assert data["rho"] == 0.5


class TestOneStepOptimum:
    def test_saa_examples(self):
        assert sp.optimal_beta_step1_real(0.75, "saa") == pytest.approx((1 / 3, 0.5))
        assert sp.optimal_beta_step1_real(-3.0, "saa") == pytest.approx((-1 / 3, 1.0))
        assert sp.optimal_beta_step1_real(4.0, "saa") == (-1.0, 2.0)

    def test_sngmresr_example(self):
        beta, rho = sp.optimal_beta_step1_real(0.6, "sngmresr")
        assert (beta, rho) == pytest.approx((1 / 9, 1 / 3))
        assert rho == pytest.approx(np.sqrt(beta))
        assert sp.optimal_beta_step1_real(-1.5, "sngmresr") == (-1.0, 1.0)

    def test_saa_zero(self):
        with pytest.raises(ValueError):
            sp.optimal_beta_step1_real(0.0, "saa")

    @given(st.floats(-0.99, 0.99).filter(lambda v: abs(v) > 1e-3),
           st.sampled_from(["saa", "sngmresr"]))
    @settings(max_examples=40, deadline=None)
    def test_grid_oracle(self, mu, variant):
        beta, rho = sp.optimal_beta_step1_real(mu, variant)
        b = np.arange(-1, 1 + 1e-9, 1e-5)
        c = b * mu if variant == "saa" else b
        p = (1 + b) * mu
        disc = np.sqrt(p * p - 4 * c + 0j)
        radii = np.maximum(np.abs(p + disc), np.abs(p - disc)) / 2
        best = radii.min()
        assert best == pytest.approx(rho, abs=1e-3)
        assert best >= rho - 1e-8


class TestSdParams:
    def test_reference_row(self):
        rhos = [sp.optimal_sd_params(22.76, 1.0, v)[2] for v in sp.SD_VARIANTS]
        np.testing.assert_allclose(rhos[:3], [0.9158, 0.7904, 0.7597], atol=5e-4)
        assert abs(rhos[3] - 0.6534) < 5e-4

    @given(st.floats(0.01, 10), st.floats(1.01, 1e4))
    @settings(max_examples=50, deadline=None)
    def test_ordering(self, ell, ratio):
        L = ell * ratio
        r = {v: sp.optimal_sd_params(L, ell, v)[2] for v in sp.SD_VARIANTS}
        assert r["sngmresr_optimal"] < r["saa_optimal"] < r["saa_alpha_1_over_l"] < r["sd"]
        assert r["sngmresr_optimal"] < 1 - np.sqrt(4 * ell / (3 * L + ell))

    def test_sngmresr_beta_is_rho_squared(self):
        alpha, beta, rho = sp.optimal_sd_params(10.0, 1.0, "sngmresr_optimal")
        assert alpha == pytest.approx(2 / 11) and beta == pytest.approx(rho ** 2)

    def test_companion_radius_matches(self):
        L, ell = 30.0, 2.0
        for v, variant in (("saa_optimal", "saa"), ("saa_alpha_1_over_l", "saa"),
                           ("sngmresr_optimal", "sngmresr")):
            alpha, beta, rho = sp.optimal_sd_params(L, ell, v)
            T = sp.build_companion(np.diag([1 - alpha * ell, 1 - alpha * L]), variant, (beta,))
            assert sp.modified_spectral_radius(T.matrix, 0).rho == pytest.approx(rho, abs=1e-6)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sp.optimal_sd_params(1.0, 2.0, "sd")
        with pytest.raises(ValueError):
            sp.optimal_sd_params(2.0, 1.0, "nope")


class TestLowerBounds:
    def test_saa_value(self):
        assert sp.complex_lower_bound(0.6879, "saa")[0] == pytest.approx(0.4413, abs=1e-4)

    def test_sngmresr_value(self):
        assert sp.complex_lower_bound(0.688, "sngmresr")[0] == pytest.approx(0.3987, abs=2e-4)

    def test_small_limit(self):
        assert sp.complex_lower_bound(1e-12, "saa")[0] < 1e-11

    def test_out_of_range(self):
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                sp.complex_lower_bound(bad, "saa")

    def test_weaker_bound_uses_nonnegative_real(self):
        eigs = np.array([1.0, 0.8j, -0.8j, 0.5, -0.9])
        lower, _ = sp.weaker_saa_lower_bound(eigs, num_excluded=1)
        assert lower == pytest.approx(1 - np.sqrt(0.5))


class TestRectBounds:
    @pytest.mark.parametrize("r1", [0.1, 0.5, 0.9])
    def test_real_box_collapses(self, r1):
        d1, d2, _ = sp.rect_bounds_sngmres_r1(r1, 0.0)
        assert d1 == pytest.approx(sp.complex_lower_bound(r1, "sngmresr")[0], abs=1e-10)
        assert d1 <= d2 + 1e-12

    def test_square_box_has_no_upper(self):
        d1, d2, a = sp.rect_bounds_sngmres_r1(0.4, 0.4)
        assert d2 is None and a is None
        assert d1 == pytest.approx(0.4 / (1 + np.sqrt(1 - 0.16)))

    @given(st.floats(0.01, 0.95), st.floats(0.0, 0.95))
    @settings(max_examples=40, deadline=None)
    def test_ordering(self, r1, r2):
        if abs(r1 - r2) < 1e-6:
            return
        try:
            d1, d2, _ = sp.rect_bounds_sngmres_r1(r1, r2)
        except BoundUnavailableError:
            return
        assert d1 <= d2 + 1e-9

    def test_upper_bounds_brute_force_on_box(self):
        r1, r2 = 0.6, 0.2
        d1, d2, _ = sp.rect_bounds_sngmres_r1(r1, r2)
        xs, ys = np.meshgrid(np.linspace(-r1, r1, 9), np.linspace(-r2, r2, 5))
        mus = (xs + 1j * ys).ravel()
        _, rho = sp.brute_force_beta(mus, "sngmresr", 1, grid=(-1, 1, 0.005))
        # the coefficient grid step limits how close rho gets to the optimum
        assert d1 - 1e-9 <= rho <= d2 + 1e-3

    def test_unavailable(self):
        with pytest.raises(BoundUnavailableError) as info:
            sp.rect_bounds_sngmres_r1(0.9999995, 0.1)
        assert info.value.delta1 is not None

    def test_invalid(self):
        with pytest.raises(ValueError):
            sp.rect_bounds_sngmres_r1(0.0, 0.0)


class TestBruteForce:
    def test_fine_grid_matches_closed_form(self):
        beta, rho = sp.brute_force_beta(np.diag([0.75]), "saa", 1, grid=(-1, 1, 1e-3))
        assert beta[0] == pytest.approx(1 / 3, abs=1e-3)
        assert rho == pytest.approx(0.5, abs=1e-3)

    def test_grid_containing_optimum(self):
        beta, _ = sp.brute_force_beta(np.array([0.6]), "sngmresr", 1,
                                      grid=np.array([-0.5, 0.0, 1 / 9, 0.5]))
        assert beta[0] == 1 / 9

    def test_lexicographic_tie_break(self):
        # for q' = 0 every sAA coefficient gives radius 0
        beta, rho = sp.brute_force_beta(np.zeros((1, 1)), "saa", 2, grid=(-1, 1, 0.5))
        assert rho == 0 and list(beta) == [-1.0, -1.0]

    @pytest.mark.parametrize("variant", ["saa", "sngmres", "sngmresr"])
    @pytest.mark.parametrize("m", [1, 2])
    def test_scalar_matches_companion(self, variant, m):
        rng = np.random.default_rng(m)
        G = rng.standard_normal((5, 5)) * 0.25
        G = G + np.outer(np.eye(5)[0], np.eye(5)[0]) * (1 - np.linalg.eigvals(G).real.max())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = sp.brute_force_beta(G, variant, m, grid=(-1, 1, 0.25), num_excluded=0)
            b = sp.brute_force_beta(G, variant, m, grid=(-1, 1, 0.25), num_excluded=0,
                                    method="companion")
        assert a[1] == pytest.approx(b[1], abs=1e-9)

    def test_exclusion_keeps_other_roots(self):
        # the excluded unit eigenvalue still contributes the root lambda = beta for sAA(1)
        mus = np.array([1.0, 0.1])
        beta, rho = sp.brute_force_beta(mus, "saa", 1, grid=np.array([0.9]), num_excluded=1)
        T = sp.build_companion(np.diag(mus), "saa", (0.9,)).matrix
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ref = sp.modified_spectral_radius(T, 1, 1.0).rho
        assert rho == pytest.approx(ref) and rho == pytest.approx(0.9)

    def test_pruning_is_exact(self):
        rng = np.random.default_rng(7)
        mus = 0.8 * rng.uniform(-1, 1, 60) + 0.2j * rng.uniform(-1, 1, 60)
        full = sp._scalar_radii(mus.astype(complex), "sngmres",
                                np.array(np.meshgrid(*[np.arange(-1, 1.01, 0.1)] * 3))
                                .reshape(3, -1).T[np.lexsort(np.array(np.meshgrid(
                                    *[np.arange(-1, 1.01, 0.1)] * 3)).reshape(3, -1)[::-1])])
        beta, rho = sp.brute_force_beta(mus, "sngmres", 2, grid=(-1, 1, 0.1))
        assert rho == pytest.approx(full.min(), abs=1e-12)

    def test_bad_m(self):
        with pytest.raises(ValueError):
            sp.brute_force_beta(np.eye(2) * 0.5, "saa", 3)
