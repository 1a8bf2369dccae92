import json
import math
from importlib import resources

import numpy as np
import pytest

from ringlab import kernel as kn


@pytest.fixture(scope="module")
def golden():
    with resources.files("ringlab.data").joinpath(
        "kernel_golden.json"
    ).open() as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def table():
    return kn.default_table()


class TestFEval:
    def test_golden_values(self, golden):
        for s_txt, val in golden["F"].items():
            got = kn.f_eval(float(s_txt))
            assert got == pytest.approx(val, rel=1e-11), s_txt

    def test_small_s_two_term_series(self):
        for s in (1e-3, 3e-4, 1e-4, 1e-5):
            two_term = 0.5 * math.log(1.0 / s) + math.log(8.0) - 2.0
            assert abs(kn.f_eval(s) - two_term) <= 2.0 * s * math.log(1.0 / s)

    def test_large_s_asymptotic(self):
        s = 1e4
        assert s**1.5 * kn.f_eval(s) == pytest.approx(math.pi / 2.0, rel=0.01)

    def test_vectorized_matches_scalar(self):
        s = np.geomspace(1e-3, 1e3, 17)
        batch = kn.f_eval(s)
        singles = np.array([kn.f_eval(float(v)) for v in s])
        np.testing.assert_array_equal(batch, singles)

    def test_scipy_quad_oracle(self):
        from scipy.integrate import quad

        for s in np.geomspace(1e-4, 1e2, 25):
            oracle, _ = quad(
                lambda p: np.cos(p) * (4.0 * np.sin(p / 2) ** 2 + s) ** -0.5,
                0.0, np.pi, epsabs=1e-14, epsrel=1e-13, limit=400,
            )
            assert kn.f_eval(float(s)) == pytest.approx(oracle, rel=1e-9)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            kn.f_eval(0.0)
        with pytest.raises(ValueError):
            kn.f_eval(-1.0)
        with pytest.raises(ValueError):
            kn.f_eval(np.array([1.0, -2.0]))

    def test_subdivision_budget_error(self):
        cfg = kn.KernelConfig(quad_abs_tol=1e-12, quad_max_subdiv=2)
        with pytest.raises(kn.QuadratureError) as exc:
            kn.f_eval(1e-4, config=cfg)
        assert exc.value.residual > 0.0

    def test_ultra_small_s_uses_series(self):
        s = 1e-16
        vals, tags, errs = kn.f_details(np.array([s]))
        assert tags[0] == "series"
        assert vals[0] == pytest.approx(0.5 * math.log(1 / s) + math.log(8) - 2,
                                        rel=1e-12)


class TestFDeriv:
    def test_golden_first(self, golden):
        for s_txt, val in golden["F1"].items():
            assert kn.f_deriv(float(s_txt), 1) == pytest.approx(val, rel=1e-11)

    def test_golden_second(self, golden):
        for s_txt, val in golden["F2"].items():
            assert kn.f_deriv(float(s_txt), 2) == pytest.approx(val, rel=1e-11)

    def test_finite_difference_consistency(self):
        for s in (0.01, 0.3, 2.0, 40.0):
            h = 1e-6 * s
            fd = (kn.f_eval(s + h) - kn.f_eval(s - h)) / (2 * h)
            assert kn.f_deriv(s, 1) == pytest.approx(fd, rel=1e-6)

    def test_second_derivative_fd(self):
        for s in (0.5, 5.0):
            h = 1e-4 * s
            fd = (kn.f_deriv(s + h, 1) - kn.f_deriv(s - h, 1)) / (2 * h)
            assert kn.f_deriv(s, 2) == pytest.approx(fd, rel=1e-5)

    def test_uniform_bound_s32(self):
        # |F'(s)| s^{3/2} bounded on a log grid spanning both asymptotics
        s = np.geomspace(1e-4, 1e4, 81)
        vals = np.abs(kn.f_deriv(s, 1)) * s**1.5
        assert np.all(np.isfinite(vals))
        assert vals.max() < 2.0

    def test_bad_order(self):
        with pytest.raises(ValueError):
            kn.f_deriv(1.0, 3)


class TestEnvelopes:
    def test_f_envelope(self):
        s = np.geomspace(1e-4, 1e4, 200)
        F = kn.f_eval(s)
        env = F * np.minimum.reduce([s**0.5, s**1.5, s**0.25])
        assert np.all(np.isfinite(env))
        assert env.max() < 3.0

    def test_fprime_envelope(self):
        s = np.geomspace(1e-4, 1e4, 200)
        Fp = np.abs(kn.f_deriv(s, 1))
        env = Fp * np.minimum.reduce([s, s**1.5, s**2.5])
        assert env.max() < 3.0

    def test_sign_structure(self):
        cfg = kn.DEFAULT_CONFIG
        for s in np.geomspace(1e-6, cfg.s_small, 12):
            assert kn.f_eval(float(s)) > 0.0
        for s in np.geomspace(cfg.s_large, 1e6, 12):
            assert kn.f_eval(float(s)) > 0.0


class TestConfig:
    def test_default_validates(self):
        kn.DEFAULT_CONFIG.validate()

    def test_regime_continuity_at_switch_points(self):
        cfg = kn.DEFAULT_CONFIG
        for s0 in (cfg.s_small, cfg.s_large):
            lo = kn.f_eval(s0 * (1 - 1e-6))
            hi = kn.f_eval(s0 * (1 + 1e-6))
            # strategies on both sides evaluated at the same point
            mid = kn.f_eval(s0)
            assert abs(lo - mid) < abs(kn.f_deriv(s0, 1)) * s0 * 2e-6 * 1.1
            assert abs(hi - mid) < abs(kn.f_deriv(s0, 1)) * s0 * 2e-6 * 1.1

    def test_bad_ordering_rejected(self):
        with pytest.raises(ValueError):
            kn.KernelConfig(s_small=2.0)
        with pytest.raises(ValueError):
            kn.KernelConfig(s_large=0.5)
        with pytest.raises(ValueError):
            kn.KernelConfig(quad_abs_tol=0.0)
        with pytest.raises(ValueError):
            kn.KernelConfig(quad_max_subdiv=0)


class TestKernels:
    def test_g_golden(self, golden):
        got = kn.kernel_g(1.0, 0.0, 1.0, 1.0)
        assert got == pytest.approx(golden["kernel_g_1_0_1_1"], rel=1e-11)

    def test_g_symmetry(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            a, c = rng.uniform(0.2, 3.0, 2)
            b, d = rng.uniform(-2.0, 2.0, 2)
            assert kn.kernel_g(a, b, c, d) == pytest.approx(
                kn.kernel_g(c, d, a, b), rel=1e-12)

    def test_g_scaling(self):
        lam = 2.0
        base = kn.kernel_g(1.3, 0.4, 0.7, -0.2)
        assert kn.kernel_g(lam * 1.3, lam * 0.4, lam * 0.7, lam * -0.2) == \
            pytest.approx(lam * base, rel=1e-12)

    def test_ur_golden(self, golden):
        got = kn.kernel_ur(1.0, 0.0, 2.0, 1.0)
        assert got == pytest.approx(golden["kernel_ur_1_0_2_1"], rel=1e-11)

    def test_ur_vanishes_on_plane(self):
        assert kn.kernel_ur(1.5, 0.7, 0.9, 0.7) == 0.0

    def test_ur_antisymmetry(self):
        for r, z in ((1.5, 0.8), (0.7, 2.0)):
            assert kn.kernel_ur(1.0, 0.0, r, z) == pytest.approx(
                -kn.kernel_ur(1.0, 0.0, r, -z), rel=1e-12)

    def test_uz_golden(self, golden):
        got = kn.kernel_uz(1.0, 0.0, 2.0, 1.0)
        assert got == pytest.approx(golden["kernel_uz_1_0_2_1"], rel=1e-11)

    def test_uz_explicit_two_term_form(self):
        # at (rb, zb) = (1, 0) the kernel reduces to the explicit expression
        rng = np.random.default_rng(3)
        for _ in range(20):
            r = rng.uniform(0.2, 3.0)
            z = rng.uniform(-2.0, 2.0)
            xi2 = ((r - 1.0) ** 2 + z**2) / r
            explicit = ((1.0 - r) / (np.pi * np.sqrt(r)) * kn.f_deriv(xi2, 1)
                        + np.sqrt(r) / (4.0 * np.pi)
                        * (kn.f_eval(xi2) - 2.0 * xi2 * kn.f_deriv(xi2, 1)))
            assert kn.kernel_uz(1.0, 0.0, r, z) == pytest.approx(
                explicit, rel=1e-12)

    def test_uz_is_radial_derivative_of_g(self):
        # K_z = (1/rb) dG/drb by centered finite differences
        h = 1e-5
        for rb, zb, r, z in ((1.0, 0.0, 1.7, 0.4), (1.4, -0.3, 0.8, 0.9)):
            fd = (kn.kernel_g(rb + h, zb, r, z)
                  - kn.kernel_g(rb - h, zb, r, z)) / (2 * h * rb)
            assert kn.kernel_uz(rb, zb, r, z) == pytest.approx(fd, rel=1e-5)

    def test_ur_is_z_derivative_of_g(self):
        h = 1e-5
        for rb, zb, r, z in ((1.0, 0.0, 1.7, 0.4), (1.4, -0.3, 0.8, 0.9)):
            fd = -(kn.kernel_g(rb, zb + h, r, z)
                   - kn.kernel_g(rb, zb - h, r, z)) / (2 * h * rb)
            assert kn.kernel_ur(rb, zb, r, z) == pytest.approx(fd, rel=1e-5)

    def test_uz_far_field_envelope(self):
        # |K_z(1,0,r,0)| d^3 / r^2 stays bounded as r grows
        r = np.linspace(4.0, 100.0, 25)
        vals = np.abs(kn.kernel_uz(1.0, 0.0, r, np.zeros_like(r)))
        env = vals * np.abs(r - 1.0) ** 3 / r**2
        assert env.max() < 1.0

    def test_smoothness_second_order_fd(self):
        # off-diagonal the kernel is smooth: centered differences converge
        # at second order
        rb, zb, r, z = 1.2, 0.1, 0.8, 0.5
        exact = kn.kernel_uz(rb, zb, r, z) * rb  # dG/drb
        errs = []
        for h in (1e-2, 5e-3):
            fd = (kn.kernel_g(rb + h, zb, r, z)
                  - kn.kernel_g(rb - h, zb, r, z)) / (2 * h)
            errs.append(abs(fd - exact))
        order = math.log2(errs[0] / errs[1])
        assert order > 1.8

    def test_coincident_point_error(self):
        with pytest.raises(kn.SingularPointError):
            kn.kernel_g(1.0, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            kn.kernel_g(1.0, 0.0, -1.0, 0.5)


class TestKernelTable:
    def test_table_matches_exact(self, table):
        rng = np.random.default_rng(11)
        s = np.exp(rng.uniform(np.log(1e-9), np.log(1e9), 300))
        np.testing.assert_allclose(table.f(s), kn.f_eval(s), rtol=2e-9)
        np.testing.assert_allclose(table.fp(s), kn.f_deriv(s, 1), rtol=2e-9)

    def test_table_out_of_range_falls_back(self, table):
        s = np.array([1e-14, 1e14])
        np.testing.assert_allclose(table.f(s), kn.f_eval(s), rtol=1e-9)

    def test_table_kernels(self, table):
        got = table.uz(1.0, 0.0, 2.0, 1.0)
        assert got == pytest.approx(kn.kernel_uz(1.0, 0.0, 2.0, 1.0),
                                    rel=1e-8)


class TestTabulate:
    def test_monotone_and_tagged(self):
        rows = kn.tabulate(1e-4, 1e4, 60)
        assert len(rows) == 60
        F = [r[1] for r in rows]
        assert all(a > b for a, b in zip(F, F[1:]))
        tags = {r[3] for r in rows}
        assert tags <= {"series", "small-quad", "quad", "asym"}
        assert "quad" in tags and "asym" in tags
        assert all(r[4] >= 0.0 for r in rows)

    def test_single_row(self):
        rows = kn.tabulate(0.5, 17.0, 1)
        assert len(rows) == 1
        assert rows[0][0] == 0.5

    def test_bad_range(self):
        with pytest.raises(ValueError):
            kn.tabulate(-1.0, 1.0, 10)
        with pytest.raises(ValueError):
            kn.tabulate(1.0, 0.5, 10)
        with pytest.raises(ValueError):
            kn.tabulate(1.0, 2.0, 0)
