import math

import numpy as np
import pytest

from ringlab import biot_savart as bs
from ringlab import fields as fl
from ringlab import kernel as kn


@pytest.fixture(scope="module")
def table():
    return kn.default_table()


@pytest.fixture(scope="module")
def ring_omega(table):
    g = fl.GridSpec(160, 256, 4.0, -3.2, 3.2)
    eta = fl.make_mollified_ring(g, [fl.RingSpec(1.0, 1.0, 0.0, 0.1)])
    return fl.ScalarFieldRZ(g, g.r_nodes()[:, None] * eta.values)


@pytest.fixture(scope="module")
def thin_ring_omega():
    # eps/r0 = 0.02 needs dr <= eps/4 = 0.005 near the core
    g = fl.GridSpec(320, 320, 1.6, -0.8, 0.8)
    eta = fl.make_mollified_ring(g, [fl.RingSpec(1.0, 1.0, 0.0, 0.02)])
    return fl.ScalarFieldRZ(g, g.r_nodes()[:, None] * eta.values)


def mms_setup(n, L=3.0):
    g = fl.GridSpec(n, n, L, -L, L)
    r = g.r_nodes()[:, None]
    z = g.z_nodes()[None, :]
    gauss = np.exp(-(r**2) - z**2)
    psi_exact = r**2 * gauss
    omega = fl.ScalarFieldRZ(g, -2.0 * r * (2 * r**2 + 2 * z**2 - 5.0) * gauss)
    edges = {"bottom": psi_exact[:, 0].copy(), "top": psi_exact[:, -1].copy(),
             "right": psi_exact[-1, 1:-1].copy()}
    return g, omega, edges, psi_exact


class TestStreamDirect:
    def test_thin_ring_matches_point_kernel(self, thin_ring_omega, table):
        pts = [(1.3, 0.2), (0.7, -0.4), (1.0, 0.6)]
        psi = bs.stream_direct(thin_ring_omega, pts, table=table)
        for (rb, zb), val in zip(pts, psi):
            assert val == pytest.approx(kn.kernel_g(rb, zb, 1.0, 0.0),
                                        rel=0.02)

    def test_axis_value_zero(self, ring_omega, table):
        psi = bs.stream_direct(ring_omega, [(0.0, 0.3), (0.0, -1.0)],
                               table=table)
        assert np.all(psi == 0.0)

    def test_mirror_symmetry(self, ring_omega, table):
        up = bs.stream_direct(ring_omega, [(1.4, 0.9)], table=table)[0]
        dn = bs.stream_direct(ring_omega, [(1.4, -0.9)], table=table)[0]
        assert up == pytest.approx(dn, rel=1e-12)

    def test_on_node_evaluation_no_crash(self, ring_omega, table):
        # evaluation exactly on a source node uses the excluded-cell rule
        g = ring_omega.grid
        pt = (40 * g.dr, 0.0)
        val = bs.stream_direct(ring_omega, [pt], table=table)[0]
        assert np.isfinite(val)


class TestVelocityDirect:
    def test_symmetric_data_ur_zero_on_midplane(self, ring_omega, table):
        uv = bs.velocity_direct(ring_omega, [(1.6, 0.0), (0.5, 0.0)],
                                table=table)
        assert np.all(np.abs(uv[:, 0]) < 1e-13 * np.max(np.abs(uv)))

    def test_far_field_decay_bound(self, ring_omega, table):
        # |u| <= sqrt(m2 m0) / (2 (|x|-R)^2) outside the support ball
        from ringlab.estimates import check_far_field

        eta = fl.ScalarFieldRZ(
            ring_omega.grid,
            np.divide(ring_omega.values,
                      ring_omega.grid.r_nodes()[:, None],
                      out=np.zeros_like(ring_omega.values),
                      where=ring_omega.grid.r_nodes()[:, None] > 0))
        reports = check_far_field(eta, [20.0], table=table)
        assert all(r.passed for r in reports)

    def test_monotone_decay_along_ray(self, ring_omega, table):
        radii = [10.0, 14.0, 20.0, 28.0, 40.0]
        pts = [(rho / math.sqrt(2), rho / math.sqrt(2)) for rho in radii]
        uv = bs.velocity_direct(ring_omega, pts, table=table)
        mags = np.sqrt(uv[:, 0] ** 2 + uv[:, 1] ** 2)
        assert np.all(np.diff(mags) < 0)

    def test_ur_from_stream_fd_oracle(self, ring_omega, table):
        # u_r = -(1/rb) d(psi)/d(zb) by centered differences of stream_direct
        h = 1e-4
        for rb, zb in ((1.5, 0.4), (0.8, -0.6)):
            psi_p = bs.stream_direct(ring_omega, [(rb, zb + h)], table=table)[0]
            psi_m = bs.stream_direct(ring_omega, [(rb, zb - h)], table=table)[0]
            fd = -(psi_p - psi_m) / (2 * h * rb)
            ur = bs.velocity_direct(ring_omega, [(rb, zb)], table=table)[0, 0]
            assert ur == pytest.approx(fd, rel=1e-3)

    def test_axis_point_rejected(self, ring_omega):
        with pytest.raises(ValueError):
            bs.velocity_direct(ring_omega, [(0.0, 0.5)])


class TestSolveStreamElliptic:
    @pytest.mark.parametrize("method", ["fft", "sor", "cg"])
    def test_mms_convergence_order(self, method):
        errs = []
        ns = (48, 96) if method != "fft" else (48, 96, 192)
        for n in ns:
            g, omega, edges, psi_exact = mms_setup(n)
            sol = bs.solve_stream_elliptic(omega, method=method,
                                           boundary=edges)
            errs.append(np.max(np.abs(sol.psi - psi_exact)))
        order = math.log2(errs[0] / errs[1])
        assert order > 1.9

    def test_methods_agree(self):
        g, omega, edges, _ = mms_setup(64)
        a = bs.solve_stream_elliptic(omega, method="fft", boundary=edges)
        b = bs.solve_stream_elliptic(omega, method="sor", boundary=edges)
        scale = np.max(np.abs(a.psi))
        assert np.max(np.abs(a.psi - b.psi)) < 1e-8 * scale

    def test_zero_omega_zero_boundary(self):
        g = fl.GridSpec(32, 32, 2.0, -2.0, 2.0)
        omega = fl.ScalarFieldRZ(g, np.zeros(g.shape))
        edges = {"bottom": np.zeros(33), "top": np.zeros(33),
                 "right": np.zeros(31)}
        sol = bs.solve_stream_elliptic(omega, method="fft", boundary=edges)
        assert np.all(sol.psi == 0.0)

    def test_route_cross_validation(self, ring_omega, table):
        # interior psi matches the direct quadrature to relative 1e-3
        sol = bs.solve_stream_elliptic(ring_omega, method="fft", table=table)
        g = ring_omega.grid
        rng = np.random.default_rng(7)
        count = 0
        scale = np.max(np.abs(sol.psi))
        while count < 100:
            i = int(rng.integers(8, g.nr - 8))
            j = int(rng.integers(8, g.nz - 8))
            rb, zb = i * g.dr, g.z_min + j * g.dz
            if (rb - 1.0) ** 2 + zb**2 < 0.25:
                continue
            direct = bs.stream_direct(ring_omega, [(rb, zb)], table=table)[0]
            assert sol.psi[i, j] == pytest.approx(direct, abs=1e-3 * scale)
            count += 1

    def test_nonconvergence_raises(self):
        g, omega, edges, _ = mms_setup(48)
        with pytest.raises(bs.SolverError):
            bs.solve_stream_elliptic(omega, method="cg", boundary=edges,
                                     max_iter=2)


class TestVelocityFromStream:
    def test_manufactured_velocity_order_two(self):
        errs = []
        for n in (48, 96):
            g, omega, edges, psi_exact = mms_setup(n)
            sol = bs.solve_stream_elliptic(omega, method="fft",
                                           boundary=edges)
            u = bs.velocity_from_stream(sol)
            r = g.r_nodes()[:, None]
            z = g.z_nodes()[None, :]
            gauss = np.exp(-(r**2) - z**2)
            ur_ex = 2.0 * z * r * gauss
            uz_ex = (2.0 - 2.0 * r**2) * gauss
            errs.append(max(np.max(np.abs(u.ur - ur_ex)),
                            np.max(np.abs(u.uz - uz_ex))))
        assert math.log2(errs[0] / errs[1]) > 1.9

    def test_axis_regularity(self):
        g, omega, edges, psi_exact = mms_setup(96)
        sol = bs.solve_stream_elliptic(omega, method="fft", boundary=edges)
        u = bs.velocity_from_stream(sol)
        assert np.all(u.ur[0, :] == 0.0)
        # u_z(0, z) = 2 psi(dr, z)/dr^2 approximates 2 exp(-z^2)
        z = g.z_nodes()
        np.testing.assert_allclose(u.uz[0, :], 2.0 * np.exp(-(z**2)),
                                   atol=5e-3)

    def test_discrete_divergence_vanishes(self, ring_omega, table):
        sol = bs.solve_stream_elliptic(ring_omega, method="fft", table=table)
        u = bs.velocity_from_stream(sol)
        div = bs.divergence_rz(u)
        scale = bs.velocity_sup(u) / min(ring_omega.grid.dr,
                                         ring_omega.grid.dz)
        assert np.max(np.abs(div)) < 1e-12 * scale

    def test_ring_rises(self, ring_omega, table):
        sol = bs.solve_stream_elliptic(ring_omega, method="fft", table=table)
        u = bs.velocity_from_stream(sol)
        g = ring_omega.grid
        i0 = int(round(1.0 / g.dr))
        j0 = int(round(-g.z_min / g.dz))
        assert u.uz[i0, j0] > 0.0


class TestRouteEquivalence:
    def test_velocity_routes_agree(self, ring_omega, table):
        sol = bs.solve_stream_elliptic(ring_omega, method="fft", table=table)
        u = bs.velocity_from_stream(sol)
        g = ring_omega.grid
        rng = np.random.default_rng(21)
        pts, idx = [], []
        while len(pts) < 100:
            i = int(rng.integers(8, g.nr - 8))
            j = int(rng.integers(8, g.nz - 8))
            rb, zb = i * g.dr, g.z_min + j * g.dz
            if (rb - 1.0) ** 2 + zb**2 < 0.25:   # keep 5 eps off the core
                continue
            pts.append((rb, zb))
            idx.append((i, j))
        direct = bs.velocity_direct(ring_omega, pts, table=table)
        scale = float(np.max(np.sqrt(direct[:, 0] ** 2 + direct[:, 1] ** 2)))
        for (i, j), (ur_d, uz_d) in zip(idx, direct):
            assert u.ur[i, j] == pytest.approx(ur_d, abs=1e-3 * scale)
            assert u.uz[i, j] == pytest.approx(uz_d, abs=1e-3 * scale)

    def test_discrete_dilation_covariance_exact(self, table):
        # eta -> lam^3 eta(lam .) on the co-dilated grid gives u -> lam u
        g = fl.GridSpec(64, 64, 3.0, -1.5, 1.5)
        eta = fl.make_mollified_ring(g, [fl.RingSpec(1.0, 1.0, 0.0, 0.2)])
        omega = fl.ScalarFieldRZ(g, g.r_nodes()[:, None] * eta.values)
        lam = 2.0
        eta_d = fl.dilate_field(eta, lam, scale_power=3)
        gd = eta_d.grid
        omega_d = fl.ScalarFieldRZ(gd, gd.r_nodes()[:, None] * eta_d.values)
        pts = [(1.3, 0.4), (0.7, -0.3)]
        pts_d = [(r / lam, z / lam) for r, z in pts]
        u = bs.velocity_direct(omega, pts, table=table)
        u_d = bs.velocity_direct(omega_d, pts_d, table=table)
        np.testing.assert_allclose(u_d, lam * u, rtol=1e-13,
                                   atol=1e-16 * np.max(np.abs(u)))


class TestBoundaryOperator:
    def test_matches_full_quadrature(self, ring_omega, table):
        op = bs.BoundaryOperator(ring_omega.grid, bin_factor=4, table=table)
        fast = op.apply(ring_omega)
        slow = bs.boundary_from_quadrature(ring_omega, table=table)
        for key in ("bottom", "top", "right"):
            scale = np.max(np.abs(slow[key])) + 1e-300
            assert np.max(np.abs(fast[key] - slow[key])) < 5e-3 * scale

    def test_bin_one_is_nearly_exact(self, table):
        g = fl.GridSpec(64, 96, 4.0, -3.0, 3.0)
        eta = fl.make_mollified_ring(g, [fl.RingSpec(1.0, 1.0, 0.0, 0.25)])
        omega = fl.ScalarFieldRZ(g, g.r_nodes()[:, None] * eta.values)
        op = bs.BoundaryOperator(g, bin_factor=1, table=table)
        fast = op.apply(omega)
        slow = bs.boundary_from_quadrature(omega, table=table)
        for key in ("bottom", "top", "right"):
            np.testing.assert_allclose(fast[key], slow[key], atol=1e-12)


class TestProbeCsv:
    def test_dump_both_routes(self, ring_omega, table, tmp_path):
        path = tmp_path / "probes.csv"
        pts = [(1.6, 0.3), (0.6, -0.4)]
        bs.probe_velocity_csv(ring_omega, pts, path, table=table)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "r,z,ur,uz,route"
        assert len(lines) == 1 + 2 * len(pts)
        routes = {line.split(",")[-1] for line in lines[1:]}
        assert routes == {"direct", "elliptic"}
