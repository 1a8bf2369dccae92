"""Velocity recovery u = (u_r, u_z) from omega_theta = r * eta.

Two independent routes:

  * direct kernel quadrature against the G / K_r / K_z kernels (oracle,
    pointwise, with an excluded-cell log correction at the singularity);
  * an elliptic solve of the stream function,

        psi_rr - (1/r) psi_r + psi_zz = -r omega_theta,

    written in the flux form r d/dr((1/r) dpsi/dr) + psi_zz so the system is
    symmetrizable, with psi = 0 on the axis and Dirichlet values from the
    direct quadrature on the three outer edges, followed by

        u_r = -psi_z / r,   u_z = psi_r / r.

The elliptic system can be solved by red-black SOR with an optimal
relaxation estimate (conjugate-gradient fallback on stagnation) or by a
direct method (DST in z, Thomas sweeps in r) that solves the identical
discrete system; the direct method is the default inside time loops where
thousands of solves are needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .fields import ConfigurationError, GridSpec
from . import kernel as _kernel

__all__ = [
    "StreamField",
    "VelocityFieldRZ",
    "SolverError",
    "stream_direct",
    "velocity_direct",
    "BoundaryOperator",
    "boundary_from_quadrature",
    "solve_stream_elliptic",
    "velocity_from_stream",
    "divergence_rz",
    "velocity_sup",
    "probe_velocity_csv",
    "probe_rows",
]


class SolverError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class StreamField:
    grid: GridSpec
    psi: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.psi = np.ascontiguousarray(self.psi, dtype=float)
        if self.psi.shape != self.grid.shape:
            raise ConfigurationError("psi shape does not match grid")


@dataclass
class VelocityFieldRZ:
    grid: GridSpec
    ur: np.ndarray = field(repr=False)
    uz: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.ur = np.ascontiguousarray(self.ur, dtype=float)
        self.uz = np.ascontiguousarray(self.uz, dtype=float)
        if self.ur.shape != self.grid.shape or self.uz.shape != self.grid.shape:
            raise ConfigurationError("velocity shape does not match grid")


def _source_arrays(omega):
    """Nonzero source nodes with their trapezoid dr*dz quadrature weights."""
    g = omega.grid
    wz = np.full(g.nz + 1, g.dz)
    wz[0] = wz[-1] = 0.5 * g.dz
    wr = np.full(g.nr + 1, g.dr)
    wr[0] = wr[-1] = 0.5 * g.dr
    ii, jj = np.nonzero(omega.values)
    keep = ii > 0  # omega = r eta vanishes on the axis column
    ii, jj = ii[keep], jj[keep]
    r = g.r_nodes()[ii]
    z = g.z_nodes()[jj]
    w = omega.values[ii, jj] * wr[ii] * wz[jj]
    return ii, jj, r, z, w


def _log_rect_integral(x0, x1, y0, y1):
    """int of ln sqrt(x^2+y^2) over [x0,x1] x [y0,y1] (origin allowed inside).

    Uses the primitive P with d2P/dxdy = ln(x^2 + y^2):
    P = xy (ln(x^2+y^2) - 3) + x^2 atan(y/x) + y^2 atan(x/y).
    """

    def P(x, y):
        if x == 0.0 or y == 0.0:
            return 0.0
        q = x * x + y * y
        return (x * y * (np.log(q) - 3.0) + x * x * np.arctan(y / x)
                + y * y * np.arctan(x / y))

    return 0.5 * (P(x1, y1) - P(x0, y1) - P(x1, y0) + P(x0, y0))


def _self_cell(point, grid):
    """Index of the source node whose cell contains the point, or None."""
    rb, zb = point
    i = int(round(rb / grid.dr))
    j = int(round((zb - grid.z_min) / grid.dz))
    if 1 <= i <= grid.nr and 0 <= j <= grid.nz:
        ri = i * grid.dr
        zj = grid.z_min + j * grid.dz
        if abs(rb - ri) <= 0.5 * grid.dr and abs(zb - zj) <= 0.5 * grid.dz:
            return i, j
    return None


def _cell_log_moments(point, grid, i, j):
    """(area, int -ln d) of the source cell (i, j) relative to the point."""
    ri = i * grid.dr
    zj = grid.z_min + j * grid.dz
    x0 = ri - 0.5 * grid.dr - point[0]
    x1 = ri + 0.5 * grid.dr - point[0]
    y0 = zj - 0.5 * grid.dz - point[1]
    y1 = zj + 0.5 * grid.dz - point[1]
    area = grid.dr * grid.dz
    return area, -_log_rect_integral(x0, x1, y0, y1)


def stream_direct(omega_theta, points, *, table=None, correction=True):
    """psi at the given (r, z) points by direct quadrature of the G kernel.

    A point falling inside a source cell has that cell excluded and replaced
    by the local log-expansion integral of the kernel (the singularity of G
    is logarithmic and integrable).
    """
    tab = table if table is not None else _kernel.default_table()
    g = omega_theta.grid
    ii, jj, r, z, w = _source_arrays(omega_theta)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts))
    lut = {(a, b): k for k, (a, b) in enumerate(zip(ii, jj))}
    for m, (rb, zb) in enumerate(pts):
        if rb == 0.0:
            out[m] = 0.0
            continue
        mask_self = None
        cell = _self_cell((rb, zb), g)
        if cell is not None and cell in lut:
            mask_self = lut[cell]
        s = ((r - rb) ** 2 + (z - zb) ** 2) / (rb * r)
        if mask_self is not None:
            s[mask_self] = 1.0  # placeholder, excluded below
        vals = np.sqrt(rb * r) / (2.0 * np.pi) * tab.f(s)
        if mask_self is not None:
            vals[mask_self] = 0.0
        acc = float(vals @ w)
        if mask_self is not None and correction:
            i0, j0 = cell
            area, neg_log = _cell_log_moments((rb, zb), g, i0, j0)
            F_avg = area * (np.log(rb) + np.log(8.0) - 2.0) + neg_log
            acc += omega_theta.values[i0, j0] * rb / (2.0 * np.pi) * F_avg
        out[m] = acc
    return out


def velocity_direct(omega_theta, points, *, table=None, correction=True):
    """(u_r, u_z) at the given points by direct kernel quadrature."""
    tab = table if table is not None else _kernel.default_table()
    g = omega_theta.grid
    ii, jj, r, z, w = _source_arrays(omega_theta)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((len(pts), 2))
    lut = {(a, b): k for k, (a, b) in enumerate(zip(ii, jj))}
    for m, (rb, zb) in enumerate(pts):
        if rb <= 0.0:
            raise ValueError("velocity_direct needs r > 0 evaluation points")
        mask_self = None
        cell = _self_cell((rb, zb), g)
        if cell is not None and cell in lut:
            mask_self = lut[cell]
        s = ((r - rb) ** 2 + (z - zb) ** 2) / (rb * r)
        if mask_self is not None:
            s[mask_self] = 1.0
        F = tab.f(s)
        Fp = tab.fp(s)
        kur = (z - zb) / (np.pi * rb**1.5 * np.sqrt(r)) * Fp
        kuz = ((rb - r) / (np.pi * rb**1.5 * np.sqrt(r)) * Fp
               + (F - 2.0 * s * Fp) * np.sqrt(r) / (4.0 * np.pi * rb**1.5))
        if mask_self is not None:
            kur[mask_self] = 0.0
            kuz[mask_self] = 0.0
        ur = float(kur @ w)
        uz = float(kuz @ w)
        if mask_self is not None and correction:
            # K_r and the first K_z term are odd across the cell: excluded.
            # The even singular part of K_z is (F + 1)/(4 pi rb) to leading
            # order (F - 2 xi2 F' -> F + 1 as xi -> 0).
            i0, j0 = cell
            area, neg_log = _cell_log_moments((rb, zb), g, i0, j0)
            F_avg = area * (np.log(rb) + np.log(8.0) - 1.0) + neg_log
            uz += omega_theta.values[i0, j0] / (4.0 * np.pi * rb) * F_avg
        out[m] = (ur, uz)
    return out


class BoundaryOperator:
    """Precomputed coarse-binned G-kernel matrix for the outer edges.

    Dirichlet psi values on (r = r_max, z = z_min, z = z_max) are far-field
    quantities; binning the source by `bin_factor` in each direction keeps
    the precomputed matrix small while the kernel smoothness at >= 4 r0
    separation keeps the binning error negligible.  apply() is then a single
    matvec per refresh.
    """

    def __init__(self, grid, *, bin_factor=4, table=None):
        tab = table if table is not None else _kernel.default_table()
        self.grid = grid
        self.bin_factor = int(bin_factor)
        if self.bin_factor < 1:
            raise ConfigurationError("bin_factor must be >= 1")
        g = grid
        r = g.r_nodes()
        z = g.z_nodes()
        # bins over the interior source nodes i = 1..nr-1, j = 1..nz-1;
        # the axis column carries omega = 0 and the outer Dirichlet rows
        # stay 0 during evolution, so nothing is lost and no bin center can
        # coincide with an edge evaluation point
        ib = (np.arange(1, g.nr) - 1) // self.bin_factor
        jb = (np.arange(1, g.nz) - 1) // self.bin_factor
        self._ib, self._jb = ib, jb
        nbr = ib[-1] + 1
        nbz = jb[-1] + 1
        rc = np.zeros(nbr)
        zc = np.zeros(nbz)
        np.add.at(rc, ib, r[1:-1])
        np.add.at(zc, jb, z[1:-1])
        rc /= np.bincount(ib, minlength=nbr)
        zc /= np.bincount(jb, minlength=nbz)
        self._n_bins = (nbr, nbz)
        self._wgt = g.dr * g.dz

        edge_pts = probe_rows(grid)
        self._edge_pts = edge_pts
        RC = rc[:, None, None]
        ZC = zc[None, :, None]
        RB = edge_pts[:, 0][None, None, :]
        ZB = edge_pts[:, 1][None, None, :]
        s = ((RC - RB) ** 2 + (ZC - ZB) ** 2) / (RC * RB)
        self._matrix = (np.sqrt(RC * RB) / (2.0 * np.pi) * tab.f(s)).reshape(
            nbr * nbz, -1
        )

    def apply(self, omega_theta):
        """Edge psi values as a dict of the three Dirichlet edges."""
        nbr, nbz = self._n_bins
        W = np.zeros((nbr, nbz))
        src = omega_theta.values[1:-1, 1:-1] * self._wgt
        np.add.at(W, (self._ib[:, None], self._jb[None, :]), src)
        psi_edge = W.reshape(-1) @ self._matrix
        return _split_edges(self.grid, psi_edge)


def probe_rows(grid):
    """Outer-edge points (bottom row, top row, right column), in order."""
    r = grid.r_nodes()
    z = grid.z_nodes()
    bottom = np.column_stack([r, np.full_like(r, z[0])])
    top = np.column_stack([r, np.full_like(r, z[-1])])
    right = np.column_stack([np.full_like(z[1:-1], r[-1]), z[1:-1]])
    pts = np.vstack([bottom, top, right])
    # the two r = 0 corner points sit on the axis where psi = 0 identically;
    # give them a harmless positive radius and zero the result in the split
    pts[pts[:, 0] == 0.0, 0] = grid.dr
    return pts


def _split_edges(grid, psi_edge):
    nr, nz = grid.nr, grid.nz
    bottom = np.array(psi_edge[: nr + 1])
    top = np.array(psi_edge[nr + 1: 2 * (nr + 1)])
    right = np.array(psi_edge[2 * (nr + 1):])
    bottom[0] = 0.0
    top[0] = 0.0
    return {"bottom": bottom, "top": top, "right": right}


def boundary_from_quadrature(omega_theta, *, table=None):
    """Edge psi by full-resolution direct quadrature (oracle path)."""
    pts = probe_rows(omega_theta.grid)
    psi = stream_direct(omega_theta, pts, table=table)
    return _split_edges(omega_theta.grid, psi)


def _radial_coeffs(grid):
    r = grid.r_nodes()
    dr = grid.dr
    i = np.arange(1, grid.nr)
    aW = r[i] / ((r[i] - 0.5 * dr) * dr * dr)
    aE = r[i] / ((r[i] + 0.5 * dr) * dr * dr)
    return aW, aE


def _apply_operator(grid, psi):
    """The discrete elliptic operator on the interior block."""
    dz2 = grid.dz ** 2
    aW, aE = _radial_coeffs(grid)
    interior = (
        aW[:, None] * psi[:-2, 1:-1]
        + aE[:, None] * psi[2:, 1:-1]
        - (aW + aE)[:, None] * psi[1:-1, 1:-1]
        + (psi[1:-1, 2:] - 2.0 * psi[1:-1, 1:-1] + psi[1:-1, :-2]) / dz2
    )
    return interior


def _assemble_rhs(grid, omega_values):
    r = grid.r_nodes()
    return -(r[1:-1, None] * omega_values[1:-1, 1:-1])


def _residual(grid, psi, rhs):
    return _apply_operator(grid, psi) - rhs


def _solve_fft(grid, rhs_eff):
    """Direct solve: DST-I in z, vectorized Thomas sweeps in r."""
    nrm1, nzm1 = rhs_eff.shape
    nz = grid.nz
    fhat = scipy.fft.dst(rhs_eff, type=1, axis=1)
    k = np.arange(1, nz)
    lam = (2.0 * np.cos(np.pi * k / nz) - 2.0) / grid.dz**2
    aW, aE = _radial_coeffs(grid)
    diag = -(aW + aE)[:, None] + lam[None, :]

    # Thomas forward elimination across i, vectorized over modes
    cp = np.empty_like(fhat)
    dp = np.empty_like(fhat)
    cp[0] = aE[0] / diag[0]
    dp[0] = fhat[0] / diag[0]
    for i in range(1, nrm1):
        denom = diag[i] - aW[i] * cp[i - 1]
        cp[i] = aE[i] / denom
        dp[i] = (fhat[i] - aW[i] * dp[i - 1]) / denom
    x = np.empty_like(fhat)
    x[-1] = dp[-1]
    for i in range(nrm1 - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return scipy.fft.dst(x, type=1, axis=1) / (2.0 * nz)


def _sor_sweep_color(psi, rhs, grid, omega_relax, color, aW, aE, diag):
    dz2 = grid.dz ** 2
    for parity in (0, 1):
        # rows of equal parity update their half-color in one vector op
        i = np.arange(1 + parity, grid.nr, 2)
        if i.size == 0:
            continue
        j0 = 2 - ((color + 1 + parity) % 2)
        ii = i[:, None]
        jj = np.arange(j0, grid.nz, 2)[None, :]
        resid = (rhs[ii - 1, jj - 1]
                 - aW[i - 1][:, None] * psi[ii - 1, jj]
                 - aE[i - 1][:, None] * psi[ii + 1, jj]
                 - (psi[ii, jj + 1] + psi[ii, jj - 1]) / dz2
                 - diag[i - 1][:, None] * psi[ii, jj])
        psi[ii, jj] += omega_relax * resid / diag[i - 1][:, None]


def _solve_sor(grid, rhs, psi, tol_abs, max_iter):
    rho = (np.cos(np.pi / grid.nr) / grid.dr**2
           + np.cos(np.pi / grid.nz) / grid.dz**2) / (1.0 / grid.dr**2
                                                      + 1.0 / grid.dz**2)
    omega_relax = 2.0 / (1.0 + np.sqrt(1.0 - rho * rho))
    aW, aE = _radial_coeffs(grid)
    diag = -(aW + aE) - 2.0 / grid.dz**2
    res_prev = None
    for sweep in range(max_iter):
        _sor_sweep_color(psi, rhs, grid, omega_relax, 0, aW, aE, diag)
        _sor_sweep_color(psi, rhs, grid, omega_relax, 1, aW, aE, diag)
        if sweep % 10 == 9:
            res = float(np.linalg.norm(_residual(grid, psi, rhs)))
            if res <= tol_abs:
                return psi, res, False
            if sweep >= 50 and res_prev is not None and res > 0.97 * res_prev:
                return psi, res, True  # stagnation: hand over to CG
            res_prev = res
    return psi, float(np.linalg.norm(_residual(grid, psi, rhs))), True


def _solve_cg(grid, rhs, psi, tol_abs, max_iter):
    """Jacobi-preconditioned CG on the row-scaled (symmetric) system.

    Row-scaling the flux-form operator by 1/r makes it symmetric negative
    definite; CG runs on its negative.  The true (unscaled) residual is used
    for the stopping test.
    """
    r_in = grid.r_nodes()[1:-1, None]
    aW, aE = _radial_coeffs(grid)
    diag_sym = ((aW + aE)[:, None] + 2.0 / grid.dz**2) / r_in
    buf = np.zeros(grid.shape)

    def M(x):
        buf[1:-1, 1:-1] = x
        out = -_apply_operator(grid, buf) / r_in
        buf[1:-1, 1:-1] = 0.0
        return out

    # b - M x of the row-scaled system equals _residual / r
    x = psi[1:-1, 1:-1].copy()
    res = _residual(grid, psi, rhs) / r_in
    z = res / diag_sym
    p = z.copy()
    rz = float(np.sum(res * z))
    for it in range(max_iter):
        Ap = M(p)
        pAp = float(np.sum(p * Ap))
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        res -= alpha * Ap
        maybe_done = float(np.linalg.norm(res * r_in)) <= tol_abs
        if maybe_done or (it + 1) % 50 == 0:
            # residual replacement against the true system, restart direction
            psi[1:-1, 1:-1] = x
            true_res = float(np.linalg.norm(_residual(grid, psi, rhs)))
            if true_res <= tol_abs:
                return psi, true_res
            res = _residual(grid, psi, rhs) / r_in
            z = res / diag_sym
            p = z.copy()
            rz = float(np.sum(res * z))
            continue
        z = res / diag_sym
        rz_new = float(np.sum(res * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    psi[1:-1, 1:-1] = x
    return psi, float(np.linalg.norm(_residual(grid, psi, rhs)))


def solve_stream_elliptic(omega_theta, *, method="fft", boundary=None,
                          rel_tol=1e-10, max_iter=40000, table=None,
                          initial=None):
    """Stream function for a compactly supported omega_theta.

    boundary: None (full direct quadrature), a BoundaryOperator, or a dict
    of precomputed edge arrays.  method: 'fft' (direct, default), 'sor'
    (red-black with CG fallback on stagnation), or 'cg'.
    """
    g = omega_theta.grid
    if boundary is None:
        edges = boundary_from_quadrature(omega_theta, table=table)
    elif isinstance(boundary, BoundaryOperator):
        edges = boundary.apply(omega_theta)
    else:
        edges = boundary

    psi = np.zeros(g.shape) if initial is None else initial.copy()
    psi[:, 0] = edges["bottom"]
    psi[:, -1] = edges["top"]
    psi[-1, 1:-1] = edges["right"]
    psi[0, :] = 0.0

    rhs = _assemble_rhs(g, omega_theta.values)
    rhs_norm = float(np.linalg.norm(rhs))
    tol_abs = rel_tol * max(rhs_norm, 1e-300)

    if method == "fft":
        aW, aE = _radial_coeffs(g)
        rhs_eff = rhs.copy()
        rhs_eff[:, 0] -= psi[1:-1, 0] / g.dz**2
        rhs_eff[:, -1] -= psi[1:-1, -1] / g.dz**2
        rhs_eff[-1, :] -= aE[-1] * psi[-1, 1:-1]
        psi[1:-1, 1:-1] = _solve_fft(g, rhs_eff)
        res = float(np.linalg.norm(_residual(g, psi, rhs)))
        if rhs_norm > 0.0 and res > 100.0 * tol_abs:
            raise SolverError("direct stream solve residual too large", res / rhs_norm)
        return StreamField(g, psi)

    if method in ("sor", "cg"):
        if method == "sor":
            psi, res, stalled = _solve_sor(g, rhs, psi, tol_abs, max_iter)
            if not stalled:
                return StreamField(g, psi)
        psi, res = _solve_cg(g, rhs, psi, tol_abs, max_iter)
        if res > tol_abs and rhs_norm > 0.0:
            raise SolverError("iterative stream solve did not converge",
                              res / rhs_norm)
        return StreamField(g, psi)

    raise ValueError(f"unknown method {method!r}")


def velocity_from_stream(psi_field):
    """Centered differences of psi; at the axis u_r = 0 and u_z from the
    psi ~ (1/2) u_z(0, z) r^2 limit: u_z(0, z) = 2 psi(dr, z)/dr^2."""
    g = psi_field.grid
    psi = psi_field.psi
    r = g.r_nodes()
    ur = np.zeros(g.shape)
    uz = np.zeros(g.shape)

    # u_r = -psi_z / r
    ur[1:, 1:-1] = -(psi[1:, 2:] - psi[1:, :-2]) / (2.0 * g.dz * r[1:, None])
    ur[1:, 0] = -(-3.0 * psi[1:, 0] + 4.0 * psi[1:, 1] - psi[1:, 2]) / (
        2.0 * g.dz * r[1:])
    ur[1:, -1] = -(3.0 * psi[1:, -1] - 4.0 * psi[1:, -2] + psi[1:, -3]) / (
        2.0 * g.dz * r[1:])
    ur[0, :] = 0.0

    # u_z = psi_r / r
    uz[1:-1, :] = (psi[2:, :] - psi[:-2, :]) / (2.0 * g.dr * r[1:-1, None])
    uz[0, :] = 2.0 * psi[1, :] / g.dr**2
    uz[-1, :] = (3.0 * psi[-1, :] - 4.0 * psi[-2, :] + psi[-3, :]) / (
        2.0 * g.dr * g.r_max)
    return VelocityFieldRZ(g, ur, uz)


def divergence_rz(u):
    """Wide-centered discrete divergence (r u_r)_r + (r u_z)_z, interior."""
    g = u.grid
    r = g.r_nodes()[:, None]
    rur = r * u.ur
    ruz = r * u.uz
    div = ((rur[2:, 1:-1] - rur[:-2, 1:-1]) / (2.0 * g.dr)
           + (ruz[1:-1, 2:] - ruz[1:-1, :-2]) / (2.0 * g.dz))
    return div


def velocity_sup(u):
    """sup of |u| = sqrt(u_r^2 + u_z^2) over the nodes."""
    return float(np.sqrt(np.max(u.ur**2 + u.uz**2)))


def probe_velocity_csv(omega_theta, points, path_or_buf, *, table=None,
                       velocity_field=None):
    """Cross-route probe dump: r,z,ur,uz,route rows for both velocity
    routes at the given points (the elliptic route is interpolated to the
    nearest node when a full field is supplied)."""
    buf = (path_or_buf if hasattr(path_or_buf, "write")
           else open(path_or_buf, "w"))
    own = buf is not path_or_buf
    try:
        buf.write("r,z,ur,uz,route\n")
        direct = velocity_direct(omega_theta, points, table=table)
        for (r, z), (ur, uz) in zip(points, direct):
            buf.write(f"{r:.17g},{z:.17g},{ur:.17g},{uz:.17g},direct\n")
        if velocity_field is None:
            psi = solve_stream_elliptic(omega_theta, method="fft",
                                        table=table)
            velocity_field = velocity_from_stream(psi)
        g = velocity_field.grid
        for r, z in points:
            i = int(round(r / g.dr))
            j = int(round((z - g.z_min) / g.dz))
            buf.write(f"{i * g.dr:.17g},{g.z_min + j * g.dz:.17g},"
                      f"{velocity_field.ur[i, j]:.17g},"
                      f"{velocity_field.uz[i, j]:.17g},elliptic\n")
    finally:
        if own:
            buf.close()
