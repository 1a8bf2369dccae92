"""Command-line front end: simulate, verify, sweep, kernel-table.

Configuration is a single INI-style text file (key = value inside named
sections) that is echoed verbatim into the run manifest, so a run is fully
reproducible from its manifest alone.  All outputs of one run live in a
fresh directory named by the config hash and a timestamp; nothing is ever
overwritten.

Exit codes: 0 ok, 1 verification failure, 2 IO/config error.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import estimates as est
from . import evolve as ev
from . import fields as fl
from . import kernel as kn
from .biot_savart import solve_stream_elliptic, velocity_from_stream

__all__ = ["main", "parse_config", "load_manifest", "standard_test_field"]


class UsageError(ValueError):
    pass


def _parse_ring(text):
    kv = {}
    for tok in text.split():
        k, _, v = tok.partition("=")
        if k not in ("kappa", "r0", "z0", "eps") or not v:
            raise UsageError(f"bad ring definition token {tok!r}")
        kv[k] = float(v)
    missing = {"kappa", "r0", "z0", "eps"} - set(kv)
    if missing:
        raise UsageError(f"ring definition missing {sorted(missing)}")
    return fl.RingSpec(**kv)


def parse_config(path):
    """Read an INI run configuration into (SimConfig, raw_text)."""
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(raw)
    try:
        gsec = cp["grid"]
        grid = fl.GridSpec(
            nr=gsec.getint("nr"),
            nz=gsec.getint("nz"),
            r_max=gsec.getfloat("r_max"),
            z_min=gsec.getfloat("z_min"),
            z_max=gsec.getfloat("z_max"),
        )
        rings = tuple(
            _parse_ring(v) for k, v in sorted(cp["rings"].items())
        )
        signs = {np.sign(rg.kappa) for rg in rings if rg.kappa != 0.0}
        if len(signs) > 1:
            raise UsageError(
                "ring circulations must all share one sign"
            )
        tsec = cp["time"]
        snap = tuple(float(x) for x in tsec.get("snapshot_times", "").split())
        ssec = cp["solver"] if cp.has_section("solver") else {}
        bin_raw = str(ssec.get("boundary_bin", "auto")).strip()
        cfg = ev.SimConfig(
            grid=grid,
            rings=rings,
            t_end=tsec.getfloat("t_end"),
            cfl_advect=tsec.getfloat("cfl_advect", 0.8),
            cfl_diffuse=tsec.getfloat("cfl_diffuse", 0.45),
            velocity_refresh=int(ssec.get("velocity_refresh", 1)),
            snapshot_times=snap,
            time_scheme=str(ssec.get("time_scheme", "euler")),
            solver_method=str(ssec.get("method", "fft")),
            boundary_bin=None if bin_raw == "auto" else int(bin_raw),
            boundary_refresh=int(ssec.get("boundary_refresh", 4)),
            record_every=int(ssec.get("record_every", 25)),
        )
    except (KeyError, ValueError, configparser.Error,
            fl.ConfigurationError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc
    return cfg, raw


def standard_test_field(rings):
    """The fixed smooth compactly supported test field used by the
    attainment suite: theta component r * bump centered on the first ring."""
    r0, z0 = rings[0].r0, rings[0].z0
    radius = 1.2 * r0

    def phi_theta(r, z):
        q = ((r - r0) ** 2 + (z - z0) ** 2) / radius**2
        out = np.zeros(np.broadcast_shapes(np.shape(r), np.shape(z)))
        inside = q < 1.0
        rr = np.broadcast_to(r, out.shape)
        vals = np.exp(-1.0 / (1.0 - q[inside])) if np.any(inside) else 0.0
        out[inside] = rr[inside] * vals
        return out

    return phi_theta


def _utcnow():
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")


def _run_dir(out_root, cfg_hash):
    path = os.path.join(out_root, f"{cfg_hash}-{_utcnow()}")
    suffix = 0
    while os.path.exists(path):
        suffix += 1
        path = os.path.join(out_root, f"{cfg_hash}-{_utcnow()}-{suffix}")
    os.makedirs(path)
    return path


def cmd_simulate(args):
    cfg, raw = parse_config(args.config)
    cfg_hash = hashlib.sha256(raw.encode()).hexdigest()[:12]
    run_dir = _run_dir(args.out, cfg_hash)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    manifest = {
        "tool": "ringlab",
        "version": __version__,
        "config_path": os.path.abspath(args.config),
        "config_text": raw,
        "config_sha256": cfg_hash,
        "started_utc": started,
        "status": "running",
        "snapshots": [],
        "diagnostics_csv": None,
        "verification": None,
    }
    try:
        result = ev.run(cfg)
        snap_paths = []
        for k, (t, field) in enumerate(result.snapshots):
            name = f"snap_{k:04d}_t{t:.6f}.bin"
            fl.save_field(field, os.path.join(run_dir, name))
            snap_paths.append({"t": t, "path": name})
        diag_path = os.path.join(run_dir, "diagnostics.csv")
        result.diagnostics.to_csv(diag_path)
        error = result.audits.get("error")
        manifest.update(
            status="error" if error else "ok",
            snapshots=snap_paths,
            diagnostics_csv="diagnostics.csv",
            audits=result.audits,
            finished_utc=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        )
        if error:
            # partial manifest: everything up to the last valid snapshot
            manifest["error"] = error
            _write_manifest(run_dir, manifest)
            print(f"simulate: aborted: {error}", file=sys.stderr)
            return 2
    except (ev.CFLViolation, RuntimeError) as exc:
        manifest.update(
            status="error",
            error=str(exc),
            finished_utc=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        )
        _write_manifest(run_dir, manifest)
        print(f"simulate: aborted: {exc}", file=sys.stderr)
        return 2
    _write_manifest(run_dir, manifest)
    print(f"simulate: ok, {len(manifest['snapshots'])} snapshots in {run_dir}")
    return 0


def _write_manifest(run_dir, manifest):
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_manifest(path):
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"manifest {path} is not valid JSON: {exc}") from exc
    return manifest, os.path.dirname(os.path.abspath(path))


def _config_from_manifest(manifest, run_dir):
    cfg_text = manifest["config_text"]
    tmp = os.path.join(run_dir, "_config_echo.ini")
    with open(tmp, "w") as fh:
        fh.write(cfg_text)
    try:
        cfg, _ = parse_config(tmp)
    finally:
        os.unlink(tmp)
    return cfg


def _load_snapshots(manifest, run_dir):
    snaps = []
    for entry in manifest["snapshots"]:
        path = os.path.join(run_dir, entry["path"])
        if not os.path.exists(path):
            raise IOError(f"missing snapshot {path}")
        snaps.append((entry["t"], fl.load_field(path)))
    return snaps


def _recompute_velocity(eta):
    g = eta.grid
    omega = fl.ScalarFieldRZ(g, g.r_nodes()[:, None] * eta.values)
    psi = solve_stream_elliptic(omega, method="fft")
    return velocity_from_stream(psi)


def verify_reports(manifest, run_dir, suite):
    """All EstimateReports for one suite over one run's snapshots."""
    cfg = _config_from_manifest(manifest, run_dir)
    snaps = _load_snapshots(manifest, run_dir)
    kappa = sum(rg.kappa for rg in cfg.rings)
    base_ctx = {
        "config_sha256": manifest["config_sha256"],
        "kappa": kappa,
        "eps": max(rg.eps for rg in cfg.rings),
        "r0": cfg.rings[0].r0,
    }
    reports = []

    vel_cache = {}

    def vel(idx):
        if idx not in vel_cache:
            vel_cache[idx] = _recompute_velocity(snaps[idx][1])
        return vel_cache[idx]

    if suite in ("interpolation", "all"):
        for idx, (t, eta) in enumerate(snaps):
            for p in (1.0, 4.0 / 3.0, 2.0):
                reports.append(est.check_interpolation(
                    eta, p, context={**base_ctx, "t": t}))
        # the scalar sup inequality on the latest decayed snapshot
        t, eta = snaps[-1]
        try:
            reports.append(est.check_scalar_sup(
                eta, context={**base_ctx, "t": t}))
        except ValueError:
            pass
    if suite in ("velocity", "all"):
        for idx in range(1, len(snaps)):
            t, eta = snaps[idx]
            u = vel(idx)
            for q in (2.0, 4.0, 6.0):
                reports.append(est.check_velocity_lq(
                    eta, u, q, context={**base_ctx, "t": t}))
            reports.append(est.check_velocity_sup(
                eta, u, context={**base_ctx, "t": t}))
        t, eta = snaps[-1]
        R = est.support_radius(eta)
        reports.extend(est.check_far_field(
            eta, [max(20.0 * cfg.rings[0].r0, 2.5 * R)],
            context={**base_ctx, "t": t}))
        reports.extend(est.r_decay_report(eta, [2.0, 4.0, 8.0]))
    if suite in ("decay", "all"):
        diag = est.DiagnosticsSeries.from_csv(
            os.path.join(run_dir, manifest["diagnostics_csv"]))
        t = diag.times
        window = (max(0.01, t[1] if len(t) > 1 else 0.01), t[-1])
        try:
            env = est.decay_envelope(diag, "eta_linf", window)
        except ValueError as exc:
            reports.append(est.EstimateReport(
                "nash_envelope_linf", math.inf, 1.0, 1.0,
                {**base_ctx, "error": str(exc)}))
        else:
            try:
                slope, _ = est.fit_decay(diag, "eta_linf", window)
            except ValueError:
                slope = math.nan
            cap = est.calibration()["nash_envelope_per_kappa"] * abs(kappa)
            reports.append(est.EstimateReport(
                "nash_envelope_linf", env, cap, 1.0,
                {**base_ctx, "slope": slope, "window": list(window)}))
        # conservation audits recomputed from the persisted snapshots
        l1 = [fl.norm_lp_3d(eta, 1) for _, eta in snaps]
        worst_up = max(
            (l1[k + 1] - l1[k]) / max(l1[k], 1e-300)
            for k in range(len(l1) - 1)
        ) if len(l1) > 1 else 0.0
        reports.append(est.EstimateReport(
            "l1_monotone", worst_up, 1e-12, 1.0, dict(base_ctx)))
        mom = [fl.signed_momentum_z(eta) for _, eta in snaps]
        drift = max(abs(m / mom[0] - 1.0) for m in mom) if mom[0] else 0.0
        reports.append(est.EstimateReport(
            "momentum_drift", drift, 0.01, 1.0, dict(base_ctx)))
    if suite in ("attainment", "all"):
        phi = standard_test_field(cfg.rings)
        eps = max(rg.eps for rg in cfg.rings)
        res = est.check_initial_attainment(
            {eps: snaps}, cfg.rings, phi)
        A, B = res["envelopes"].get(eps, (math.inf, math.inf))
        # envelope domination is by construction; report the fitted shape
        # and check the pairing error at the eps^2 diagonal time
        E_diag = res["diagonal"][eps]
        scale = abs(2.0 * np.pi * kappa * cfg.rings[0].r0)
        reports.append(est.EstimateReport(
            "attainment_diagonal", E_diag,
            est.calibration()["attainment_diagonal_fraction"] * scale, 1.0,
            {**base_ctx, "A": A, "B": B, "t_diag": eps * eps}))
    return reports


def cmd_verify(args):
    manifest, run_dir = load_manifest(args.manifest)
    if manifest.get("status") != "ok":
        print(f"verify: manifest status is {manifest.get('status')!r}",
              file=sys.stderr)
        return 2
    try:
        reports = verify_reports(manifest, run_dir, args.suite)
    except (IOError, fl.SnapshotFormatError) as exc:
        print(f"verify: {exc}", file=sys.stderr)
        return 2
    out_path = os.path.join(
        run_dir, f"reports_{args.suite}_{_utcnow()}.jsonl")
    est.reports_to_jsonl(reports, out_path)
    print(est.summary_table(reports))
    print(f"verify: {len(reports)} reports -> {out_path}")
    n_fail = sum(not r.passed for r in reports)
    if n_fail:
        print(f"verify: {n_fail} FAILED", file=sys.stderr)
        return 1
    return 0


def _sweep_point(payload):
    base_text, kappa, eps, grid_tuple, out_root = payload
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(base_text)
    cp["rings"] = {"ring1": f"kappa={kappa} r0=1.0 z0=0.0 eps={eps}"}
    nr, nz, r_max, z_min, z_max = grid_tuple
    cp["grid"] = {"nr": str(nr), "nz": str(nz), "r_max": repr(r_max),
                  "z_min": repr(z_min), "z_max": repr(z_max)}
    import io as _io

    buf = _io.StringIO()
    cp.write(buf)
    text = buf.getvalue()
    tmp = os.path.join(out_root, f"_sweep_{kappa}_{eps}_{nr}x{nz}.ini")
    with open(tmp, "w") as fh:
        fh.write(text)

    before = set(os.listdir(out_root))
    ns = argparse.Namespace(config=tmp, out=out_root)
    code = cmd_simulate(ns)
    os.unlink(tmp)
    new_dirs = sorted(set(os.listdir(out_root)) - before)
    run_dir = os.path.join(out_root, new_dirs[-1]) if new_dirs else None
    return {"kappa": kappa, "eps": eps, "grid": list(grid_tuple),
            "exit": code, "run_dir": run_dir}


def _point_envelope(point):
    """Nash sup-norm envelope of one sweep point from its diagnostics."""
    if point["exit"] != 0 or not point["run_dir"]:
        return None
    diag_path = os.path.join(point["run_dir"], "diagnostics.csv")
    try:
        diag = est.DiagnosticsSeries.from_csv(diag_path)
        t = diag.times
        window = (max(0.01, float(t[1]) if len(t) > 1 else 0.01),
                  float(t[-1]))
        return est.decay_envelope(diag, "eta_linf", window)
    except (OSError, ValueError):
        return None


def _aggregate_sweep(results):
    """kappa-linearity fit and eps-uniformity spread of the Nash envelopes."""
    for r in results:
        r["nash_envelope"] = _point_envelope(r)
    agg = {}
    by_eps = {}
    by_kappa = {}
    for r in results:
        if r["nash_envelope"] is None:
            continue
        by_eps.setdefault((r["eps"], tuple(r["grid"])), []).append(r)
        by_kappa.setdefault((r["kappa"], tuple(r["grid"])), []).append(r)
    fits = []
    for (eps, grid), pts in by_eps.items():
        if len(pts) >= 2 and len({p["kappa"] for p in pts}) >= 2:
            k = np.array([p["kappa"] for p in pts])
            e = np.array([p["nash_envelope"] for p in pts])
            slope = float(np.polyfit(np.log(k), np.log(e), 1)[0])
            fits.append({"eps": eps, "grid": list(grid),
                         "kappa_fit_slope": slope})
    agg["kappa_linearity"] = fits
    spreads = []
    for (kappa, grid), pts in by_kappa.items():
        if len(pts) >= 2 and len({p["eps"] for p in pts}) >= 2:
            e = [p["nash_envelope"] for p in pts]
            spreads.append({"kappa": kappa, "grid": list(grid),
                            "envelope_spread": max(e) / min(e)})
    agg["eps_uniformity"] = spreads
    return agg


def _parse_grid_token(tok):
    parts = tok.split(",")
    if len(parts) != 5:
        raise UsageError(f"grid token {tok!r} needs nr,nz,r_max,z_min,z_max")
    return (int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]),
            float(parts[4]))


def cmd_sweep(args):
    try:
        with open(args.config) as fh:
            raw = fh.read()
    except OSError as exc:
        print(f"sweep: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(raw)
    if not cp.has_section("sweep"):
        print("sweep: config needs a [sweep] section", file=sys.stderr)
        return 2
    try:
        kappas = [float(x) for x in cp["sweep"].get("kappa", "").split()]
        epss = [float(x) for x in cp["sweep"].get("eps", "").split()]
        grids = [_parse_grid_token(t)
                 for t in cp["sweep"].get("grids", "").split()]
    except (ValueError, UsageError) as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return 2
    if not kappas or not epss or not grids:
        print("sweep: kappa, eps and grids lists must be nonempty",
              file=sys.stderr)
        return 2
    cp.remove_section("sweep")
    import io as _io

    buf = _io.StringIO()
    cp.write(buf)
    base_text = buf.getvalue()
    os.makedirs(args.out, exist_ok=True)
    points = [(base_text, k, e, g, args.out)
              for k in kappas for e in epss for g in grids]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, points))
    else:
        results = [_sweep_point(p) for p in points]
    stamp = _utcnow()
    aggregates = _aggregate_sweep(results)
    agg_path = os.path.join(args.out, f"sweep_summary_{stamp}.json")
    with open(agg_path, "w") as fh:
        json.dump({"points": results, "aggregates": aggregates}, fh,
                  indent=2)
    csv_path = os.path.join(args.out, f"sweep_envelopes_{stamp}.csv")
    with open(csv_path, "w") as fh:
        fh.write("kappa,eps,nr,nz,exit,nash_envelope\n")
        for r in results:
            env = ("" if r["nash_envelope"] is None
                   else f"{r['nash_envelope']:.17g}")
            fh.write(f"{r['kappa']},{r['eps']},{r['grid'][0]},"
                     f"{r['grid'][1]},{r['exit']},{env}\n")
    n_fail = sum(r["exit"] != 0 for r in results)
    print(f"sweep: {len(results)} points, {n_fail} failed -> {agg_path}")
    return 1 if n_fail else 0


def cmd_kernel_table(args):
    if args.count < 1 or args.lo <= 0 or args.hi < args.lo:
        print("kernel-table: need 0 < lo <= hi and count >= 1",
              file=sys.stderr)
        return 2
    rows = kn.tabulate(args.lo, args.hi, args.count)
    buf = open(args.out, "w") if args.out else sys.stdout
    try:
        buf.write("s,F,Fprime,regime,estimated_error\n")
        for s, Fv, F1v, tag, err in rows:
            buf.write(f"{s:.17g},{Fv:.17g},{F1v:.17g},{tag},{err:.3g}\n")
    finally:
        if args.out:
            buf.close()
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="ringlab",
        description="axisymmetric vortex-ring laboratory",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", help="run an estimate suite on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--suite", default="all",
                   choices=["interpolation", "velocity", "decay",
                            "attainment", "all"])
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("sweep", help="cartesian parameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seedless", action="store_true",
                   help="reserved; no randomness exists anywhere")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("kernel-table", help="tabulate F and F'")
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_kernel_table)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, fl.ConfigurationError) as exc:
        print(f"{args.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
