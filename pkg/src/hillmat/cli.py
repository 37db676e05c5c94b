"""Command-line driver: spectrum, eigs, resonances, traces, qmap, verify.

Output is deterministic: fixed column order, floats at 12 significant
digits in scientific notation, LF newlines.  Exit codes: 0 ok, 1 input
validation, 2 numerical failure, 3 checks failed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import corpus
from .potential import (PeriodicMatrixPotential, PotentialFormatError,
                        direct_sum, load_potential)
from .monodromy import (SolverConfig, char_poly, integrate_monodromy,
                        series_monodromy, traces, j_matrix)
from .lyapunov import (PairingError, TrackingError, lyapunov_values,
                       lyapunov_values_batch)
from .spectrum import (NumericalError, UnclassifiedEdgeError,
                       antiperiodic_eigenvalues, periodic_eigenvalues,
                       resonances, scan_bands)
from .quasimomentum import (PhaseResolutionError, exponent_and_density,
                            trace_integrals, upper_plane_grid)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CHECKS = 0, 1, 2, 3

_HEADER = "kind,n,m,label,z,lambda,multiplicity,classification,residual"


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.11e}"


def _write(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_to_csv(rows):
    lines = [_HEADER]
    for r in rows:
        lines.append(",".join(str(c) if not isinstance(c, float) else _fmt(c)
                              for c in r))
    return "\n".join(lines) + "\n"


def _rows_to_json(rows):
    keys = _HEADER.split(",")
    recs = [dict(zip(keys, r)) for r in rows]
    return json.dumps(recs, indent=1, sort_keys=True) + "\n"


def _emit(rows, args):
    text = _rows_to_json(rows) if args.format == "json" else _rows_to_csv(rows)
    _write(text, args.out)


def _load(args):
    if not args.potential:
        raise PotentialFormatError("--potential FILE is required")
    return load_potential(args.potential)


def _cfg(args):
    kw = {}
    if args.tol is not None:
        kw["tol"] = args.tol
    return SolverConfig(**kw)


def cmd_spectrum(args):
    p = _load(args)
    cfg = _cfg(args)
    bs = scan_bands(p, args.lambda_max, cfg=cfg,
                    points_per_unit_z=args.grid,
                    allow_unclassified=args.allow_unclassified)
    rows = []
    for la, lb, mult in bs.segments:
        rows.append(("band", "", "", "", _fmt(math.sqrt(max(la, 0.0))),
                     _fmt(la), mult, "", ""))
    for e in bs.edges:
        rows.append(("band-edge", "", "", "", _fmt(e.z), _fmt(e.lam),
                     e.mult_above, e.classification, _fmt(e.residual)))
    _emit(rows, args)
    return EXIT_OK


def cmd_eigs(args):
    p = _load(args)
    cfg = _cfg(args)
    rows = []
    for kind, fn in (("periodic", periodic_eigenvalues),
                     ("antiperiodic", antiperiodic_eigenvalues)):
        ev = fn(p, args.n_max, cfg=cfg)
        for e in ev.entries:
            rows.append((kind, e.n, e.m, e.sign, _fmt(e.z), _fmt(e.lam),
                         e.multiplicity, "", ""))
    _emit(rows, args)
    return EXIT_OK


def cmd_resonances(args):
    p = _load(args)
    cfg = _cfg(args)
    scan = resonances(p, range(args.n_min, args.n_max + 1), cfg=cfg)
    rows = []
    for r in scan.records:
        label = "" if r.label is None else f"{r.label[0]}-{r.label[1]}"
        kind_detail = "double" if r.multiplicity > 1 else "simple"
        rows.append(("resonance", r.n, "", label, _fmt(r.z), _fmt(r.lam),
                     r.multiplicity, kind_detail, ""))
    _emit(rows, args)
    if scan.count_flags:
        sys.stderr.write(f"count mismatches: {scan.count_flags}\n")
    return EXIT_OK


def cmd_traces(args):
    p = _load(args)
    cfg = _cfg(args)
    rep = trace_integrals(p, cfg=cfg, n_clusters=args.n_max)
    tol = args.tol if args.tol is not None else 0.02
    scale0 = max(abs(rep.q0_target), 0.01)
    scale2 = max(abs(rep.q2_target), 0.01)
    ok = (abs(rep.q0 - rep.q0_target) <= tol * scale0 and
          abs(rep.q2 - rep.q2_target) <= tol * scale2 and
          not rep.insufficient_truncation)
    payload = {
        "Q0": rep.q0, "Q2": rep.q2,
        "targets": {"Q0": rep.q0_target, "Q2": rep.q2_target},
        "truncation": {"tail_q0": rep.tail_q0, "tail_q2": rep.tail_q2,
                       "insufficient": rep.insufficient_truncation},
        "pass": bool(ok),
    }
    _write(json.dumps(payload, indent=1, sort_keys=True) + "\n", args.out)
    return EXIT_OK if ok else EXIT_CHECKS


def cmd_qmap(args):
    p = _load(args)
    cfg = _cfg(args)
    zmax = math.sqrt(args.lambda_max)
    npts = max(2, int(args.grid * zmax) + 1)
    xs = np.linspace(0.0, zmax, npts)
    grid = exponent_and_density(p, xs, eps=args.eps, cfg=cfg)
    lines = ["x,u,v"]
    for x, u, v in zip(grid.x, grid.u, grid.v):
        lines.append(f"{_fmt(x)},{_fmt(u)},{_fmt(v)}")
    _write("\n".join(lines) + "\n", args.out)
    rep = trace_integrals(p, cfg=cfg, n_clusters=args.n_max)
    sidecar = {
        "Q0": rep.q0, "Q2": rep.q2,
        "targets": {"Q0": rep.q0_target, "Q2": rep.q2_target},
        "truncation": {"tail_q0": rep.tail_q0, "tail_q2": rep.tail_q2,
                       "insufficient": rep.insufficient_truncation},
        "eps": args.eps,
    }
    side_path = (args.out + ".json") if args.out else None
    _write(json.dumps(sidecar, indent=1, sort_keys=True) + "\n", side_path)
    if args.upper_out:
        ys = np.geomspace(0.05, zmax, 40)
        u, v = upper_plane_grid(p, xs, ys, cfg=cfg)
        lines = ["x,y,Re_w,Im_w"]
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(u[i, j])},{_fmt(v[i, j])}")
        _write("\n".join(lines) + "\n", args.upper_out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification battery

def _check_structural(p, name, cfg, rng, rows):
    dim = p.dim
    jmat = j_matrix(dim)
    eye = np.eye(2 * dim)
    zs = 0.3 + rng.uniform(0.2, 15.0, size=6) + 1j * rng.uniform(-2.0, 2.0, size=6)
    zs = np.concatenate([zs.real, zs])    # some real, some complex
    worst = {"det": 0.0, "symplectic": 0.0, "tl2": 0.0, "cheb": 0.0,
             "pairing": 0.0, "even": 0.0}
    for z in zs:
        ms = integrate_monodromy(p, z, cfg=cfg)
        m = ms.monodromy
        worst["det"] = max(worst["det"], abs(np.linalg.det(m) - 1.0))
        worst["symplectic"] = max(worst["symplectic"],
                                  np.abs(m @ (-jmat @ m.T @ jmat) - eye).max())
        cp = char_poly(ms)
        tau = complex(rng.normal(), rng.normal())
        d1 = cp.eval_d(tau)
        scale = max(1.0, abs(d1))
        worst["tl2"] = max(worst["tl2"],
                           abs(d1 - tau ** (2 * dim) * cp.eval_d(1.0 / tau)) / scale)
        tvals = traces(ms, 4)
        bs = lyapunov_values(p, z, cfg=cfg)
        for n_ in range(1, 5):
            basis = [0] * n_ + [1]
            lhs = sum(np.polynomial.chebyshev.chebval(d, basis)
                      for d in bs.deltas)
            rhs = dim * tvals[n_ - 1]
            scale = max(1.0, abs(rhs))
            worst["cheb"] = max(worst["cheb"], abs(lhs - rhs) / scale)
        worst["pairing"] = max(worst["pairing"], bs.pair_gap)
        # multiplier pairing: eigenvalues closed under tau -> 1/tau
        tau_all = np.linalg.eigvals(m)
        inv = 1.0 / tau_all
        cost = np.abs(tau_all[:, None] - inv[None, :])
        worst["even"] = max(worst["even"],
                            float(cost.min(axis=1).max()) / (1.0 + np.abs(tau_all).max()))
    rows.append((f"det M = 1 [{name}]", worst["det"], 1e-8))
    rows.append((f"symplectic identity [{name}]", worst["symplectic"], 1e-8))
    rows.append((f"palindromic char poly [{name}]", worst["tl2"], 1e-8))
    rows.append((f"Chebyshev trace identity [{name}]", worst["cheb"], 1e-7))
    rows.append((f"eigenvalue doubling [{name}]", worst["pairing"], 1e-6))
    rows.append((f"multiplier reciprocal pairing [{name}]", worst["even"], 1e-6))


def _check_potential(p, name, rows):
    tgrid = (np.arange(4096) + 0.5) / 4096
    vals = p.evaluate(tgrid)
    quad = float(np.einsum("tij,tji->", vals, vals)) / len(tgrid)
    hs = p.hs_norm_sq()
    rows.append((f"Parseval vs quadrature [{name}]",
                 abs(hs - quad) / max(1.0, abs(hs)), 1e-8))
    per = np.abs(p.evaluate(0.37) - p.evaluate(1.37)).max()
    rows.append((f"periodicity [{name}]", per, 1e-14))


def _check_series(p, name, cfg, rows):
    z = 10.0
    res = series_monodromy(p, z, 10)
    ms = integrate_monodromy(p, z, cfg=cfg, steps=2048)
    worst = 0.0
    for blk in ("theta", "phi", "theta_prime", "phi_prime"):
        diff = np.abs(getattr(res.sample, blk) - getattr(ms, blk)).max()
        bound = res.bound_for(blk) + 1e-9
        worst = max(worst, diff / bound)
    rows.append((f"iteration bound [{name}]", worst, 1.0))


def _check_direct_sum(p1, p2, cfg, rows):
    psum = direct_sum(p1, p2)
    worst = 0.0
    for z in (0.9, 3.3, 7.1):
        d_sum = np.sort_complex(lyapunov_values(psum, z, cfg=cfg).deltas)
        d_union = np.sort_complex(np.concatenate([
            lyapunov_values(p1, z, cfg=cfg).deltas,
            lyapunov_values(p2, z, cfg=cfg).deltas]))
        worst = max(worst, float(np.abs(d_sum - d_union).max()))
    rows.append(("direct sum branch union", worst, 1e-8))


def cmd_verify(args):
    cfg = _cfg(args)
    pots = dict(corpus.small_corpus())
    if args.potential:
        pots["user"] = load_potential(args.potential)
    seed_note = ""
    rng = np.random.default_rng(args.random_seed if args.random_seed is not None else 20240607)
    if args.random_seed is not None:
        for k in range(2):
            pots[f"random-{args.random_seed}-{k}"] = corpus.random_potential(rng)
        seed_note = f"# random potentials seeded with {args.random_seed}\n"
    rows = []
    for name, p in sorted(pots.items()):
        _check_potential(p, name, rows)
        _check_structural(p, name, cfg, rng, rows)
    _check_series(pots["mixed-n2"], "mixed-n2", cfg, rows)
    _check_direct_sum(pots["diag-n2"], pots["coupling-n2"], cfg, rows)

    width = max(len(r[0]) for r in rows) + 2
    lines = [seed_note.rstrip("\n")] if seed_note else []
    ok = True
    for name, resid, tol in rows:
        status = "PASS" if resid <= tol else "FAIL"
        ok &= status == "PASS"
        lines.append(f"{status}  {name:<{width}} residual={_fmt(resid)} tol={_fmt(tol)}")
    lines.append(f"{'OK' if ok else 'FAILED'}: {len(rows)} checks")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_CHECKS


def build_parser():
    ap = argparse.ArgumentParser(prog="hillmat",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--potential", help="JSON potential file")
    common.add_argument("--lambda-max", type=float, default=100.0)
    common.add_argument("--n-max", type=int, default=6)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--grid", type=int, default=32,
                        help="scan points per unit z")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None)
    common.add_argument("--eps", type=float, default=1e-4)
    common.add_argument("--allow-unclassified", action="store_true")
    common.add_argument("--random-seed", type=int, default=None)

    sub.add_parser("spectrum", parents=[common]).set_defaults(fn=cmd_spectrum)
    sub.add_parser("eigs", parents=[common]).set_defaults(fn=cmd_eigs)
    pres = sub.add_parser("resonances", parents=[common])
    pres.add_argument("--n-min", type=int, default=1)
    pres.set_defaults(fn=cmd_resonances)
    sub.add_parser("traces", parents=[common]).set_defaults(fn=cmd_traces)
    pq = sub.add_parser("qmap", parents=[common])
    pq.add_argument("--upper-out", default=None)
    pq.set_defaults(fn=cmd_qmap)
    sub.add_parser("verify", parents=[common]).set_defaults(fn=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (PotentialFormatError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except (NumericalError, PairingError, TrackingError,
            PhaseResolutionError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
