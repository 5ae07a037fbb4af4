"""Command line entry point. Exit codes: 0 success, 2 constraint violation, 3 numerical failure."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .cone_params import derive_cone_params, spectral_exponents
from .config import load_config
from .errors import ConstraintError, LawsonFlowError, NumericalError


def _out(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_params(args) -> int:
    from .runtime import _json
    from .diagnose import bounded_H_criterion, feasible_exponent_max

    params = derive_cone_params(args.p, args.q)
    out = {"cone": params.as_dict()}
    if args.l is not None:
        exps = spectral_exponents(params, args.l)
        out["spectral"] = exps.as_dict()
        out["bounded_H"] = bounded_H_criterion(params.n, args.l)
        out["a_max"] = feasible_exponent_max(params.alpha, exps.lambda_l)
    _out(_json(out), args.out)
    return 0


def cmd_specfn(args) -> int:
    from .runtime import csv_text
    from .specfn import expansion_K, normalization_c
    from .spectral import eigenvalue

    params = derive_cone_params(args.p, args.q)
    exps = spectral_exponents(params, args.l)
    K = [1.0] + expansion_K(args.l, exps.b)
    rows = [[j, eigenvalue(params, j), normalization_c(params, exps, j), (-1) ** j * K[j]] for j in range(args.l + 1)]
    _out(csv_text(["j", "lambda_j", "c_j", "signed_K_lj"], rows), args.out)
    return 0


def cmd_profile(args) -> int:
    from .profile import minimal_profile, rotated_profile, rotated_residual
    from .runtime import csv_text

    params = derive_cone_params(args.p, args.q)
    hat = minimal_profile(params, args.k, args.rmax, args.tol)
    rot = rotated_profile(hat)
    nan = float("nan")
    res_hat = np.full(len(hat.mesh), nan)
    res_hat[2:-1] = hat.residual()
    res_rot = np.concatenate([[nan], rotated_residual(rot)])
    rows = [[hat.mesh[i], hat.psi_hat[i], hat.psi_hat_d1[i], hat.psi_hat_d2[i], rot.mesh[i], rot.psi[i],
             rot.psi_d1[i], res_hat[i], res_rot[i]] for i in range(len(hat.mesh))]
    header = ["r", "psi_hat", "psi_hat_d1", "psi_hat_d2", "x", "psi", "psi_d1", "residual_hat", "residual_rot"]
    _out(csv_text(header, rows), args.out)
    return 0


def cmd_spectrum(args) -> int:
    from .runtime import _json
    from .spectral import WeightedQuadrature, eigenpairs, heat_propagate, inner_product_H

    params = derive_cone_params(args.p, args.q)
    exps = spectral_exponents(params, max(args.jmax, 1))
    quad = WeightedQuadrature.build(params.n)
    pairs = eigenpairs(params, exps, args.jmax)
    gram = [[inner_product_H(a, b, quad) for b in pairs] for a in pairs]
    y = np.array([0.5, 1.0, 2.0, 4.0])
    kernel = {}
    for s in (0.1, 1.0):
        for ph in pairs[:4]:
            lhs = heat_propagate(ph, y, s, params)
            kernel[f"s={s},j={ph.index}"] = float(np.max(np.abs(lhs - np.exp(-ph.lambda_i * s) * ph(y))))
    out = {"eigenvalues": [ph.lambda_i for ph in pairs], "gram": gram, "kernel_residual": kernel}
    _out(_json(out), args.out)
    return 0


def cmd_init(args) -> int:
    from .evolve import initial_state, make_context
    from .fd import derivatives
    from .runtime import csv_text

    cfg = load_config(args.config)
    st = initial_state(make_context(cfg))
    rows = [[st.tip.chart, z, w, d1, d2] for z, w, d1, d2 in zip(st.tip.mesh, st.tip.values, st.tip.d1, st.tip.d2)]
    d1, d2 = derivatives(st.rot.mesh, st.rot.values)
    rows += [[st.rot.chart, x, u, a, b] for x, u, a, b in zip(st.rot.mesh, st.rot.values, d1, d2)]
    nan = float("nan")
    rows += [[st.cap.chart, xi, eta, nan, nan] for xi, eta in zip(st.cap.xi, st.cap.eta)]
    _out(csv_text(["chart", "x", "value", "d1", "d2"], rows), args.out)
    return 0


def _report(d, manifest) -> int:
    print(json.dumps({"run_dir": str(d), "run_id": manifest["run_id"], "status": manifest["status"],
                      "message": manifest["message"]}))
    return 0 if manifest["status"] == "completed" else 3


def cmd_evolve(args) -> int:
    from .runtime import run_and_persist

    return _report(*run_and_persist(load_config(args.config), args.root))


def cmd_shoot(args) -> int:
    from .runtime import shoot_and_persist

    return _report(*shoot_and_persist(load_config(args.config), args.root))


def cmd_diagnose(args) -> int:
    from .runtime import _json, diagnose_run

    sys.stdout.write(_json(diagnose_run(args.run_dir)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lawsonflow", description="Equivariant MCF near Lawson cones")
    sub = ap.add_subparsers(dest="command", required=True)

    def pq(sp):
        sp.add_argument("--p", type=int, required=True)
        sp.add_argument("--q", type=int, required=True)
        sp.add_argument("--out", default=None, help="output file (default stdout)")

    sp = sub.add_parser("params", help="derived cone and spectral constants as JSON")
    pq(sp)
    sp.add_argument("--l", type=int, default=None)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("specfn", help="eigenfunction constants as CSV")
    pq(sp)
    sp.add_argument("--l", type=int, required=True)
    sp.set_defaults(func=cmd_specfn)

    sp = sub.add_parser("profile", help="minimal hypersurface profile as CSV")
    pq(sp)
    sp.add_argument("--k", type=float, default=1.0)
    sp.add_argument("--rmax", type=float, default=1e3)
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("spectrum", help="eigenvalues, Gram matrix and kernel residuals as JSON")
    pq(sp)
    sp.add_argument("--jmax", type=int, default=6)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("init", help="sampled initial curve as CSV")
    sp.add_argument("config")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_init)

    for name, func, help_ in (("evolve", cmd_evolve, "run the flow into a run directory"),
                              ("shoot", cmd_shoot, "solve Phi(a) = 0 over the configured horizons")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--root", default=None, help="run-directory root (default $LAWSONFLOW_RUN_ROOT or ./runs)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("diagnose", help="verdict JSON and diagnostics CSV for a run directory")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConstraintError as exc:
        print(f"constraint violation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except LawsonFlowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
