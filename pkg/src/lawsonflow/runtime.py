"""Run directories: deterministic naming, CSV/JSON export with version stamps, manifests,
and the diagnosis of a finished run."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__
from .cone_params import derive_cone_params, spectral_exponents
from .config import RunConfig, dump_config, parse_config, complete
from .diagnose import (blowup_rate_fit, bounded_H_criterion, feasible_exponent_max, make_subsuper,
                       mean_curvature_graph, parametric_curvatures, subsuper_grid, subsuper_residual,
                       tip_curvatures)
from .errors import LawsonFlowError, NumericalError, PersistError, SpanTooShort, VersionMismatch
from .evolve import FlowRun, FlowState, ShootResult, run_flow, series_columns, shoot_parameters
from .fd import derivatives

RUN_ROOT_ENV = "LAWSONFLOW_RUN_ROOT"
STAMP = f"# lawsonflow {__version__}"
SNAPSHOT_COLUMNS = ["chart", "frame", "time", "index", "mesh", "value", "d1", "d2", "residual"]


def run_root(root=None) -> Path:
    return Path(root if root is not None else os.environ.get(RUN_ROOT_ENV, "runs"))


def run_id(cfg: RunConfig, kind: str = "evolve") -> str:
    return f"{kind}-" + hashlib.sha256((kind + __version__ + dump_config(cfg)).encode()).hexdigest()[:16]


def fmt(v) -> str:
    """17 significant digits for floats (exact round trip), plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(STAMP + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as fh:
        stamp = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    return stamp, rows[0], rows[1:]


def _write(path: Path, text: str) -> str:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise PersistError(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(text.encode()).hexdigest()


def derived_table(cfg: RunConfig) -> dict:
    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)
    return {"cone": params.as_dict(), "spectral": exps.as_dict(),
            "typeII_scale_t0": (-cfg.t0) ** (0.5 + exps.sigma_l),
            "a_ball_radius": cfg.beta ** (params.alpha_tilde - params.alpha),
            "bounded_H": bounded_H_criterion(params.n, cfg.l),
            "a_max": feasible_exponent_max(params.alpha, exps.lambda_l)}


def snapshot_rows(state: FlowState):
    """CSV rows for one state; residual holds the mean curvature (normal speed) at the node."""
    params = state.params
    rows = []
    if state.tip is not None:
        c = state.tip
        H, _ = tip_curvatures(c.mesh, c.values, c.d1, c.d2, params)
        rows += [[c.chart, c.frame, state.t, i, c.mesh[i], c.values[i], c.d1[i], c.d2[i], H[i]]
                 for i in range(len(c.mesh))]
    if state.rot is not None:
        c = state.rot
        d1, d2 = derivatives(c.mesh, c.values)
        H = mean_curvature_graph(c.values, d1, d2, c.mesh, params)
        rows += [[c.chart, c.frame, state.t, i, c.mesh[i], c.values[i], d1[i], d2[i], H[i]] for i in range(len(c.mesh))]
    if state.cap is not None:
        c = state.cap
        H, _, _ = parametric_curvatures(c.xi, c.eta, params, c.start_axis, c.end_axis)
        nan = float("nan")
        rows += [[c.chart, c.frame, state.t, i, c.xi[i], c.eta[i], nan, nan, H[i]] for i in range(len(c.xi))]
    return rows


def _manifest(cfg, kind, status, message, files, extra=None) -> dict:
    m = {"run_id": run_id(cfg, kind), "kind": kind, "version": __version__, "status": status, "message": message,
         "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in
                    ((k, getattr(cfg, k)) for k in cfg.__dataclass_fields__)},
         "derived": derived_table(cfg), "files": files}
    if extra:
        m.update(extra)
    return m


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def persist_run(run: FlowRun, root=None) -> tuple[Path, dict]:
    cfg = run.cfg
    rid = run_id(cfg)
    d = run_root(root) / rid
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    files["config.cfg"] = _write(d / "config.cfg", STAMP + "\n" + dump_config(cfg))
    rows = [r for st in run.snapshots for r in snapshot_rows(st)]
    files["snapshots.csv"] = _write(d / "snapshots.csv", csv_text(SNAPSHOT_COLUMNS, rows))
    cols = series_columns(cfg.l)
    files["diagnostics.csv"] = _write(d / "diagnostics.csv",
                                      csv_text(cols, [[row[c] for c in cols] for row in run.series]))
    manifest = _manifest(cfg, "evolve", run.status, run.message, files, {"steps": run.steps})
    _write(d / "manifest.json", _json(manifest))
    return d, manifest


def run_and_persist(cfg: RunConfig, root=None) -> tuple[Path, dict]:
    """Run the flow and write manifest.json, config.cfg, snapshots.csv and diagnostics.csv."""
    return persist_run(run_flow(cfg), root)


def shoot_and_persist(cfg: RunConfig, root=None) -> tuple[Path, dict]:
    rid = run_id(cfg, "shoot")
    d = run_root(root) / rid
    d.mkdir(parents=True, exist_ok=True)
    files = {"config.cfg": _write(d / "config.cfg", STAMP + "\n" + dump_config(cfg))}
    status, message, res = "completed", "", None
    try:
        res = shoot_parameters(cfg)
    except NumericalError as exc:
        status, message = "failed", f"{type(exc).__name__}: {exc}"
    if res is not None:
        header = ["t_hat"] + [f"a_{j}" for j in range(cfg.l)] + ["phi_norm", "tolerance"]
        rows = [[t] + list(a) + [f, res.tolerance] for t, a, f in zip(res.horizons, res.a_star, res.phi_norm)]
        files["shoot.csv"] = _write(d / "shoot.csv", csv_text(header, rows))
        trace = [[r["t_hat"], r["iter"]] + r["a"] + [r["phi_norm"]] for r in res.trace]
        files["trace.csv"] = _write(d / "trace.csv", csv_text(["t_hat", "iter"] + [f"a_{j}" for j in range(cfg.l)]
                                                             + ["phi_norm"], trace))
    manifest = _manifest(cfg, "shoot", status, message, files)
    _write(d / "manifest.json", _json(manifest))
    return d, manifest


# --- diagnosis of a run directory ----------------------------------------------------------

def load_run(run_dir) -> tuple[dict, RunConfig]:
    d = Path(run_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise PersistError(f"cannot read manifest in {d}: {exc}") from exc
    versions = {manifest.get("version")}
    for name, digest in manifest["files"].items():
        path = d / name
        if not path.exists():
            raise PersistError(f"{name} listed in the manifest is missing")
        text = path.read_text(encoding="utf-8")
        if hashlib.sha256(text.encode()).hexdigest() != digest:
            raise PersistError(f"checksum mismatch for {name}")
        first = text.split("\n", 1)[0]
        if not first.startswith("# lawsonflow "):
            raise VersionMismatch(f"{name} carries no version stamp")
        versions.add(first[len("# lawsonflow "):])
    if len(versions) != 1:
        raise VersionMismatch(f"mixed tool versions in {d}: {sorted(versions)}")
    text = (d / "config.cfg").read_text(encoding="utf-8").split("\n", 1)[1]
    return manifest, complete(parse_config(text))


def series_from_csv(path) -> dict:
    _, header, rows = read_csv(path)
    cols = {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}
    return cols


def trend_checks(series: dict, cfg: RunConfig) -> dict:
    """Finite-window trend checks on a diagnostics series."""
    exps = spectral_exponents(derive_cone_params(cfg.p, cfg.q), cfg.l)
    t = series["t"]
    out = {
        "decades": float(math.log10(t[0] / t[-1])),
        "admissible_all": bool(np.all(series["admissible"] == 1)),
        "sandwich_all": bool(np.all(series["sandwich_inside"] == 1)),
        "typeII_A_ratio": float(series["typeII_A"].max() / series["typeII_A"].min()),
    }
    H = series["sup_H"]
    out["H_final_over_max"] = float(H[-1] / H.max())
    try:
        fit = blowup_rate_fit(t, series["sup_A"], exps)
        out["rate_fit"] = {"slope": fit.slope, "band": fit.band, "target": fit.target, "deviation": fit.deviation,
                           "regime": fit.regime, "n_points": fit.n_points}
    except SpanTooShort as exc:
        out["rate_fit"] = {"error": str(exc)}
    return out


def diagnose_run(run_dir) -> dict:
    """Write diagnose.csv and verdict.json into run_dir/diagnose and return the verdict."""
    d = Path(run_dir)
    manifest, cfg = load_run(d)
    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)
    verdict = {"run_id": manifest["run_id"], "version": __version__, "status": manifest["status"],
               "bounded_H_criterion": bounded_H_criterion(params.n, cfg.l),
               "a_max": feasible_exponent_max(params.alpha, exps.lambda_l)}
    out = d / "diagnose"
    out.mkdir(exist_ok=True)
    if manifest["kind"] == "evolve":
        series = series_from_csv(d / "diagnostics.csv")
        verdict["trend"] = trend_checks(series, cfg)
        rows = [[series["t"][i], -math.log(-series["t"][i]), math.log(series["sup_A"][i]), series["typeII_A"][i],
                 series["sup_H"][i], series["weighted_H"][i]] for i in range(len(series["t"]))]
        _write(out / "diagnose.csv", csv_text(["t", "s", "log_sup_A", "typeII_A", "sup_H", "weighted_H"], rows))
    # sign pattern of the sub/supersolutions on the region where they are used
    t_lo = -(cfg.rho / (4 * cfg.R)) ** 2
    T, X = subsuper_grid(t_lo, t_lo / 100, cfg.R, cfg.rho)
    C0 = subsuper_leading_coefficient(params, exps)
    signs = {}
    for sgn in "+-":
        rep = subsuper_residual(make_subsuper(params, exps, sgn, C0), params, T, X)
        signs[sgn] = {"expected_sign": rep["expected_sign"], "sign_ok": rep["sign_ok"],
                      "min_signed": rep["min_signed"], "max_Q_ratio": rep["max_Q_ratio"]}
    verdict["subsuper"] = signs
    _write(out / "verdict.json", _json(verdict))
    return verdict


def subsuper_leading_coefficient(params, exps) -> float:
    """(-1)^l K_{l,l}: coefficient of x^{2 lambda_l + 1} in the low-mode packet."""
    from .specfn import expansion_K

    K = expansion_K(exps.l, exps.b)
    return float((-1) ** exps.l * K[-1])
