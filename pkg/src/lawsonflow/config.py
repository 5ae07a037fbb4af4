"""Flat key = value run configuration with a typed schema and ordering checks.

Keys (units: all lengths in the ambient profile-plane coordinates, times in t):

    p, q, l          integers, required
    a                comma-separated l reals (perturbation parameters), default zeros
    t0               initial time (< 0); default makes beta (-t0)^(1/2+sigma_l) = rho/4
    t_end            final time (t0 < t_end < 0); default t0/10
    rho, beta, Lambda, R, delta
    step_ds          maximal time step measured in s = -ln(-t)
    step_tol         allowed relative change per step (adaptive control)
    adaptive         true/false
    snapshot_ds      snapshot spacing in s
    tip_nodes, tip_h0, tip_factor, rot_inner, rot_outer, rot_per_decade, cap_start, cap_nodes
    profile_rmax, profile_rtol
    include_packet   true/false
    shoot_horizons   comma-separated horizon offsets in s (t_hat = t0 e^{-ds})
    shoot_tol        tolerance on |Phi|; 0 means 1e-6 e^{lambda_l s0}
    shoot_max_iter
    seed             only used by randomized test utilities
    workers          process count for independent runs
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cone_params import derive_cone_params, spectral_exponents
from .errors import ConstraintViolation, ParseError

RHO_MAX = 0.1  # policy bound standing in for rho << 1
REQUIRED = ("p", "q", "l")


@dataclass(frozen=True)
class RunConfig:
    p: int
    q: int
    l: int
    a: tuple = ()
    t0: float = 0.0
    t_end: float = 0.0
    rho: float = 0.05
    beta: float = 20.0
    Lambda: float = 1e4
    R: float = 10.0
    delta: float = 0.05
    step_ds: float = 2e-3
    step_tol: float = 1e-3
    adaptive: bool = True
    snapshot_ds: float = 0.1
    tip_nodes: int = 400
    tip_h0: float = 0.02
    tip_factor: float = 1.2
    rot_inner: float = 0.8
    rot_outer: float = 1.3
    rot_per_decade: int = 140
    cap_start: float = 0.8
    cap_nodes: int = 400
    profile_rmax: float = 1e3
    profile_rtol: float = 1e-12
    include_packet: bool = True
    shoot_horizons: tuple = (0.25, 0.5, 0.75)
    shoot_tol: float = 0.0
    shoot_max_iter: int = 12
    seed: int = 0
    workers: int = 1

    @property
    def a_vector(self) -> np.ndarray:
        return np.zeros(self.l) if len(self.a) == 0 else np.asarray(self.a, dtype=float)

    def replace(self, **kw) -> "RunConfig":
        d = asdict(self)
        d.update(kw)
        return RunConfig(**d)


def _kind(f):
    return {"int": int, "float": float, "bool": bool, "tuple": tuple}[f.type] if isinstance(f.type, str) else f.type


_SCHEMA = {f.name: _kind(f) for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _SCHEMA[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ParseError(f"bad value for {key}: {text!r}") from exc


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def parse_config(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val)
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ParseError(f"missing required keys: {', '.join(missing)}")
    return values


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in asdict(cfg).items())


def default_t0(cfg: RunConfig) -> float:
    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)
    return -((cfg.rho / (4 * cfg.beta)) ** (1 / (0.5 + exps.sigma_l)))


def complete(values: dict) -> RunConfig:
    """Fill time defaults and validate."""
    cfg = RunConfig(**values)
    if cfg.t0 == 0.0:
        cfg = cfg.replace(t0=default_t0(cfg))
    if cfg.t_end == 0.0:
        cfg = cfg.replace(t_end=cfg.t0 / 10)
    validate(cfg)
    return cfg


def admissibility_constant(cfg: RunConfig) -> float:
    """Smallest C with x^i |d^i packet| <= C((-t0)^l x^alpha + x^{2 lambda_l + 1}), i = 0, 1, 2."""
    from .initdata import packet_model

    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)
    pk = packet_model(params, exps, cfg.a_vector, cfg.t0)
    x = np.geomspace(1e-3 * math.sqrt(-cfg.t0), 2 * cfg.rho, 2000)
    den = (-cfg.t0) ** cfg.l * x ** params.alpha + x ** (2 * exps.lambda_l + 1)
    return float(max(np.max(x ** i * np.abs(pk(x, i)) / den) for i in range(3)))


def validate(cfg: RunConfig) -> None:
    """Raise ConstraintViolation naming the first violated ordering constraint."""
    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)

    def need(ok, what):
        if not ok:
            raise ConstraintViolation(what)

    need(cfg.t0 < 0, "t0 < 0")
    need(cfg.t0 < cfg.t_end < 0, "t0 < t_end < 0")
    need(0 < cfg.rho <= RHO_MAX, f"0 < rho <= {RHO_MAX} (rho << 1)")
    need(cfg.beta > 1, "beta > 1 (beta >> 1)")
    need(cfg.R > 1, "R > 1 (R >> 1)")
    inner = cfg.beta * (-cfg.t0) ** (0.5 + exps.sigma_l)
    need(inner < cfg.rho, f"beta (-t0)^(1/2+sigma_l) = {inner:.4g} < rho")
    need(len(cfg.a) in (0, cfg.l), f"a has l = {cfg.l} entries")
    bound = cfg.beta ** (params.alpha_tilde - params.alpha)
    need(float(np.linalg.norm(cfg.a_vector)) < bound, f"|a| < beta^(alpha_tilde - alpha) = {bound:.4g}")
    need(0 < cfg.delta < 0.2, "0 < delta < 0.2")
    need(cfg.rho < cfg.cap_start < cfg.rot_outer, "rho < cap_start < rot_outer")
    need(cfg.rot_outer < 2 - cfg.delta * math.sqrt(1 + params.mu ** 2), "rot_outer ends inside the straight piece")
    need(cfg.step_ds > 0 and cfg.snapshot_ds > 0, "positive step and snapshot spacing")
    need(cfg.Lambda > 2 * admissibility_constant(cfg), "Lambda above twice the packet admissibility constant")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return complete(parse_config(text))


def config_from_text(text: str) -> RunConfig:
    return complete(parse_config(text))
