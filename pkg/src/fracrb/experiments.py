"""Experiment drivers: offline/online workflows, decay studies and error
decomposition.  Every driver writes CSV files plus a JSON run manifest."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BasisFormatError, InvalidParameter
from .fractional import FractionalProblem, evaluate_full, evaluate_oracle, series_l2_error
from .linalg import SpdSolver, generalized_eigen
from .mesh import assemble, build_mesh, h10_norm, l2_norm
from .reduced_basis import (
    ReducedBasis,
    TrainingSet,
    error_norms,
    evaluate_rb,
    greedy_build,
    load_basis,
    save_basis,
)
from .sinc import SincGrid

log = logging.getLogger(__name__)

EW_THETA = 200
FIT_RANGE = (3, 25)


class ConfigError(InvalidParameter):
    pass


@dataclass
class ExperimentConfig:
    domain: str = "interval"
    h: float = 2.0**-8
    k: float = 0.5
    s_min: float = 0.1
    s_max: float = 0.9
    s: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    eps: float = 1e-8
    n_max: int = 60
    theta_count: int = 10_000
    tol: float = 1e-10
    alpha_star: float = 1.0
    out: str = "out"
    seed: int | None = None
    h_list: list = field(default_factory=lambda: [2.0**-6, 2.0**-8, 2.0**-10])

    def validate(self) -> "ExperimentConfig":
        if not (0.0 < self.s_min <= self.s_max < 1.0):
            raise ConfigError(f"need 0 < s_min <= s_max < 1, got [{self.s_min}, {self.s_max}]")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not self.k > 0:
            raise ConfigError("k must be positive")
        if not (0.0 < self.alpha_star <= 1.0):
            raise ConfigError("alpha_star must lie in (0, 1]")
        if self.n_max < 1 or self.theta_count < 1:
            raise ConfigError("n_max and theta_count must be >= 1")
        for s in self.s:
            if not (self.s_min <= s <= self.s_max):
                raise ConfigError(f"queried s={s} outside [{self.s_min}, {self.s_max}]")
        return self

    @property
    def default_h(self) -> float:
        return 2.0**-8 if self.domain == "interval" else 0.05


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_ALIASES = {"smin": "s_min", "smax": "s_max", "nmax": "n_max", "theta": "theta_count",
            "target_h": "h"}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    try:
        if key in ("s", "h_list"):
            return [_num(v) for v in value.replace(",", " ").split()]
        if kind == "float":
            return _num(value)
        if kind == "int":
            return int(value)
        if kind == "int | None":
            return None if value.lower() in ("", "none") else int(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _num(text: str) -> float:
    text = text.strip()
    # allow 2^-8 style powers
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment)."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ErrorRecord:
    experiment: str
    param: str
    value: float
    s: float
    norm: str
    error: float

    def __post_init__(self):
        if not self.error >= 0:
            raise ValueError("error must be non-negative")


# --------------------------------------------------------------------------
# helpers


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_records(path: Path, records: list[ErrorRecord]) -> Path:
    header = [f.name for f in dataclasses.fields(ErrorRecord)]
    return write_csv(path, header, (dataclasses.astuple(r) for r in records))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_manifest(out: Path, name: str, cfg: ExperimentConfig, extra: dict) -> Path:
    data = {"command": name, "version": __version__, "config": dataclasses.asdict(cfg)}
    data.update(extra)
    path = out / f"{name}_manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path


def write_field(path, v: np.ndarray) -> None:
    lines = [f"FLD {v.size}"] + [repr(float(x)) for x in v]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_field(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").split()
    if len(lines) < 2 or lines[0] != "FLD":
        raise BasisFormatError(f"{path}: not a field file")
    n = int(lines[1])
    vals = np.array([float(t) for t in lines[2:]])
    if vals.size != n:
        raise BasisFormatError(f"{path}: expected {n} values, found {vals.size}")
    return vals


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def loglinear_fit(ns, errs, n_range=FIT_RANGE, floor: float = 0.0) -> tuple[float, float, int]:
    """Least-squares fit of ``log(err) = a + slope * n``.

    Only points with ``n`` inside ``n_range`` and ``err > floor`` are used.
    Returns ``(slope, r_squared, points_used)``.
    """
    ns = np.asarray(ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    lo, hi = n_range
    mask = (ns >= lo) & (ns <= hi) & (errs > floor)
    x, y = ns[mask], np.log(errs[mask])
    if x.size < 3:
        return float("nan"), float("nan"), int(x.size)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (icpt + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2, int(x.size)


@dataclass
class Setup:
    cfg: ExperimentConfig
    sys: object
    grid: SincGrid
    prob: FractionalProblem


def setup(cfg: ExperimentConfig, h: float | None = None) -> Setup:
    cfg.validate()
    mesh = build_mesh(cfg.domain, cfg.h if h is None else h)
    sys = assemble(mesh)
    grid = SincGrid.universal(cfg.s_min, cfg.s_max, cfg.k)
    prob = FractionalProblem(sys, grid, SpdSolver(tol=cfg.tol), cache_factorizations=True)
    return Setup(cfg, sys, grid, prob)


def training_set(cfg: ExperimentConfig, grid: SincGrid) -> TrainingSet:
    if cfg.seed is None:
        return TrainingSet.uniform(grid, cfg.theta_count)
    return TrainingSet.random(grid, cfg.theta_count, cfg.seed)


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# commands


def cmd_offline(cfg: ExperimentConfig) -> dict:
    """Build the universal basis; write the basis file and the greedy trace."""
    t0 = time.perf_counter()
    st = setup(cfg)
    rb = greedy_build(st.sys, st.grid, training_set(cfg, st.grid), cfg.eps, cfg.n_max, st.prob)
    out = _out(cfg)
    basis_path = out / "basis.flrb"
    save_basis(rb, basis_path)
    trace_path = write_csv(
        out / "greedy_trace.csv", ["n", "y", "estimator_max"],
        ((t.n, t.y, t.estimator_max) for t in rb.trace),
    )
    write_manifest(out, "offline", cfg, {
        "basis_sha256": file_hash(basis_path), "n": rb.n, "n_dofs": rb.n_dofs,
        "stagnated": rb.stagnated, "gamma": rb.gamma, "gamma_linear_cp": rb.gamma_linear,
        "snapshot_solves": st.prob.solve_count, "wall_time_s": time.perf_counter() - t0,
    })
    log.info("offline: n=%d basis %s", rb.n, basis_path)
    return {"basis": basis_path, "trace": trace_path, "rb": rb}


def check_compatible(rb: ReducedBasis, st: Setup) -> None:
    if rb.n_dofs != st.sys.n_dofs:
        raise BasisFormatError(
            f"basis has {rb.n_dofs} DOFs but the mesh has {st.sys.n_dofs}"
        )
    lo, hi = rb.grid.domain
    glo, ghi = st.grid.domain
    if glo < lo - 1e-12 or ghi > hi + 1e-12:
        raise BasisFormatError("basis parameter domain does not cover the quadrature grid")


def cmd_evaluate(cfg: ExperimentConfig, basis_path, s_list=None, mode: str = "both") -> dict:
    """Evaluate ``u(s)`` in full and/or reduced mode and write field files."""
    if mode not in ("full", "rb", "both"):
        raise ConfigError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    st = setup(cfg)
    rb = None
    basis_hash = None
    if mode in ("rb", "both"):
        rb = load_basis(basis_path)
        check_compatible(rb, st)
        basis_hash = file_hash(basis_path)
    out = _out(cfg)
    s_list = cfg.s if s_list is None else list(s_list)
    records: list[ErrorRecord] = []
    solves: dict[str, int] = {}
    for s in s_list:
        if not (cfg.s_min <= s <= cfg.s_max):
            raise ConfigError(f"s={s} outside [{cfg.s_min}, {cfg.s_max}]")
        u_full = u_rb = None
        before = st.prob.solve_count
        if mode in ("full", "both"):
            u_full = evaluate_full(st.prob, s)
            write_field(out / f"u_full_s{s:g}.fld", u_full)
        if rb is not None:
            u_rb = evaluate_rb(rb, st.grid, s)
            write_field(out / f"u_rb_s{s:g}.fld", u_rb)
        solves[f"{s:g}"] = st.prob.solve_count - before
        log.info("evaluate s=%g mode=%s full solves=%d", s, mode, solves[f"{s:g}"])
        if u_full is not None and u_rb is not None:
            d = u_full - u_rb
            records.append(ErrorRecord("evaluate", "n", rb.n, s, "l2", l2_norm(d, st.sys)))
            records.append(ErrorRecord("evaluate", "n", rb.n, s, "h10", h10_norm(d, st.sys)))
    err_path = write_records(out / "evaluate_errors.csv", records)
    write_manifest(out, "evaluate", cfg, {
        "mode": mode, "basis_sha256": basis_hash, "full_solves": solves,
        "wall_time_s": time.perf_counter() - t0,
    })
    return {"records": records, "solves": solves, "errors": err_path}


def decay_study(st: Setup, rb: ReducedBasis, s_list, theta_count: int = EW_THETA):
    """Errors ``e_w(n)`` and ``e_u(s)(n)`` for the nested bases n = 1..rb.n."""
    sys, grid = st.sys, st.grid
    lo, hi = grid.domain
    ys = np.linspace(lo, hi, theta_count)
    full = {s: evaluate_full(st.prob, s) for s in s_list}
    records: list[ErrorRecord] = []
    for n in range(1, rb.n + 1):
        sub = rb.truncate(n)
        # error equation avoids the cancellation of w_h - B c near round-off
        ew = float(error_norms(sub, sys, ys, st.prob).max())
        records.append(ErrorRecord("e_w", "n", n, float("nan"), "h10", ew))
        for s in s_list:
            e = l2_norm(evaluate_rb(sub, grid, s) - full[s], sys)
            records.append(ErrorRecord("e_u", "n", n, s, "l2", e))
    return records


def cmd_decay_experiment(cfg: ExperimentConfig, h: float | None = None,
                         write: bool = True) -> dict:
    t0 = time.perf_counter()
    st = setup(cfg, h)
    rb = greedy_build(st.sys, st.grid, training_set(cfg, st.grid), cfg.eps, cfg.n_max, st.prob)
    records = decay_study(st, rb, cfg.s)
    result = {"records": records, "rb": rb, "f_norm": st.sys.f_norm, "setup": st}
    if write:
        out = _out(cfg)
        result["csv"] = write_records(out / "decay.csv", records)
        write_csv(out / "decay_selected_y.csv", ["n", "y", "estimator_max"],
                  ((t.n, t.y, t.estimator_max) for t in rb.trace))
        write_manifest(out, "decay", cfg, {
            "n": rb.n, "f_norm": st.sys.f_norm, "stagnated": rb.stagnated,
            "wall_time_s": time.perf_counter() - t0,
        })
    return result


def records_series(records, experiment: str, s: float | None = None):
    rows = [r for r in records if r.experiment == experiment
            and (s is None or math.isclose(r.s, s))]
    return np.array([r.value for r in rows]), np.array([r.error for r in rows])


def cmd_h_sensitivity(cfg: ExperimentConfig, h_list=None, s: float = 0.1,
                      floor: float = 1e-12) -> dict:
    """Decay slope of ``e_u(s)(n)`` for each mesh size.

    Points below ``floor * ||f||`` are round-off plateau and excluded from
    the fit.
    """
    if cfg.domain != "interval":
        raise ConfigError("h-sensitivity is defined on the interval domain")
    h_list = cfg.h_list if h_list is None else list(h_list)
    if list(h_list) != sorted(h_list, reverse=True):
        raise ConfigError("h list must be descending")
    t0 = time.perf_counter()
    sub = dataclasses.replace(cfg, s=[s])
    rows = []
    for h in h_list:
        res = cmd_decay_experiment(sub, h=h, write=False)
        ns, errs = records_series(res["records"], "e_u", s)
        slope, r2, used = loglinear_fit(ns, errs, floor=floor * res["f_norm"])
        rows.append((h, s, slope, r2, used, res["rb"].n))
        log.info("h=%g slope=%.3f R2=%.3f", h, slope, r2)
    out = _out(cfg)
    path = write_csv(out / "hsens.csv", ["h", "s", "slope", "r2", "points", "n"], rows)
    write_manifest(out, "hsens", cfg, {"wall_time_s": time.perf_counter() - t0})
    return {"rows": rows, "csv": path}


def cmd_error_decomposition(cfg: ExperimentConfig, s: float, n_terms: int = 2000) -> dict:
    """FEM, sinc and reduced-basis parts of the total L2 error."""
    if cfg.domain != "interval":
        raise ConfigError("error decomposition needs the spectral reference on (0, 1)")
    t0 = time.perf_counter()
    st = setup(cfg)
    eig = generalized_eigen(st.sys)
    u_h = evaluate_oracle(st.prob, s, eig, exact=True)
    u_hk = evaluate_oracle(st.prob, s, eig)
    u_full = evaluate_full(st.prob, s)
    rb = greedy_build(st.sys, st.grid, training_set(cfg, st.grid), cfg.eps, cfg.n_max, st.prob)
    u_rb = evaluate_rb(rb, st.grid, s)
    fem, tail = series_l2_error(s, u_h, st.sys, n_terms)
    records = [
        ErrorRecord("decomp", "fem", cfg.h, s, "l2", fem),
        ErrorRecord("decomp", "sinc", cfg.k, s, "l2", l2_norm(u_h - u_hk, st.sys)),
        ErrorRecord("decomp", "rb", rb.n, s, "l2", l2_norm(u_full - u_rb, st.sys)),
    ]
    out = _out(cfg)
    path = write_records(out / "decomp.csv", records)
    write_manifest(out, "decomp", cfg, {
        "series_terms": n_terms, "series_tail_bound": tail, "n": rb.n,
        "wall_time_s": time.perf_counter() - t0,
    })
    return {"records": records, "csv": path, "tail": tail}


def cmd_balance(eps: float, alpha_star: float = 1.0, c_fem: float = 1.0,
                c_sinc: float = 1.0) -> tuple[float, float]:
    """Mesh size and sinc step equating both error terms with ``eps``."""
    if not (0.0 < eps < 1.0):
        raise ConfigError("eps must lie in (0, 1)")
    if not (0.0 < alpha_star <= 1.0):
        raise ConfigError("alpha_star must lie in (0, 1]")
    if c_fem <= 0 or c_sinc <= eps:
        raise ConfigError("constants must be positive (and C_SINC > eps)")
    h = (eps / c_fem) ** (1.0 / (2.0 * alpha_star))
    k = math.pi**2 / math.log(c_sinc / eps)
    return h, k
