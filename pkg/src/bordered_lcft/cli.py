"""Experiment runner: ``blcft [command] --config PATH [--seed N] [--workers N] [--out DIR]``.

Configs are INI files with one section per module; every key has a
default except ``liouville.gamma`` (required by commands that need the
Liouville parameters). Each run emits one JSON report line; scans also
write CSV tables. Exit status: 0 all checks pass, 2 divergence flag,
1 error or failed check.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import subprocess
import sys
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .fusion import KINDS, FusionCase, fusion_scan, geometric_ladder
from .gmc import ModeGrid, cauchy_differences, default_modes, eps_ladder, ladder_masses
from .green import (GreenKernel, cylinder_test_functions, green_bordered, green_identity_residual,
                    normal_derivative_residual, pde_residual, zero_average_residual)
from .lcft import (InsertionSet, LiouvilleParams, McConfig, anomaly_check,
                   correlation_estimate, scaling_residual, seiberg_check)
from .markov import CutSpec, markov_covariance_residual, sampled_twin
from .parallel import map_chunks, mean_and_stderr
from .spectral import build_basis, pointwise_variance, weyl_prediction, weyl_slope
from .surfaces import SurfaceKind, SurfaceModel, build_surface, cylinder_cosine_factor

SCHEMA_VERSION = 1

COMMANDS = ("sample-gff", "gmc-mass", "correlate", "check-seiberg", "verify-anomaly",
            "verify-scaling", "verify-markov", "fusion-scan", "weyl-check", "green-residuals")
NEEDS_GAMMA = {"gmc-mass", "correlate", "check-seiberg", "verify-anomaly",
               "verify-scaling", "fusion-scan"}

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _insertion_list(text: str) -> tuple:
    """``"t y w; t y w"`` -> (((t, y), w), ...), sorted."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigError(f"insertion {item!r} needs three numbers: t y weight")
        t, y, w = map(float, parts)
        out.append(((t, y), w))
    return tuple(sorted(out))


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# (parser, default) per key; REQUIRED marks keys without a default
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {"command": (str, REQUIRED)},
    "surface": {"kind": (str, "flat_cylinder"), "modulus": (_optional_float, 1.0)},
    "liouville": {"gamma": (_optional_float, REQUIRED), "mu": (float, 1.0), "mu_boundary": (float, 0.0)},
    "insertions": {"bulk": (_insertion_list, ()), "boundary": (_insertion_list, ())},
    "mesh": {"eps": (float, 1.0 / 16), "n_modes": (_optional_int, None), "eps0": (float, 0.125),
             "levels": (int, 4), "margin": (float, 0.25), "spectral_modes": (int, 2000)},
    "mc": {"n_samples": (int, 4096), "seed": (int, 0), "workers": (int, 1), "chunk": (int, 256)},
    "anomaly": {"amplitude": (float, 0.3), "k": (int, 1), "axis": (str, "y")},
    "markov": {"height": (float, 0.5), "delta": (float, 0.05), "twin": (_bool, True)},
    "fusion": {"kind": (str, "bulk_bulk"), "weights": (_float_list, (0.5, 0.5)),
               "d0": (float, 0.08), "levels": (int, 5), "ratio": (float, 0.5),
               "eps": (float, 1e-3), "sharp": (_bool, False)},
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(f"{p[0]!r} {p[1]!r} {w!r}" for p, w in value)
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    surface: SurfaceModel
    params: LiouvilleParams | None
    insertions: InsertionSet
    values: dict  # canonical section -> key -> typed value
    out: str | None = None
    config_hash: str = ""

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def mc(self) -> McConfig:
        m, mesh = self.values["mc"], self.values["mesh"]
        return McConfig(m["n_samples"], m["seed"], m["workers"], mesh["eps"], mesh["n_modes"],
                        m["chunk"], self.config_hash)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, keys in self.values.items():
            cp[sec] = {k: _format(v) for k, v in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _canonical_json(values: dict) -> str:
    def enc(v):
        if isinstance(v, tuple):
            return [enc(x) for x in v]
        return v
    return json.dumps({s: {k: enc(v) for k, v in d.items()} for s, d in values.items()},
                      sort_keys=True, separators=(",", ":"))


def config_hash(values: dict) -> str:
    return hashlib.sha256(_canonical_json(values).encode()).hexdigest()[:16]


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse, fill defaults, validate and hash. ``overrides`` maps
    ``"section.key"`` to raw strings and wins over the document."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for dotted, v in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        raw.setdefault(sec, {})[key] = str(v)
    for sec, keys in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for k in keys:
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{k}")

    command = raw.get("experiment", {}).get("command", "").strip()
    if command not in COMMANDS:
        raise ConfigError(f"experiment.command must be one of {', '.join(COMMANDS)}; "
                          f"got {command!r}")
    values: dict[str, dict] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for k, (conv, default) in keys.items():
            if k in raw.get(sec, {}):
                try:
                    values[sec][k] = conv(raw[sec][k])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{k}: {exc}") from exc
                if values[sec][k] is None and default is REQUIRED and command in NEEDS_GAMMA:
                    raise ConfigError(f"missing required key {sec}.{k}")
            elif default is REQUIRED:
                if sec == "liouville" and command not in NEEDS_GAMMA:
                    values[sec][k] = None
                    continue
                raise ConfigError(f"missing required key {sec}.{k}")
            else:
                values[sec][k] = default
    return _validate(command, values)


def _validate(command: str, values: dict) -> ExperimentConfig:
    s = values["surface"]
    if command == "fusion-scan":
        s["kind"] = SurfaceKind.HALF_PLANE_DOZZ.value
    surface = build_surface(s["kind"], s["modulus"] if s["kind"] == "flat_cylinder" else None)
    if surface.kind is not SurfaceKind.FLAT_CYLINDER:
        s["modulus"] = None

    lv = values["liouville"]
    params = None
    if lv["gamma"] is not None:
        if not 0 < lv["gamma"] <= 2:
            raise ConfigError(f"liouville.gamma must lie in (0, 2], got {lv['gamma']}")
        if lv["mu"] == 0 and lv["mu_boundary"] == 0:
            raise ConfigError("mu = mu_boundary = 0 is rejected: the theory is not "
                              "renormalizable without a cosmological constant")
        params = LiouvilleParams(lv["gamma"], lv["mu"], lv["mu_boundary"])

    ins = InsertionSet.build(values["insertions"]["bulk"], values["insertions"]["boundary"])
    if surface.kind is not SurfaceKind.HALF_PLANE_DOZZ:
        ins.validate(surface)

    mc, mesh = values["mc"], values["mesh"]
    if mc["n_samples"] < 2:
        raise ConfigError("mc.n_samples must be at least 2")
    if mc["workers"] < 1 or mc["chunk"] < 1:
        raise ConfigError("mc.workers and mc.chunk must be positive")
    if mc["seed"] < 0:
        raise ConfigError("mc.seed must be nonnegative")
    if not 0 < mesh["eps"] < 0.5 or not 0 < mesh["eps0"] < 0.5:
        raise ConfigError("mesh.eps and mesh.eps0 must lie in (0, 0.5)")
    if mesh["levels"] < 2:
        raise ConfigError("mesh.levels must be at least 2")
    if mesh["n_modes"] is not None and mesh["n_modes"] < 1:
        raise ConfigError("mesh.n_modes must be positive")
    if mesh["spectral_modes"] < 100:
        raise ConfigError("mesh.spectral_modes must be at least 100")

    fu = values["fusion"]
    if fu["kind"] not in KINDS:
        raise ConfigError(f"fusion.kind must be one of {', '.join(KINDS)}")
    if command == "fusion-scan" and params is not None and params.mu_boundary != 0:
        raise ConfigError("fusion scans need liouville.mu_boundary = 0")
    if values["anomaly"]["axis"] not in ("y", "t"):
        raise ConfigError("anomaly.axis must be y or t")
    if command == "verify-markov":
        _cut(surface, values)  # raises on an inconsistent cut

    return ExperimentConfig(command, surface, params, ins, values, None, config_hash(values))


def _cut(surface: SurfaceModel, values: dict) -> CutSpec:
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        return CutSpec(surface, "circle", values["markov"]["height"])
    return CutSpec(surface, "half_circle")


# --- reports ---------------------------------------------------------------------------

def _num(v):
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if math.isfinite(v) else repr(v)  # "inf"/"nan" keep the JSON strict


@dataclass
class Metric:
    name: str
    value: float
    stderr: float | None = None
    tolerance: float | None = None
    passed: bool = True
    target: float | None = None

    def as_dict(self) -> dict:
        return {"name": self.name, "value": _num(self.value), "stderr": _num(self.stderr),
                "tolerance": _num(self.tolerance), "pass": bool(self.passed),
                "target": _num(self.target)}


def z_metric(name, value, stderr, target, tol=3.0) -> Metric:
    z = (value - target) / stderr if stderr > 0 else (0.0 if value == target else math.inf)
    return Metric(name, value, stderr, tol, bool(abs(z) < tol), target)


@dataclass
class ReportRecord:
    command: str
    config_hash: str
    seed: int
    workers: int
    build: str
    metrics: list = field(default_factory=list)
    diverged: bool = False
    violations: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def all_pass(self) -> bool:
        return all(m.passed for m in self.metrics)

    @property
    def exit_code(self) -> int:
        if self.diverged:
            return 2
        return 0 if self.all_pass else 1

    def as_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "command": self.command,
                "config_hash": self.config_hash, "seed": self.seed, "workers": self.workers,
                "build": self.build, "metrics": [m.as_dict() for m in self.metrics],
                "all_pass": self.all_pass, "diverged": self.diverged,
                "violations": list(self.violations), "artifacts": list(self.artifacts),
                "wall_time": self.wall_time}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


TIMING_FIELDS = ("wall_time",)


@lru_cache(maxsize=1)
def git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                           cwd=Path(__file__).resolve().parent, capture_output=True,
                           text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return r.stdout.strip() if r.returncode == 0 and r.stdout.strip() else "unknown"


# --- commands ----------------------------------------------------------------------------

@dataclass
class Outcome:
    metrics: list
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    diverged: bool = False
    violations: list = field(default_factory=list)


def probe_points(surface: SurfaceModel, n: int = 8) -> np.ndarray:
    """Deterministic interior points away from the boundary."""
    u = (np.arange(n) + 0.5) / n
    v = np.mod(0.5 + np.arange(n) * 0.618033988749895, 1.0)
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        T = surface.modulus
        return np.stack([T * (0.15 + 0.7 * u), v], -1)
    return np.stack([0.25 + 1.0 * u, 2 * math.pi * v], -1)


def _boundary_probes(surface: SurfaceModel, n: int = 8) -> np.ndarray:
    v = (np.arange(n) + 0.25) / n
    if surface.kind is SurfaceKind.FLAT_CYLINDER:
        t = np.where(np.arange(n) % 2 == 0, 0.0, surface.modulus)
        return np.stack([t, v], -1)
    return np.stack([np.full(n, math.pi / 2), 2 * math.pi * v], -1)


def _require_params(cfg: ExperimentConfig) -> LiouvilleParams:
    if cfg.params is None:
        raise ConfigError(f"{cfg.command} needs liouville.gamma")
    return cfg.params


def run_sample_gff(cfg: ExperimentConfig) -> Outcome:
    mc = cfg.mc
    basis = build_basis(cfg.surface, "neumann", cfg.get("mesh", "spectral_modes"))
    pts = probe_points(cfg.surface)
    phi = np.moveaxis(basis.evaluate(pts), -1, 0).reshape(basis.size, -1) * basis.scales[:, None]

    def work(rng, size, _):
        return (rng.standard_normal((size, basis.size)) @ phi) ** 2

    sq = map_chunks(work, mc.n_samples, mc.seed, mc.workers, mc.chunk)
    emp, err = mean_and_stderr(sq)
    target = pointwise_variance(basis, pts)
    metrics = [z_metric(f"variance[{i}]", emp[i], err[i], target[i]) for i in range(len(pts))]
    rows = [[*p, e, s, t] for p, e, s, t in zip(pts, emp, err, target)]
    return Outcome(metrics, {"pointwise_variance.csv": (["t", "y", "empirical", "stderr",
                                                          "target"], rows)})


def run_gmc_mass(cfg: ExperimentConfig) -> Outcome:
    params, mc = _require_params(cfg), cfg.mc
    g = params.gamma
    eps = eps_ladder(cfg.get("mesh", "eps0"), cfg.get("mesh", "levels"))
    grid = ModeGrid(cfg.surface, mc.n_modes or default_modes(cfg.surface, float(eps[-1])))
    res = ladder_masses(grid, eps, g, mc.n_samples, mc.seed, mc.workers, mc.chunk,
                        cfg.get("mesh", "margin"))
    metrics, rows = [], []
    bulk_m, bulk_e = mean_and_stderr(res["bulk"])
    bnd_m, bnd_e = mean_and_stderr(res["boundary"])
    for i, e in enumerate(eps):
        if g < 2:
            metrics.append(z_metric(f"bulk_mass[eps={float(e)!r}]", bulk_m[i], bulk_e[i],
                                    res["expected_bulk"][i]))
            metrics.append(z_metric(f"boundary_mass[eps={float(e)!r}]", bnd_m[i], bnd_e[i],
                                    res["expected_boundary"][i]))
        rows.append([e, bulk_m[i], bulk_e[i], res["expected_bulk"][i], bnd_m[i], bnd_e[i],
                     res["expected_boundary"][i]])
    if g < math.sqrt(2):
        d, _ = cauchy_differences(res["interior"])
        metrics.append(Metric("interior_cauchy_monotone", float(np.max(np.diff(d))),
                              tolerance=0.0, passed=bool(np.all(np.diff(d) < 0))))
    low = min(float(res["bulk"].min()), float(res["boundary"].min()))
    metrics.append(Metric("min_mass", low, tolerance=0.0,
                          passed=bool(low > 0 and np.all(np.isfinite(res["bulk"])))))
    header = ["eps", "bulk_mean", "bulk_stderr", "bulk_expected", "boundary_mean",
              "boundary_stderr", "boundary_expected"]
    return Outcome(metrics, {"gmc_ladder.csv": (header, rows)})


def run_correlate(cfg: ExperimentConfig) -> Outcome:
    est = correlation_estimate(cfg.surface, _require_params(cfg), cfg.insertions, cfg.mc)
    ok = bool(not est.diverged and math.isfinite(est.value) and est.value > 0)
    return Outcome([Metric("correlator", est.value, est.stderr, None, ok)],
                   diverged=est.diverged, violations=list(est.violations))


def run_check_seiberg(cfg: ExperimentConfig) -> Outcome:
    params = _require_params(cfg)
    rep = seiberg_check(cfg.insertions, params, cfg.surface.euler_char)
    metrics = [Metric("bound1_sbar", rep.sbar, tolerance=0.0, passed=rep.bound1)]
    need_bulk, need_bnd = "bulk" in rep.regime, "boundary" in rep.regime
    for a, ok in zip(cfg.insertions.alphas, rep.bound2):
        metrics.append(Metric(f"bound2_alpha={float(a)!r}", a, tolerance=params.Q,
                              passed=bool(ok or not need_bulk)))
    for b, ok in zip(cfg.insertions.betas, rep.bound3):
        metrics.append(Metric(f"bound3_beta={float(b)!r}", b, tolerance=params.Q,
                              passed=bool(ok or not need_bnd)))
    return Outcome(metrics, diverged=not rep.admissible, violations=rep.violations())


def run_verify_anomaly(cfg: ExperimentConfig) -> Outcome:
    a = cfg.values["anomaly"]
    phi = cylinder_cosine_factor(cfg.surface, a["amplitude"], a["k"], a["axis"])
    chk = anomaly_check(cfg.surface, _require_params(cfg), cfg.insertions, phi, cfg.mc)
    return Outcome([z_metric("anomaly_ratio", chk.ratio, chk.stderr, 1.0),
                    Metric("predicted_factor", chk.predicted)])


def run_verify_scaling(cfg: ExperimentConfig) -> Outcome:
    params, mc = _require_params(cfg), cfg.mc
    r = scaling_residual(cfg.surface, params, cfg.insertions, mc)
    metrics = [z_metric("scaling_lhs_minus_rhs", r.lhs - r.rhs, r.stderr, 0.0)]
    # mu -> 2 mu rescales by 2^{-sbar/gamma} sample by sample when mu_b = 0
    p1 = LiouvilleParams(params.gamma, params.mu, 0.0)
    p2 = LiouvilleParams(params.gamma, 2 * params.mu, 0.0)
    rep = seiberg_check(cfg.insertions, p1, cfg.surface.euler_char)
    if rep.admissible:
        e1 = correlation_estimate(cfg.surface, p1, cfg.insertions, mc)
        e2 = correlation_estimate(cfg.surface, p2, cfg.insertions, mc)
        pred = 2.0 ** (-rep.sbar / params.gamma)
        rel = abs(e2.value / e1.value / pred - 1)
        metrics.append(Metric("mu_rescaling_relative_error", rel, tolerance=1e-10,
                              passed=bool(rel < 1e-10), target=0.0))
    return Outcome(metrics)


def run_verify_markov(cfg: ExperimentConfig) -> Outcome:
    cut = _cut(cfg.surface, cfg.values)
    res = markov_covariance_residual(cut)
    metrics = [Metric("covariance_residual", res, tolerance=1e-6, passed=bool(res < 1e-6),
                      target=0.0)]
    tables = {}
    if cfg.get("markov", "twin"):
        mc = cfg.mc
        tw = sampled_twin(cut, n_samples=mc.n_samples, seed=mc.seed,
                          delta=cfg.get("markov", "delta"), workers=mc.workers)
        metrics.append(Metric("twin_max_abs_z", tw.max_z, tolerance=3.0,
                              passed=bool(tw.max_z < 3)))
        rows = [[int(i), int(j), e, t, s] for (i, j), e, t, s in
                zip(tw.pairs, tw.empirical, tw.target, tw.stderr)]
        tables["markov_twin.csv"] = (["i", "j", "empirical", "target", "stderr"], rows)
    return Outcome(metrics, tables)


def run_fusion_scan(cfg: ExperimentConfig) -> Outcome:
    params, mc, fu = _require_params(cfg), cfg.mc, cfg.values["fusion"]
    case = FusionCase.default(fu["kind"], fu["weights"])
    d = geometric_ladder(fu["d0"], fu["levels"], fu["ratio"])
    res = fusion_scan(case, d, params, mc.n_samples, mc.seed, fu["eps"], mc.workers)
    metrics = [Metric("slope_within_bound", res.slope, res.slope_stderr, 3.0,
                      not res.violated, res.predicted),
               Metric("node_covariance_min_eigenvalue", res.min_eigenvalue, tolerance=0.0,
                      passed=bool(res.min_eigenvalue >= 0))]
    if fu["sharp"]:
        rel = res.relative_error()
        metrics.append(Metric("slope_relative_error", rel, tolerance=0.1,
                              passed=bool(rel < 0.1), target=0.0))
    rows = [list(r) for r in zip(res.distances, res.statistic, res.stderr)]
    return Outcome(metrics, {"fusion_scan.csv": (["distance", "statistic", "stderr"], rows)})


def run_weyl_check(cfg: ExperimentConfig) -> Outcome:
    basis = build_basis(cfg.surface, "neumann", cfg.get("mesh", "spectral_modes"))
    slope, pred = weyl_slope(basis), weyl_prediction(basis)
    rel = abs(slope / pred - 1)
    return Outcome([Metric("weyl_slope", slope, tolerance=0.05, passed=bool(rel < 0.05),
                           target=pred)])


def run_green_residuals(cfg: ExperimentConfig) -> Outcome:
    s = cfg.surface
    kernel = GreenKernel(s, "neumann")
    pts = probe_points(s)
    y = pts[0] + (np.array([0.05, 0.23]) if s.kind is SurfaceKind.FLAT_CYLINDER
                  else np.array([0.1, 1.3]))
    # doubling identity: two eigen-sum constructions with the same spectral cutoff
    X = np.repeat(pts[:, None], len(pts), 1)
    Y = np.repeat((pts + 0.01)[None], len(pts), 0)
    a = green_bordered(s, "neumann", X, Y, mode="eigen_sum", max_eigenvalue=400.0)
    b = GreenKernel(s, "neumann", "eigen_sum", max_eigenvalue=400.0)(X, Y)
    vals = [("doubling_identity", float(np.max(np.abs(a - b))), 1e-10),
            ("pde_residual", pde_residual(kernel, y, pts), 1e-5),
            ("normal_derivative_residual",
             normal_derivative_residual(kernel, y, _boundary_probes(s)), 1e-5),
            ("zero_average_residual", zero_average_residual(kernel, pts[2]), 1e-5)]
    if s.kind is SurfaceKind.FLAT_CYLINDER:
        for tf in cylinder_test_functions(s.modulus)[1:]:
            vals.append((f"green_identity[{tf.name}]",
                         green_identity_residual(kernel, tf, pts[::2]), 1e-6))
    return Outcome([Metric(n, v, tolerance=t, passed=bool(v < t), target=0.0)
                    for n, v, t in vals])


RUNNERS = {
    "sample-gff": run_sample_gff, "gmc-mass": run_gmc_mass, "correlate": run_correlate,
    "check-seiberg": run_check_seiberg, "verify-anomaly": run_verify_anomaly,
    "verify-scaling": run_verify_scaling, "verify-markov": run_verify_markov,
    "fusion-scan": run_fusion_scan, "weyl-check": run_weyl_check,
    "green-residuals": run_green_residuals,
}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in r])


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> ReportRecord:
    """Dispatch, time, and write ``<command>.json`` plus CSV tables into ``out``."""
    start = time.perf_counter()
    outcome = RUNNERS[cfg.command](cfg)
    mc = cfg.mc
    rec = ReportRecord(cfg.command, cfg.config_hash, mc.seed, mc.workers, git_describe(),
                       outcome.metrics, outcome.diverged, list(outcome.violations),
                       sorted(outcome.tables))
    out = out if out is not None else cfg.out
    if out is not None:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in outcome.tables.items():
            _write_csv(d / name, header, rows)
    rec.wall_time = time.perf_counter() - start
    if out is not None:
        (Path(out) / f"{cfg.command}.json").write_text(rec.to_json() + "\n")
    return rec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blcft", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="overrides experiment.command from the config")
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--seed", type=int, help="overrides mc.seed")
    p.add_argument("--workers", type=int, help="overrides mc.workers")
    p.add_argument("--out", type=Path, help="directory for the JSON report and CSV tables")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    label = args.command or "blcft"
    try:
        text = args.config.read_text() if args.config else ""
        overrides = {}
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep or "." not in key:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            overrides[key.strip()] = val.strip()
        if args.command:
            overrides["experiment.command"] = args.command
        if args.seed is not None:
            overrides["mc.seed"] = str(args.seed)
        if args.workers is not None:
            overrides["mc.workers"] = str(args.workers)
        cfg = parse_config(text, overrides)
        label = cfg.command
        rec = run_experiment(cfg, args.out)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"blcft {label}: error: {exc}", file=sys.stderr)
        return 1
    print(rec.to_json())
    if rec.diverged:
        print(f"blcft {label}: divergent: " + "; ".join(rec.violations), file=sys.stderr)
    return rec.exit_code


if __name__ == "__main__":
    sys.exit(main())
