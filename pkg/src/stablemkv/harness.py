"""Scenario files, experiment orchestration and report emission.

A scenario is a YAML (or JSON) document validated against a strict schema:
unknown keys are errors so that a typo in an assumption parameter cannot be
silently ignored.  A run executes the requested phases, writes CSV tables,
optional SVG plots and a ``manifest.json`` with SHA-256 digests of every
emitted file.  Everything is written to a temporary directory first and
moved into place at the end.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from ._rng import Streams
from ._svg import line_plot
from .coefficients import FAMILIES, build_family
from .dynamics import initial_particles
from .fixed_point import PicardConfig, contraction_diagnostic, picard_solve
from .metrics import EmpiricalMeasure, MeasureFlow, dbeta_exact, wtilde_beta
from .noise import Atomic, Isotropic, StableParams
from .proxy import derivative_bound_check, gradient_rate_fit, moment_scaling_check

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioError",
    "Scenario",
    "RunManifest",
    "load_scenario",
    "run_scenario",
    "emit_report",
    "verify_manifest",
]

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario could not be parsed or validated; message names line and field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StableSection(_Strict):
    alpha: float = Field(gt=0, lt=2)
    dim: int = Field(default=1, ge=1, le=2)


class AtomEntry(_Strict):
    direction: list[float]
    weight: float = Field(gt=0)


class SpectralSection(_Strict):
    kind: Literal["atomic", "axes", "isotropic"]
    atoms: Optional[list[AtomEntry]] = None
    weights: Optional[list[float]] = None
    mass: float = Field(default=1.0, gt=0)
    density: Union[Literal["uniform"], list[float]] = "uniform"

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "atomic" and not self.atoms:
            raise ValueError("atomic spectral measure needs 'atoms'")
        if self.kind == "axes" and not self.weights:
            raise ValueError("axes spectral measure needs 'weights'")
        return self


class CoefficientSection(_Strict):
    family: str
    params: dict = Field(default_factory=dict)

    @field_validator("family")
    @classmethod
    def _known(cls, v):
        if v not in FAMILIES:
            raise ValueError(f"unknown family {v!r}; known: {sorted(FAMILIES)}")
        return v


class InitialSection(_Strict):
    atoms: Optional[list[list[float]]] = None
    weights: Optional[list[float]] = None
    sampler: Optional[Literal["normal", "uniform"]] = None
    n: int = Field(default=1000, ge=1)
    loc: float = 0.0
    scale: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.atoms is None) == (self.sampler is None):
            raise ValueError("give exactly one of 'atoms' or 'sampler'")
        return self


class GridSection(_Strict):
    horizon: float = Field(gt=0)
    steps: int = Field(ge=1)


class PicardSection(_Strict):
    tol: float = Field(default=1e-3, gt=0)
    max_iter: int = Field(default=30, ge=1)
    particles: int = Field(default=10_000, ge=1)
    window: Optional[float] = Field(default=None, gt=0)
    mode: Literal["single", "squared"] = "single"
    lam: Optional[float] = Field(default=None, ge=0, le=1)
    beta: Optional[float] = Field(default=None, gt=0, le=1)
    metric: Literal["paired", "dual", "exact"] = "paired"
    antithetic: bool = True
    init_method: Literal["multinomial", "stratified"] = "multinomial"


class MeanCheck(_Strict):
    target: float
    tolerance: Optional[float] = Field(default=None, gt=0)


class ContractionSection(_Strict):
    horizons: list[float] = Field(min_length=2)
    shift_speed: float = 0.5
    particles: Optional[int] = Field(default=None, ge=1)


class DensitySection(_Strict):
    horizons: list[float] = Field(min_length=4)
    gamma: float = Field(gt=0)
    orders: list[int] = Field(default_factory=lambda: [0, 1, 2])


class RatesSection(_Strict):
    horizons: list[float] = Field(min_length=4)
    gamma: float = Field(default=0.5, gt=0, le=1)
    test_function: Literal["holder", "lipschitz"] = "holder"
    n_samples: int = Field(default=100_000, ge=100)


class Diagnostics(_Strict):
    picard: bool = True
    mean_check: Optional[MeanCheck] = None
    contraction: Optional[ContractionSection] = None
    density: Optional[DensitySection] = None
    rates: Optional[RatesSection] = None
    metrics_selftest: bool = False


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str
    seed: int = Field(ge=0)
    stable: StableSection
    spectral: SpectralSection
    coefficients: CoefficientSection
    initial: InitialSection
    grid: GridSection
    picard: PicardSection = Field(default_factory=PicardSection)
    diagnostics: Diagnostics = Field(default_factory=Diagnostics)
    output: str = "runs"

    # -- builders --------------------------------------------------------
    def params(self) -> StableParams:
        return StableParams(self.stable.alpha, self.stable.dim)

    def omega(self):
        sp = self.spectral
        if sp.kind == "axes":
            om = Atomic.axes(sp.weights)
        elif sp.kind == "atomic":
            om = Atomic(np.array([a.direction for a in sp.atoms]), np.array([a.weight for a in sp.atoms]))
        else:
            dens = None if sp.density == "uniform" else np.asarray(sp.density)
            om = Isotropic(self.stable.dim, sp.mass, dens)
        if om.dim != self.stable.dim:
            raise ValueError("spectral measure dimension differs from stable.dim")
        return om

    def coefficient_spec(self):
        spec = build_family(self.coefficients.family, **self.coefficients.params)
        if spec.dim != self.stable.dim:
            raise ValueError("coefficient family dimension differs from stable.dim")
        return spec

    def initial_law(self) -> EmpiricalMeasure:
        ini = self.initial
        d = self.stable.dim
        if ini.atoms is not None:
            pts = np.asarray(ini.atoms, dtype=float).reshape(-1, d)
            w = np.ones(len(pts)) if ini.weights is None else np.asarray(ini.weights, dtype=float)
            return EmpiricalMeasure.from_weights(pts, w)
        g = Streams(self.seed).generator("initial-law")
        if ini.sampler == "normal":
            pts = ini.loc + ini.scale * g.standard_normal((ini.n, d))
        else:
            pts = ini.loc + ini.scale * g.uniform(-1, 1, (ini.n, d))
        return EmpiricalMeasure.uniform(pts)

    def picard_config(self, threads: int = 1) -> PicardConfig:
        p = self.picard
        return PicardConfig(tol=p.tol, max_iter=p.max_iter, particles=p.particles,
                            dt=self.grid.horizon / self.grid.steps, window=p.window, mode=p.mode, lam=p.lam,
                            beta=p.beta, metric=p.metric, antithetic=p.antithetic,
                            init_method=p.init_method, threads=threads)


def _yaml_lines(text):
    """Map field paths to 1-based line numbers using the YAML node tree."""
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, ())
    return lines


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ScenarioError(f"{source}: parse error at {where}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    try:
        sc = Scenario.model_validate(data)
        sc.params(), sc.omega(), sc.coefficient_spec(), sc.initial_law()
        sc.coefficient_spec().check_stable_pairing(sc.stable.alpha)
        if sc.picard.mode == "squared":
            sc.picard_config().resolve(sc.stable.alpha, sc.coefficient_spec().eta)
    except ValidationError as exc:
        lines = _yaml_lines(text)
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            key = loc
            while key and key not in lines:
                key = key[:-1]
            line = lines.get(key)
            name = ".".join(str(p) for p in loc) or "<root>"
            msgs.append(f"field '{name}'" + (f" (line {line})" if line else "") + f": {err['msg']}")
        raise ScenarioError(f"{source}: " + "; ".join(msgs)) from None
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return sc


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from None
    return parse_scenario(text, str(p))


# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    scenario: dict
    code_version: str
    phases: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict, repr=False)
    plots: bool = True
    threads: int = 1
    output_dir: str = ""

    @property
    def all_passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values()) and all(
            ph["status"] == "ok" for ph in self.phases.values())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "code_version": self.code_version,
            "threads": self.threads,
            "phases": self.phases,
            "checks": self.checks,
            "all_passed": self.all_passed,
            "files": self.files,
        }


TABLE_HEADERS = {
    "picard_trace.csv": ["window", "attempt", "iteration", "distance"],
    "picard_windows.csv": ["window", "start", "end", "steps", "converged", "converged_at", "attempt",
                           "self_consistency", "bootstrap_error"],
    "flow_summary.csv": ["t", "mean", "q05", "q50", "q95"],
    "contraction.csv": ["horizon", "ratio", "numerator", "denominator", "ratio_error"],
    "ratefits.csv": ["label", "target", "fitted", "residual", "tolerance", "kind", "pass"],
    "metrics_selftest.csv": ["case", "value", "reference", "error"],
    "checks.csv": ["check", "passed"],
}


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _phase(manifest, name, fn):
    t0 = time.perf_counter()
    try:
        fn()
        manifest.phases[name] = {"status": "ok", "seconds": time.perf_counter() - t0}
    except Exception as exc:  # recorded; independent phases continue
        manifest.phases[name] = {"status": "failed", "seconds": time.perf_counter() - t0,
                                 "error": f"{type(exc).__name__}: {exc}",
                                 "traceback": traceback.format_exc(limit=4)}
        manifest.checks[f"{name}_completed"] = False


def _run_phases(sc: Scenario, manifest: RunManifest, threads: int):
    params, omega, spec = sc.params(), sc.omega(), sc.coefficient_spec()
    mu0 = sc.initial_law()
    cfg = sc.picard_config(threads)
    streams = Streams(sc.seed)
    diag = sc.diagnostics
    t = manifest.tables
    for name in TABLE_HEADERS:
        t.setdefault(name, [])
    state = {}

    def picard():
        rep = picard_solve(spec, params, omega, mu0, sc.grid.horizon, cfg, streams.child("picard"))
        state["report"] = rep
        for i, w in enumerate(rep.windows):
            t["picard_trace.csv"] += [[i, w.attempt, k, d] for k, d in enumerate(w.trace)]
            t["picard_windows.csv"].append([i, w.start, w.end, w.n_steps, w.converged, w.converged_at,
                                            w.attempt, w.self_consistency, w.bootstrap_error])
        for tk, m in zip(rep.final_flow.grid, rep.final_flow.marginals):
            x = m.points[:, 0]
            q = np.quantile(x, [0.05, 0.5, 0.95]) if m.n > 1 else np.repeat(x, 3)
            t["flow_summary.csv"].append([tk, float(m.weights @ x), *map(float, q)])
        manifest.checks["picard_converged"] = rep.converged
        manifest.checks["picard_self_consistent"] = bool(
            rep.self_consistency <= cfg.tol + 3 * rep.self_consistency_error)
        state["terminal"] = rep.final_flow.terminal

    def mean_check():
        if "report" not in state:
            raise RuntimeError("mean check needs the Picard phase")
        mc = diag.mean_check
        m = float(state["report"].final_flow.terminal.mean()[0])
        tol = mc.tolerance if mc.tolerance is not None else 2 / math.sqrt(cfg.particles) + 5 * cfg.dt
        manifest.checks["mean_oracle"] = abs(m - mc.target) <= tol

    def contraction():
        cs = diag.contraction
        n = cs.particles or cfg.particles
        grid = np.linspace(0.0, max(cs.horizons), int(round(max(cs.horizons) / cfg.dt)) + 1)
        cloud = EmpiricalMeasure.uniform(initial_particles(mu0, n, streams.child("contraction-init")))
        P1 = MeasureFlow.constant(cloud, grid)
        P2 = MeasureFlow(grid, [cloud] + [EmpiricalMeasure.uniform(cloud.points + cs.shift_speed * s)
                                           for s in grid[1:]])
        ccfg = PicardConfig(**{**cfg.__dict__, "particles": n})
        fit = contraction_diagnostic(spec, params, omega, P1, P2, cs.horizons, ccfg, streams.child("contraction"))
        for r in fit.rows():
            t["contraction.csv"].append([r["horizon"], r["ratio"], r["numerator"], r["denominator"],
                                         r["ratio_error"]])
        if spec.measure_free:
            manifest.checks["contraction_vanishes"] = bool(np.all(fit.ratios <= 3 * fit.ratio_errors + 1e-12))
        else:
            manifest.checks["contraction_sign"] = bool(fit.zeta > 0 and fit.ratios[0] < 1)

    def density():
        ds = diag.density
        mf = moment_scaling_check(params, omega, ds.gamma, ds.horizons)
        fits = [mf]
        for o in ds.orders:
            fits += derivative_bound_check(params, omega, ds.horizons, o).fits
        for f in fits:
            r = f.row()
            t["ratefits.csv"].append([r["label"], r["target"], r["fitted"], r["residual"], r["tolerance"],
                                      r["kind"], r["pass"]])
        manifest.checks["density_scaling"] = all(f.passed for f in fits)
        state["ratefits"] = state.get("ratefits", []) + fits

    def rates():
        rs = diag.rates
        if rs.test_function == "holder":
            g, h = rs.gamma, (lambda x: np.minimum(np.abs(x[:, 0]) ** rs.gamma, 1.0))
        else:
            g, h = 1.0, (lambda x: np.minimum(np.abs(x[:, 0]), 1.0))
        fit = gradient_rate_fit(spec, params, omega, h, g, rs.horizons, rs.n_samples, n_steps=4,
                                rng=streams.child("rates"), mu=None if spec.measure_free else mu0,
                                tol=0.15 if rs.test_function == "holder" else 0.1)
        r = fit.row()
        t["ratefits.csv"].append([r["label"], r["target"], r["fitted"], r["residual"], r["tolerance"],
                                  r["kind"], r["pass"]])
        manifest.checks["gradient_rate"] = fit.passed
        state["ratefits"] = state.get("ratefits", []) + [fit]

    def metrics_selftest():
        g = streams.generator("metrics-selftest")
        worst = 0.0
        for i in range(5):
            y, beta = g.uniform(-3, 3), g.uniform(0.1, 1.0)
            v = dbeta_exact(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([y]), beta)
            r = abs(y) ** beta
            ref = 2 * r / (2 + r)
            t["metrics_selftest.csv"].append([f"dirac-pair-{i}", v, ref, abs(v - ref)])
            worst = max(worst, abs(v - ref))
        ok = worst < 1e-9
        for i in range(5):
            a = EmpiricalMeasure.from_weights(g.normal(size=(6, 1)), g.uniform(0.1, 1, 6))
            b = EmpiricalMeasure.from_weights(g.normal(size=(5, 1)), g.uniform(0.1, 1, 5))
            v, w = dbeta_exact(a, b, 0.5), wtilde_beta(a, b, 0.5)
            t["metrics_selftest.csv"].append([f"sandwich-{i}", v, 2 * w, max(0.0, v - 2 * w)])
            ok &= v <= 2 * w + 1e-9
        manifest.checks["metrics_selftest"] = bool(ok)

    if diag.picard or diag.mean_check is not None:
        _phase(manifest, "picard", picard)
    if diag.mean_check is not None:
        _phase(manifest, "mean_check", mean_check)
    if diag.contraction is not None:
        _phase(manifest, "contraction", contraction)
    if diag.density is not None:
        _phase(manifest, "density", density)
    if diag.rates is not None:
        _phase(manifest, "rates", rates)
    if diag.metrics_selftest:
        _phase(manifest, "metrics_selftest", metrics_selftest)
    t["checks.csv"] = [[k, v] for k, v in sorted(manifest.checks.items())]
    return state


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_report(manifest: RunManifest, directory, plots: bool | None = None) -> list[Path]:
    """Write CSV tables (header-only when empty) and optional SVG plots; return the paths."""
    d = Path(directory)
    plots = manifest.plots if plots is None else plots
    written = []
    try:
        d.mkdir(parents=True, exist_ok=True)
        for name, header in TABLE_HEADERS.items():
            p = d / name
            p.write_text(_csv_text(header, manifest.tables.get(name, [])), newline="")
            written.append(p)
        if plots:
            pd = d / "plots"
            pd.mkdir(exist_ok=True)
            trace = manifest.tables.get("picard_trace.csv", [])
            series = {}
            for w, _, k, v in trace:
                series.setdefault(f"window {w}", ([], []))
                series[f"window {w}"][0].append(k)
                series[f"window {w}"][1].append(v)
            p = pd / "picard_trace.svg"
            p.write_text(line_plot(series, "Picard distance trace", "iteration", "distance", logy=True))
            written.append(p)
            con = manifest.tables.get("contraction.csv", [])
            p = pd / "contraction.svg"
            p.write_text(line_plot({"ratio": ([r[0] for r in con], [r[1] for r in con])},
                                   "Contraction ratio", "horizon", "ratio", logx=True, logy=True))
            written.append(p)
            summ = manifest.tables.get("flow_summary.csv", [])
            p = pd / "flow_summary.svg"
            p.write_text(line_plot({k: ([r[0] for r in summ], [r[i] for r in summ])
                                    for i, k in ((1, "mean"), (3, "median"))},
                                   "Fixed-point flow", "t", "value"))
            written.append(p)
    except OSError as exc:
        raise OSError(f"failed writing report to {d}: {exc}") from exc
    return written


def _write_extra(sc: Scenario, state: dict, d: Path):
    paths = []
    if "terminal" in state:
        p = d / "terminal_marginal.txt"
        p.write_text(state["terminal"].to_text())
        paths.append(p)
    if "report" in state:
        rep = state["report"].to_dict()
        rep.pop("timing", None)
        rep.get("config", {}).pop("threads", None)
        p = d / "picard.json"
        p.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def run_scenario(path_or_scenario, *, seed: int | None = None, particles: int | None = None,
                 out: str | None = None, threads: int = 1, plots: bool = True) -> RunManifest:
    """Execute a scenario; outputs land in ``<out>/<name>`` (atomically replaced)."""
    sc = path_or_scenario if isinstance(path_or_scenario, Scenario) else load_scenario(path_or_scenario)
    upd = {}
    if seed is not None:
        upd["seed"] = seed
    if out is not None:
        upd["output"] = out
    sc = sc.model_copy(update=upd)
    if particles is not None:
        sc = sc.model_copy(update={"picard": sc.picard.model_copy(update={"particles": particles})})
    manifest = RunManifest(json.loads(sc.model_dump_json()), __version__, plots=plots)
    manifest.threads = threads
    state = _run_phases(sc, manifest, threads)
    final = Path(sc.output) / sc.name
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{sc.name}.", dir=final.parent))
    try:
        files = emit_report(manifest, tmp, plots) + _write_extra(sc, state, tmp)
        manifest.files = {str(p.relative_to(tmp)): _sha256(p) for p in sorted(files)}
        manifest.output_dir = str(final)
        (tmp / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def verify_manifest(path) -> tuple[dict, list[str]]:
    """Load a manifest and list problems: digest mismatches, missing or unlisted files."""
    p = Path(path)
    data = json.loads(p.read_text())
    root = p.parent
    problems = []
    for rel, digest in data.get("files", {}).items():
        f = root / rel
        if not f.exists():
            problems.append(f"missing file {rel}")
        elif _sha256(f) != digest:
            problems.append(f"digest mismatch for {rel}")
    listed = set(data.get("files", {}))
    for f in root.rglob("*"):
        rel = str(f.relative_to(root))
        if f.is_file() and rel != "manifest.json" and rel not in listed:
            problems.append(f"unlisted file {rel}")
    return data, problems
