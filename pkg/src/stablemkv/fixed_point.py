"""Picard iteration for the McKean-Vlasov fixed point on flows of measures.

``T(Q)`` is the marginal flow of the particle system driven with coefficients
frozen along ``Q``.  Iterates share one noise tape and one set of starting
points, so consecutive iterates are index-paired particle clouds and their
distance is measured pathwise.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import CoefficientSpec
from .dynamics import NoiseTape, _as_streams, initial_particles, simulate_linear
from .metrics import EmpiricalMeasure, MeasureFlow, TestFamily, flow_distance
from .noise import SpectralMeasure, StableParams

__all__ = [
    "PicardConfig",
    "WindowRecord",
    "PicardReport",
    "ContractionFit",
    "squared_lambda_interval",
    "check_regime",
    "apply_T",
    "picard_solve",
    "paired_bootstrap",
    "contraction_diagnostic",
]


def squared_lambda_interval(alpha: float, eta: float) -> tuple[float, float]:
    """Open interval of ``lam`` with ``2 lam eta + alpha > 1`` and ``alpha + (1 - lam) 2 eta > 1``."""
    lo = max(0.0, (1.0 - alpha) / (2.0 * eta))
    hi = min(1.0, 1.0 - (1.0 - alpha) / (2.0 * eta))
    return lo, hi


def check_regime(alpha: float, eta: float) -> bool:
    """Whether ``(alpha, eta)`` is covered by the single-map contraction argument."""
    return alpha >= 1.0 or alpha > max(2.0 * eta, 1.0 - eta)


@dataclass
class PicardConfig:
    """Settings of the fixed-point iteration.

    ``beta=None`` selects ``eta`` (single mode) or ``(1 - lam) 2 eta``
    (squared mode); ``lam=None`` selects the midpoint of the admissible
    interval.  ``metric`` is ``"paired"`` (certified upper bound under the
    shared noise), ``"dual"`` (smooth test family) or ``"exact"``.
    """

    tol: float = 1e-3
    max_iter: int = 30
    particles: int = 10_000
    dt: float = 1.0 / 128
    window: float | None = None
    min_window: float | None = None
    mode: str = "single"
    lam: float | None = None
    beta: float | None = None
    metric: str = "paired"
    antithetic: bool = True
    init_method: str = "multinomial"
    threads: int = 1
    bootstrap: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.particles < 1:
            raise ValueError("max_iter and particles must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.mode not in ("single", "squared"):
            raise ValueError("mode must be 'single' or 'squared'")
        if self.metric not in ("paired", "dual", "exact"):
            raise ValueError("metric must be 'paired', 'dual' or 'exact'")

    def resolve(self, alpha: float, eta: float) -> tuple[float, float | None]:
        """Return ``(beta, lam)`` after applying defaults and validity checks."""
        lam = None
        if self.mode == "squared":
            lo, hi = squared_lambda_interval(alpha, eta)
            lam = 0.5 * (lo + hi) if self.lam is None else self.lam
            if not (0.0 <= lam <= 1.0 and 2 * lam * eta + alpha > 1 and alpha + (1 - lam) * 2 * eta > 1):
                raise ValueError(f"lam={lam} violates 2 lam eta + alpha > 1 or alpha + (1 - lam) 2 eta > 1")
            beta = (1.0 - lam) * 2.0 * eta if self.beta is None else self.beta
        else:
            beta = eta if self.beta is None else self.beta
        if not 0 < beta <= 1:
            raise ValueError(f"metric index beta={beta} outside (0, 1]")
        return beta, lam


@dataclass
class WindowRecord:
    start: float
    end: float
    n_steps: int
    converged: bool
    converged_at: int | None
    trace: list
    attempt: int
    self_consistency: float
    bootstrap_error: float


@dataclass
class PicardReport:
    iterates: list
    windows: list
    final_flow: MeasureFlow = field(repr=False)
    self_consistency: float
    self_consistency_error: float
    beta: float
    lam: float | None
    config: dict
    seed: int
    timing: dict

    @property
    def converged(self) -> bool:
        return all(w.converged for w in self.windows)

    @property
    def converged_at(self) -> int | None:
        return self.windows[0].converged_at if self.windows else None

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "beta": self.beta,
            "lam": self.lam,
            "seed": self.seed,
            "config": self.config,
            "self_consistency": self.self_consistency,
            "self_consistency_error": self.self_consistency_error,
            "iterates": self.iterates,
            "windows": [asdict(w) for w in self.windows],
            "timing": self.timing,
        }

    def write_manifest(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["window", "attempt", "iteration", "distance"])
            for i, w in enumerate(self.windows):
                for k, d in enumerate(w.trace):
                    wr.writerow([i, w.attempt, k, repr(float(d))])


def apply_T(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure, Q: MeasureFlow,
            cfg: PicardConfig, rng=None, tape: NoiseTape | None = None, x0=None) -> MeasureFlow:
    """Marginal flow of the particle system with coefficients frozen along ``Q``.

    The first node is ``Q``'s initial law itself.
    """
    ens = simulate_linear(spec, params, omega, Q, Q.initial, cfg.particles, rng, tape=tape, x0=x0,
                          antithetic=cfg.antithetic, threads=cfg.threads, init_method=cfg.init_method)
    return ens.flow(pin_initial=True)


def _paired_costs(P: MeasureFlow, Q: MeasureFlow, beta: float) -> np.ndarray:
    """``c[k, i] = |x_i - y_i|^beta ^ 1`` at each node for index-paired clouds."""
    out = np.zeros((len(P), P[-1].n))
    for k in range(len(P)):
        a, b = P[k], Q[k]
        if a is b or a.same_as(b):
            continue
        out[k] = np.minimum(np.linalg.norm(a.points - b.points, axis=1) ** beta, 1.0)
    return out


def paired_bootstrap(P: MeasureFlow, Q: MeasureFlow, beta: float, n_boot: int = 50, rng=None):
    """Paired flow distance and its bootstrap standard error (resampling particles)."""
    c = _paired_costs(P, Q, beta)
    value = float(2.0 * c.mean(axis=1).max())
    if n_boot < 2:
        return value, 0.0
    g = np.random.default_rng(0 if rng is None else rng)
    n = c.shape[1]
    reps = [2.0 * c[:, g.integers(0, n, n)].mean(axis=1).max() for _ in range(n_boot)]
    return value, float(np.std(reps, ddof=1))


def _distance(P, Q, beta, cfg, family):
    if cfg.metric == "paired":
        return flow_distance(P, Q, beta, "paired").value
    if cfg.metric == "dual":
        return flow_distance(P, Q, beta, "dual", family=family).value
    return flow_distance(P, Q, beta, "exact").value


def _run_window(spec, params, omega, mu, grid, cfg, beta, streams):
    tape = NoiseTape.generate(params, omega, grid, cfg.particles, streams.child("tape"),
                              cfg.antithetic, cfg.threads)
    x0 = initial_particles(mu, cfg.particles, streams, cfg.init_method)
    Tmap = lambda Q: apply_T(spec, params, omega, Q, cfg, tape=tape, x0=x0)
    step = (lambda Q: Tmap(Tmap(Q))) if cfg.mode == "squared" else Tmap
    # constant start; interior nodes carry the starting cloud so iterates stay index-paired
    cloud = EmpiricalMeasure.uniform(x0)
    Q = MeasureFlow(grid, [mu] + [cloud] * (grid.size - 1))
    trace, family, converged_at = [], None, None
    for k in range(cfg.max_iter):
        Qn = step(Q)
        if family is None and cfg.metric == "dual":
            family = TestFamily.from_reference(Qn.terminal.points, beta)
        trace.append(_distance(Qn, Q, beta, cfg, family))
        Q = Qn
        if trace[-1] < cfg.tol:
            converged_at = k
            break
    TQ = Tmap(Q)
    if cfg.metric == "paired":
        sc, err = paired_bootstrap(TQ, Q, beta, cfg.bootstrap, streams.generator("bootstrap"))
    else:
        sc = _distance(TQ, Q, beta, cfg, family)
        _, err = paired_bootstrap(TQ, Q, beta, cfg.bootstrap, streams.generator("bootstrap"))
    return Q, trace, converged_at, sc, err


def picard_solve(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure, mu0: EmpiricalMeasure,
                 horizon: float, cfg: PicardConfig | None = None, rng=None) -> PicardReport:
    """Fixed point of ``T`` (or ``T o T``) on ``[0, horizon]``, chained over windows.

    Each window starts from the previous window's terminal cloud.  A window
    that does not reach ``tol`` within ``max_iter`` iterations is halved and
    retried down to ``min_window``; below that the diverging trace is
    reported as is.
    """
    cfg = PicardConfig() if cfg is None else cfg
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    spec.check_stable_pairing(params.alpha)
    if cfg.mode == "single" and not spec.measure_free and not check_regime(params.alpha, spec.eta):
        warnings.warn(f"(alpha={params.alpha}, eta={spec.eta}) lies outside the single-map regime", stacklevel=2)
    beta, lam = cfg.resolve(params.alpha, spec.eta)
    streams = _as_streams(rng)
    window = horizon if cfg.window is None else cfg.window
    min_window = cfg.dt if cfg.min_window is None else cfg.min_window
    t0 = time.perf_counter()
    records, flows, iterates = [], [], []
    s, mu, wi = 0.0, mu0, 0
    n_total = int(round(horizon / cfg.dt))
    k_done = 0
    while k_done < n_total:
        attempt = 0
        while True:
            n_steps = min(max(1, int(round(window / cfg.dt))), n_total - k_done)
            grid = s + cfg.dt * np.arange(n_steps + 1)
            Q, trace, conv, sc, err = _run_window(
                spec, params, omega, mu, grid, cfg, beta, streams.child("window", wi, attempt))
            ok = conv is not None
            if ok or window / 2 < min_window - 1e-15 or n_steps == 1:
                break
            window /= 2.0
            attempt += 1
        records.append(WindowRecord(float(grid[0]), float(grid[-1]), n_steps, ok, conv,
                                    [float(v) for v in trace], attempt, float(sc), float(err)))
        iterates.extend(float(v) for v in trace)
        flows.append(Q)
        mu = Q.terminal
        s = float(grid[-1])
        k_done += n_steps
        wi += 1
    grid = np.concatenate([flows[0].grid] + [f.grid[1:] for f in flows[1:]])
    marg = list(flows[0].marginals) + [m for f in flows[1:] for m in f.marginals[1:]]
    final = MeasureFlow(grid, marg)
    return PicardReport(
        iterates, records, final,
        max(r.self_consistency for r in records), max(r.bootstrap_error for r in records),
        beta, lam, asdict(cfg), streams.seed, {"total_s": time.perf_counter() - t0},
    )


@dataclass
class ContractionFit:
    horizons: np.ndarray
    ratios: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    ratio_errors: np.ndarray
    C: float
    zeta: float
    residuals: np.ndarray

    def rows(self):
        return [
            {"horizon": float(h), "ratio": float(r), "numerator": float(n), "denominator": float(d),
             "ratio_error": float(e)}
            for h, r, n, d, e in zip(self.horizons, self.ratios, self.numerators, self.denominators,
                                     self.ratio_errors)
        ]


def contraction_diagnostic(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure,
                           P1: MeasureFlow, P2: MeasureFlow, horizons, cfg: PicardConfig | None = None,
                           rng=None, metric: str = "dual") -> ContractionFit:
    """Ratios ``d(T P1, T P2) / d(P1, P2)`` on ``[s, T]`` for each horizon, with a power-law fit.

    ``T(P)`` restricted to ``[s, T]`` only depends on ``P`` there, so one
    simulation on the full grid serves every horizon.  Both images share
    one noise tape and starting cloud.  The default ``"dual"`` metric keeps
    the ratio on the scale of the distance itself.
    """
    cfg = PicardConfig() if cfg is None else cfg
    if not np.array_equal(P1.grid, P2.grid):
        raise ValueError("flows must share a grid")
    if not (np.array_equal(P1.initial.points, P2.initial.points)
            and np.array_equal(P1.initial.weights, P2.initial.weights)):
        raise ValueError("flows must share the initial law")
    beta = spec.eta if cfg.beta is None else cfg.beta
    streams = _as_streams(rng)
    hz = np.asarray(horizons, dtype=float)
    if hz.size < 2 or np.any(np.diff(hz) <= 0):
        raise ValueError("horizons must be increasing (at least two)")
    s = P1.grid[0]
    idx = [int(np.argmin(np.abs(P1.grid - (s + h)))) for h in hz]
    ref = np.vstack([P1.terminal.points, P2.terminal.points])
    family = TestFamily.from_reference(ref, beta) if metric == "dual" else None
    den_nodes = flow_distance(P1, P2, beta, metric, family=family).running
    if den_nodes[idx[0]] <= 0:
        raise ValueError("P1 and P2 coincide on the smallest horizon; the ratio is undefined")
    tape = NoiseTape.generate(params, omega, P1.grid, cfg.particles, streams.child("tape"),
                              cfg.antithetic, cfg.threads)
    x0 = initial_particles(P1.initial, cfg.particles, streams, cfg.init_method)
    T1 = apply_T(spec, params, omega, P1, cfg, tape=tape, x0=x0)
    T2 = apply_T(spec, params, omega, P2, cfg, tape=tape, x0=x0)
    num_nodes = flow_distance(T1, T2, beta, metric, family=family).running
    num = num_nodes[idx]
    den = den_nodes[idx]
    ratios = num / den
    # bootstrap the numerator over particles (denominator is deterministic input)
    g = streams.generator("bootstrap")
    n = cfg.particles
    errs = np.zeros(hz.size)
    if cfg.bootstrap >= 2 and metric == "dual":
        W = np.stack([np.bincount(g.integers(0, n, n), minlength=n) / n for _ in range(cfg.bootstrap)], axis=1)
        reps = np.zeros((cfg.bootstrap, len(T1)))
        for k in range(1, len(T1)):
            diff = family.evaluate(T1[k].points) - family.evaluate(T2[k].points)
            reps[:, k] = np.abs(diff @ W).max(axis=0)
        errs = np.std(np.maximum.accumulate(reps, axis=1)[:, idx], axis=0, ddof=1) / den
    elif cfg.bootstrap >= 2 and metric == "paired":
        c = _paired_costs(T1, T2, beta)
        reps = np.array([np.maximum.accumulate(2 * c[:, g.integers(0, n, n)].mean(axis=1)) for _ in range(cfg.bootstrap)])
        errs = np.std(reps[:, idx], axis=0, ddof=1) / den
    pos = ratios > 0
    if pos.sum() >= 2:
        zeta, logC = np.polyfit(np.log(hz[pos]), np.log(ratios[pos]), 1)
        resid = np.full(hz.size, np.nan)
        resid[pos] = np.log(ratios[pos]) - (logC + zeta * np.log(hz[pos]))
        C = float(np.exp(logC))
    else:
        zeta, C, resid = float("nan"), 0.0, np.full(hz.size, np.nan)
    return ContractionFit(hz, ratios, num, den, errs, C, float(zeta), resid)
