"""Density of the frozen proxy ``Theta = int_s^t sigma(v) dZ_v`` by Fourier inversion,
plus scaling diagnostics (moments, derivative sup-norms, semigroup gradients).

With ``sigma`` piecewise constant on a schedule of steps ``dv_k``,

    log E exp(i <zeta, Theta>) = sum_k dv_k psi(sigma_k^T zeta),

which is inverted on a symmetric lattice ``x_j = (j - n/2) h``.  The lattice
is sized in units of the characteristic length ``(t - s)^(1/alpha)`` so grids
at different horizons are exact rescalings of each other.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, special, stats

from ._rng import as_generator
from .coefficients import CoefficientSpec
from .dynamics import NoiseTape, _as_streams, _direction_pairs, simulate_linear
from .metrics import EmpiricalMeasure, MeasureFlow
from .noise import SpectralMeasure, StableParams, characteristic_exponent, radial_constant, sample_increment

__all__ = [
    "AliasingError",
    "GridConfig",
    "DensityGrid",
    "RateFit",
    "density_fft",
    "small_jump_density_fft",
    "sample_proxy",
    "chi_square_test",
    "moment_scaling_check",
    "DerivativeReport",
    "derivative_bound_check",
    "gradient_rate_fit",
    "write_ratefits_csv",
]


class AliasingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridConfig:
    """Lattice settings; ``n=None`` picks 2**12 points (d=1) or 2**9 per axis (d=2)."""

    n: int | None = None
    min_extent: float = 8.0   # half-width, in characteristic lengths
    max_spacing: float = 1.0 / 16  # in characteristic lengths
    wrap_tol: float = 1e-5
    shell_tol: float = 1e-2
    clip_tol: float = 1e-6

    def points(self, dim: int) -> int:
        if self.n is not None:
            return int(self.n)
        return 2**12 if dim == 1 else 2**9


def _schedule(sigma_schedule, s, t, d):
    """Normalize to step lengths ``dv`` (K,) and matrices (K, d, d)."""
    if not t > s:
        raise ValueError("need t > s")
    if sigma_schedule is None:
        return np.array([t - s]), np.eye(d)[None]
    if isinstance(sigma_schedule, tuple):
        times, mats = sigma_schedule
        times = np.asarray(times, dtype=float)
        mats = np.asarray(mats, dtype=float).reshape(-1, d, d)
        if times.size != mats.shape[0] + 1 or abs(times[0] - s) > 1e-12 or abs(times[-1] - t) > 1e-12:
            raise ValueError("schedule times must run from s to t with one matrix per step")
        return np.diff(times), mats
    mats = np.asarray(sigma_schedule, dtype=float)
    if mats.ndim <= 2:
        mats = np.broadcast_to(mats.reshape(d, d) if mats.size == d * d else mats * np.eye(d), (1, d, d))
    mats = mats.reshape(-1, d, d)
    K = mats.shape[0]
    return np.full(K, (t - s) / K), mats


def _log_cf(params, omega, dv, mats, zeta):
    out = np.zeros(zeta.shape[0])
    for w, S in zip(dv, mats):
        out += w * np.atleast_1d(characteristic_exponent(params, omega, zeta @ S))
    return out


def _char_length(params, omega, dv, mats):
    d = params.dim
    if d == 1:
        u = np.ones((1, 1))
    else:
        th = np.pi * np.arange(64) / 64
        u = np.column_stack([np.cos(th), np.sin(th)])
    return float(np.max(-_log_cf(params, omega, dv, mats, u))) ** (1.0 / params.alpha)


def _tail_constant(params, omega, dv, mats):
    """``K`` with ``nu_Theta(|z| > R) = K R^-alpha / alpha``."""
    dirs, pw = _direction_pairs(omega, 64)
    return float(sum(w * np.sum(pw * np.linalg.norm(dirs @ S.T, axis=1) ** params.alpha)
                     for w, S in zip(dv, mats)))


@dataclass(eq=False)
class DensityGrid:
    dim: int
    axes: tuple
    spacing: float
    values: np.ndarray
    s: float
    t: float
    sigma_schedule: tuple = field(repr=False)
    clipped_mass: float = 0.0
    raw_mass: float = 1.0
    extent: float = 0.0
    char_length: float = 1.0
    tail_constant: float = 0.0
    alpha: float = 1.0

    @property
    def cell(self) -> float:
        return self.spacing**self.dim

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell)

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            return np.interp(pts.ravel(), self.axes[0], self.values, left=0.0, right=0.0)
        f = interpolate.RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=0.0)
        return f(pts.reshape(-1, 2))

    def symmetry_error(self) -> float:
        """``max |p(y) - p(-y)|`` on the lattice (index ``j -> n - j``)."""
        v = self.values
        sl = tuple(slice(1, None) for _ in range(self.dim))
        inner = v[sl]
        flipped = inner[tuple(slice(None, None, -1) for _ in range(self.dim))]
        return float(np.max(np.abs(inner - flipped)))

    def moment(self, gamma: float) -> float:
        """``int |z|^gamma p`` on the lattice plus the analytic tail beyond the box."""
        if not 0 <= gamma < self.alpha:
            raise ValueError("moment order must lie in [0, alpha)")
        mesh = self.mesh()
        r = np.sqrt(sum(m**2 for m in mesh))
        w = r**gamma
        # cell average of |z|^gamma over the central cell instead of the point value 0
        w[r == 0] = (self.spacing / 2) ** gamma * self.dim / (self.dim + gamma)
        body = float(np.sum(w * self.unfolded_values()) * self.cell)
        return body + self.tail_constant * self.extent ** (gamma - self.alpha) / (self.alpha - gamma)

    def unfolded_values(self) -> np.ndarray:
        """Lattice values minus the periodic images of the power tail folded in by the FFT (1-D only)."""
        if self.dim != 1:
            return self.values
        x = self.axes[0]
        k = np.arange(1, 200)
        P = 2 * self.extent
        wrap = 0.5 * self.tail_constant * (np.abs(x[:, None] + k * P) ** (-1 - self.alpha)
                                            + np.abs(x[:, None] - k * P) ** (-1 - self.alpha)).sum(axis=1)
        return self.values - wrap

    def cdf(self, x) -> np.ndarray:
        """Distribution function in 1-D: lattice body plus the analytic power tail outside the box."""
        if self.dim != 1:
            raise ValueError("the distribution function is implemented for d = 1")
        x = np.asarray(x, dtype=float)
        ax, L = self.axes[0], self.extent
        side = self.tail_constant / (2 * self.alpha)  # mass beyond L on each side is side * L^-alpha
        p = self.unfolded_values()
        body = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * self.spacing)])
        inside = side * L ** -self.alpha + np.interp(x, ax, body)
        with np.errstate(divide="ignore"):
            left = side * np.abs(x) ** -self.alpha
        return np.where(x < ax[0], left, np.where(x > ax[-1], 1.0 - left, inside))

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# density dim={self.dim} s={self.s!r} t={self.t!r}\n")
        cols = [m.ravel() for m in self.mesh()] + [self.values.ravel()]
        for row in zip(*cols):
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def _lattice(dim, n, h):
    ax = (np.arange(n) - n // 2) * h
    freq = 2 * np.pi * np.fft.fftfreq(n, d=h)
    return ax, freq


def _invert(logphi_fn, dim, n, h, multiplier=None):
    """Inverse transform of ``exp(logphi) * multiplier`` onto the centred lattice."""
    ax, fr = _lattice(dim, n, h)
    if dim == 1:
        Z = fr[:, None]
    else:
        F1, F2 = np.meshgrid(fr, fr, indexing="ij")
        Z = np.column_stack([F1.ravel(), F2.ravel()])
    spec = np.exp(logphi_fn(Z)).reshape((n,) * dim)
    if multiplier is not None:
        spec = spec * multiplier(Z).reshape((n,) * dim)
    sign = (-1.0) ** np.arange(n)
    for ax_i in range(dim):
        shape = [1] * dim
        shape[ax_i] = n
        spec = spec * sign.reshape(shape)
    vals = np.fft.fftn(spec) / (n * h) ** dim
    return ax, vals


def _grid_for(params, omega, dv, mats, cfg: GridConfig):
    d = params.dim
    n = cfg.points(d)
    ell = _char_length(params, omega, dv, mats)
    K = _tail_constant(params, omega, dv, mats)
    a = params.alpha
    c_wrap = 0.5 * (K * special.zeta(1 + a) / (cfg.wrap_tol * ell**a)) ** (1.0 / (1 + a))
    c_max = 0.5 * n * cfg.max_spacing
    c = min(max(cfg.min_extent, c_wrap), c_max)
    L = c * ell
    return n, 2 * L / n, L, ell, K


def density_fft(params: StableParams, omega: SpectralMeasure, sigma_schedule=None, s: float = 0.0,
                t: float = 1.0, grid_cfg: GridConfig = GridConfig()) -> DensityGrid:
    """Density of ``int_s^t sigma(v) dZ_v`` on a lattice.

    ``sigma_schedule``: ``None`` (identity), one ``d x d`` matrix, a stack of
    matrices on equal sub-steps, or ``(times, matrices)``.  Negative ringing
    below ``-clip_tol`` is zeroed and the result renormalized.
    """
    d = params.dim
    if d > 2:
        raise ValueError("density grids are limited to d <= 2")
    dv, mats = _schedule(sigma_schedule, s, t, d)
    for S in mats:
        if np.linalg.matrix_rank(S) < d:
            raise ValueError("diffusion matrix in the schedule is singular")
    n, h, L, ell, K = _grid_for(params, omega, dv, mats, grid_cfg)
    ax, vals = _invert(lambda Z: _log_cf(params, omega, dv, mats, Z), d, n, h)
    p = vals.real
    raw = float(p.sum() * h**d)
    neg = p < -grid_cfg.clip_tol
    clipped = float(-p[neg].sum() * h**d)
    p = np.where(neg, 0.0, p)
    p = p / (p.sum() * h**d)
    grid = DensityGrid(d, (ax,) * d, h, p, s, t, (dv, mats), clipped, raw, L, ell, K, params.alpha)
    _guard(grid, grid_cfg)
    return grid


def _guard(grid: DensityGrid, cfg: GridConfig):
    box = np.max(np.abs(np.stack(grid.mesh())), axis=0)
    shell = float(grid.values[box > 0.95 * grid.extent].sum() * grid.cell)
    if shell > cfg.shell_tol:
        raise AliasingError(f"mass {shell:.3g} on the outer lattice shell; enlarge the extent")


def _small_jump_profile():
    """``G(x) = int_0^x (1 - cos v) v^(-1-alpha) dv`` tabulated per alpha (cached)."""
    cache = {}

    def G(alpha, x):
        if alpha not in cache:
            edges = np.concatenate([[0.0], np.geomspace(1e-6, 64.0, 600)])
            gx, gw = np.polynomial.legendre.leggauss(12)
            a, b = edges[:-1, None], edges[1:, None]
            v = 0.5 * (b - a) * gx + 0.5 * (b + a)
            f = np.where(v > 0, (1 - np.cos(v)) / v ** (1 + alpha), 0.0)
            # (1 - cos v) v^(-1-alpha) ~ v^(1-alpha)/2 near 0; first panel done analytically
            seg = (0.5 * (b - a) * (f @ gw[:, None])).ravel()
            seg[0] = 0.5 * edges[1] ** (2 - alpha) / (2 - alpha)
            cum = np.cumsum(seg)
            cache[alpha] = interpolate.CubicSpline(np.log(edges[1:]), np.log(cum)), edges[1], edges[-1]
        spline, lo, hi = cache[alpha]
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        small = x <= lo
        out[small] = 0.5 * x[small] ** (2 - alpha) / (2 - alpha)
        mid = ~small & (x <= hi)
        out[mid] = np.exp(spline(np.log(x[mid])))
        big = x > hi
        if np.any(big):
            xb = x[big]
            out[big] = radial_constant(alpha) - xb ** (-alpha) / alpha - np.sin(xb) * xb ** (-1 - alpha)
        return out

    return G


_G = _small_jump_profile()


def small_jump_density_fft(params: StableParams, omega: SpectralMeasure, sigma_schedule=None,
                           s: float = 0.0, t: float = 1.0, grid_cfg: GridConfig = GridConfig(),
                           threshold: float | None = None, multiplier=None):
    """Density (or derivative, via ``multiplier``) of the small-jump part: jumps of size ``r <= threshold``.

    The default threshold is ``(t - s)^(1/alpha)``.
    """
    d, a = params.dim, params.alpha
    dv, mats = _schedule(sigma_schedule, s, t, d)
    rho = (t - s) ** (1.0 / a) if threshold is None else threshold
    dirs, pw = _direction_pairs(omega, 64)

    def logphi(Z):
        out = np.zeros(Z.shape[0])
        for w, S in zip(dv, mats):
            u = np.abs(Z @ S @ dirs.T)  # (M, P)
            out -= w * (u**a * _G(a, rho * u)) @ pw
        return out

    n, h, L, ell, K = _grid_for(params, omega, dv, mats, grid_cfg)
    ax, vals = _invert(logphi, d, n, h, multiplier)
    return ax, vals.real, h


def sample_proxy(params: StableParams, omega: SpectralMeasure, sigma_schedule=None, s: float = 0.0,
                 t: float = 1.0, n: int = 100_000, rng=None) -> np.ndarray:
    """Draws of ``sum_k sigma_k dZ_k`` for the piecewise-constant schedule."""
    rng = as_generator(rng)
    dv, mats = _schedule(sigma_schedule, s, t, params.dim)
    out = np.zeros((n, params.dim))
    for w, S in zip(dv, mats):
        out += sample_increment(params, omega, w, rng, size=n) @ S.T
    return out


def chi_square_test(grid: DensityGrid, samples, bins: int = 50, coverage: float = 0.98):
    """Pearson chi-square of 1-D samples against the lattice density.

    Bin edges are sample quantiles spanning ``coverage`` of the mass; the two
    outer tails form two extra bins.  Returns ``(statistic, p_value)``.
    """
    if grid.dim != 1:
        raise ValueError("chi-square comparison is implemented for d = 1")
    x = np.asarray(samples, dtype=float).ravel()
    q = (1 - coverage) / 2
    edges = np.quantile(x, np.linspace(q, 1 - q, bins + 1))
    F = grid.cdf(edges)
    probs = np.concatenate([[F[0]], np.diff(F), [1 - F[-1]]])
    counts = np.concatenate([[np.sum(x < edges[0])], np.histogram(x, edges)[0], [np.sum(x > edges[-1])]])
    exp = probs * x.size
    stat = float(np.sum((counts - exp) ** 2 / exp))
    return stat, float(stats.chi2.sf(stat, counts.size - 1))


@dataclass
class RateFit:
    exponent: float
    intercept: float
    residual: float
    target: float
    tolerance: float
    horizons: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None = None
    kind: str = "equal"  # "equal": |exponent - target| <= tol; "at_least": exponent >= target - tol
    inconclusive: bool = False
    label: str = ""

    @property
    def passed(self) -> bool:
        if self.inconclusive:
            return False
        if self.kind == "equal":
            return abs(self.exponent - self.target) <= self.tolerance
        return self.exponent >= self.target - self.tolerance

    def row(self) -> dict:
        return {"label": self.label, "target": self.target, "fitted": self.exponent,
                "residual": self.residual, "tolerance": self.tolerance, "kind": self.kind,
                "pass": self.passed}


def _fit(h, v, target, tol, kind="equal", errors=None, label=""):
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    if h.size < 4:
        raise ValueError("a rate fit needs at least 4 horizons")
    slope, icpt = np.polyfit(np.log(h), np.log(v), 1)
    res = np.log(v) - (icpt + slope * np.log(h))
    return RateFit(float(slope), float(icpt), float(np.sqrt(np.mean(res**2))), target, tol, h, v, errors,
                   kind, False, label)


def moment_scaling_check(params: StableParams, omega: SpectralMeasure, gamma: float, horizons,
                         sigma_schedule=None, grid_cfg: GridConfig = GridConfig(), tol: float = 0.05) -> RateFit:
    """Fit ``log int |z|^gamma p_Theta`` against ``log(t - s)``; target slope ``gamma / alpha``."""
    if not 0 <= gamma < params.alpha:
        raise ValueError("need 0 <= gamma < alpha")
    vals = [density_fft(params, omega, sigma_schedule, 0.0, h, grid_cfg).moment(gamma) for h in horizons]
    return _fit(horizons, vals, gamma / params.alpha, tol, label=f"moment gamma={gamma}")


def _multi_indices(dim, order):
    if dim == 1:
        return [(order,)]
    return [(i, order - i) for i in range(order + 1)]


def _derivative_multiplier(beta):
    def mult(Z):
        out = np.ones(Z.shape[0], dtype=complex)
        for k, b in enumerate(beta):
            out = out * (-1j * Z[:, k]) ** b
        return out

    return mult


@dataclass
class DerivativeReport:
    order: int
    fits: list
    origin_values: dict
    small_jump_ratios: np.ndarray
    perturbation_ratios: np.ndarray

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fits)


def derivative_bound_check(params: StableParams, omega: SpectralMeasure, horizons, order: int,
                           sigma_schedule=None, grid_cfg: GridConfig = GridConfig(), tol: float = 0.07,
                           decay_order: int = 6) -> DerivativeReport:
    """Scaling of ``sup |D^beta p_Theta|`` over horizons, for every ``|beta| = order``.

    Also reports, per horizon, the worst ratio of the small-jump density
    derivative to the profile ``(t-s)^(-(d+|beta|)/alpha) (1 + |y| (t-s)^(-1/alpha))^(-decay_order)``
    and of the shifted derivative ``sup_{|z| <= (t-s)^(1/alpha)} |D^beta p(y + z)|`` to
    ``(t-s)^(-|beta|/alpha) q(y)`` with ``q`` the heavy-tailed reference profile
    ``(t-s)^(-d/alpha) (1 + |y| (t-s)^(-1/alpha))^(-1-alpha)``.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("derivative order must be in 0..3")
    d, a = params.dim, params.alpha
    fits, origin = [], {}
    sj = np.zeros(len(horizons))
    pert = np.zeros(len(horizons))
    sups = {beta: [] for beta in _multi_indices(d, order)}
    for i, tau in enumerate(horizons):
        dv, mats = _schedule(sigma_schedule, 0.0, tau, d)
        n, h, L, ell, K = _grid_for(params, omega, dv, mats, grid_cfg)
        scale = tau ** (1.0 / a)
        for beta in sups:
            ax, vals = _invert(lambda Z: _log_cf(params, omega, dv, mats, Z), d, n, h,
                               _derivative_multiplier(beta) if order else None)
            v = vals.real
            sups[beta].append(float(np.max(np.abs(v))))
            centre = (n // 2,) * d
            origin.setdefault(beta, []).append(float(v[centre]))
            mesh = np.meshgrid(*(ax,) * d, indexing="ij")
            r = np.sqrt(sum(m**2 for m in mesh)) / scale
            # diagonal shifts up to one characteristic length, in lattice steps
            k = max(1, int(np.floor(scale / h)))
            shifted = np.abs(v)
            for axis in range(d):
                acc = shifted.copy()
                for j in range(1, k + 1):
                    acc = np.maximum(acc, np.maximum(np.roll(shifted, j, axis), np.roll(shifted, -j, axis)))
                shifted = acc
            q = tau ** (-d / a) * (1 + r) ** (-1 - a)
            inner = r < 0.8 * L / scale
            pert[i] = max(pert[i], float(np.max(shifted[inner] * tau ** (order / a) / q[inner])))
            _, vm, _ = small_jump_density_fft(params, omega, sigma_schedule, 0.0, tau, grid_cfg,
                                              multiplier=_derivative_multiplier(beta) if order else None)
            prof = tau ** (-(d + order) / a) * (1 + r) ** (-decay_order)
            sj[i] = max(sj[i], float(np.max(np.abs(vm) / prof)))
    target = -(d + order) / a
    for beta, vals in sups.items():
        fits.append(_fit(horizons, vals, target, tol, label=f"D^{beta}"))
    return DerivativeReport(order, fits, origin, sj, pert)


def gradient_rate_fit(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure, h, gamma: float,
                      horizons, n_samples: int = 200_000, n_steps: int = 8, probes=None, rng=None,
                      mu: EmpiricalMeasure | None = None, tol: float = 0.15, max_rel_error: float = 0.25,
                      target: float | None = None) -> RateFit:
    """Fit ``sup_x |d/dx P_{s,t} h(x)|`` against ``t - s`` by Monte Carlo.

    Central differences at ``x +- delta`` with ``delta = (t-s)^(1/alpha) / 8``
    share their noise.  Probes default to a fixed grid plus points scaled
    with the characteristic length.  Coefficients are frozen at ``mu`` when
    they depend on the measure.  The acceptance target is
    ``-(1 - gamma) / alpha`` with ``kind="at_least"``; the fit is flagged
    inconclusive when the relative MC error of some sup exceeds
    ``max_rel_error``.
    """
    if not params.alpha + gamma > 1:
        raise ValueError("need alpha + gamma > 1")
    if not spec.measure_free and mu is None:
        raise ValueError("measure-dependent coefficients need a freezing measure mu")
    a, d = params.alpha, params.dim
    streams = _as_streams(rng)
    sups, errs = [], []
    for i, tau in enumerate(horizons):
        ell = tau ** (1.0 / a)
        delta = ell / 8
        base = np.linspace(-1.5, 1.5, 13) if probes is None else np.asarray(probes, dtype=float).ravel()
        xs = np.unique(np.concatenate([base, ell * np.array([-2, -1, -0.5, -0.25, 0.25, 0.5, 1, 2])]))
        grid = np.linspace(0.0, tau, n_steps + 1)
        tape = NoiseTape.generate(params, omega, grid, n_samples, streams.child("grad", i), antithetic=False)
        Q = MeasureFlow.constant(mu if mu is not None else EmpiricalMeasure.dirac(np.zeros(d)), grid)
        e = np.zeros(d)
        e[0] = delta
        best, best_err = 0.0, 0.0
        for x in xs:
            pts = np.zeros(d)
            pts[0] = x
            up = simulate_linear(spec, params, omega, Q, Q.initial, n_samples, tape=tape,
                                 x0=np.tile(pts + e, (n_samples, 1)), store_paths=False).states
            dn = simulate_linear(spec, params, omega, Q, Q.initial, n_samples, tape=tape,
                                 x0=np.tile(pts - e, (n_samples, 1)), store_paths=False).states
            diff = (np.asarray(h(up), dtype=float) - np.asarray(h(dn), dtype=float)) / (2 * delta)
            g = abs(float(diff.mean()))
            if g >= best:
                best, best_err = g, float(diff.std(ddof=1) / np.sqrt(n_samples))
        sups.append(best)
        errs.append(best_err)
    sups, errs = np.array(sups), np.array(errs)
    tgt = -(1 - gamma) / a if target is None else target
    if np.any(sups <= 0):
        fit = RateFit(0.0, -np.inf, 0.0, tgt, tol, np.asarray(horizons, float), sups, errs, "at_least",
                      False, f"gradient gamma={gamma}")
        return fit
    fit = _fit(horizons, sups, tgt, tol, "at_least", errs, f"gradient gamma={gamma}")
    fit.inconclusive = bool(np.any(errs > max_rel_error * sups))
    return fit


def write_ratefits_csv(path, fits):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label", "target", "fitted", "residual", "tolerance", "kind", "pass"])
        for f in fits:
            r = f.row()
            wr.writerow([r["label"], repr(r["target"]), repr(r["fitted"]), repr(r["residual"]),
                         repr(r["tolerance"]), r["kind"], int(r["pass"])])
