"""Symmetric alpha-stable driving noise.

The Levy measure is written in polar form ``nu(dz) = r**(-1-alpha) dr omega(dxi)``
with ``r > 0`` and ``omega`` a symmetric finite measure on the unit sphere.
With that normalization the characteristic exponent is

    psi(zeta) = -C(alpha) * int |<zeta, xi>|**alpha omega(dxi),
    C(alpha)  = int_0^inf (1 - cos u) u**(-1-alpha) du
              = pi / (2 Gamma(1+alpha) sin(pi alpha / 2)).

Two families of spectral measures are supported: :class:`Atomic` (finite,
closed under ``xi -> -xi``) and :class:`Isotropic` (a density on the sphere,
either the uniform one in any dimension or a tabulated even density in d=2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, interpolate, special

from ._rng import as_generator

__all__ = [
    "StableParams",
    "SpectralMeasure",
    "Atomic",
    "Isotropic",
    "JumpDecomposition",
    "DegenerateMeasureError",
    "radial_constant",
    "characteristic_exponent",
    "sample_increment",
    "sample_unit_increments",
    "sample_decomposed",
    "estimate_kappa",
    "standard_symmetric_stable",
    "positive_stable",
    "spectral_from_dict",
]


class DegenerateMeasureError(ValueError):
    """The spectral measure violates the non-degeneracy condition."""


@dataclass(frozen=True)
class StableParams:
    alpha: float
    dim: int = 1

    def __post_init__(self):
        if not (0.0 < float(self.alpha) < 2.0):
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if int(self.dim) < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")


def radial_constant(alpha: float) -> float:
    """``int_0^inf (1 - cos u) u**(-1-alpha) du``."""
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    return float(np.pi / (2.0 * special.gamma(1.0 + alpha) * np.sin(np.pi * alpha / 2.0)))


def _uniform_sphere_abs_moment(dim: int, alpha: float) -> float:
    """E|U_1|**alpha for U uniform on the unit sphere of R^dim."""
    if dim == 1:
        return 1.0
    return float(
        special.gamma(dim / 2.0)
        * special.gamma((alpha + 1.0) / 2.0)
        / (np.sqrt(np.pi) * special.gamma((dim + alpha) / 2.0))
    )


class SpectralMeasure:
    """Base class; subclasses implement the few primitives below."""

    dim: int

    @property
    def total_mass(self) -> float:
        raise NotImplementedError

    def projection_moment(self, u, alpha: float) -> np.ndarray:
        """``int |<u, xi>|**alpha omega(dxi)`` for each row of ``u``."""
        raise NotImplementedError

    def second_moment(self) -> np.ndarray:
        """``int xi xi^T omega(dxi)`` (d x d)."""
        raise NotImplementedError

    def sample_directions(self, n: int, rng) -> np.ndarray:
        """``n`` i.i.d. directions from ``omega / |omega|``."""
        raise NotImplementedError

    def atomic_pairs(self):
        """(directions, pair_weights) of an atomic representation, one row per +/- pair."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Atomic(SpectralMeasure):
    """Finite symmetric spectral measure ``sum_i c_i delta_{xi_i}``.

    The atom set must be closed under ``xi -> -xi`` with equal weights.
    """

    directions: np.ndarray
    weights: np.ndarray
    tol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if dirs.shape[0] != w.shape[0]:
            raise ValueError("directions and weights must have the same length")
        if not np.all(np.isfinite(dirs)) or not np.all(np.isfinite(w)):
            raise ValueError("atoms must be finite")
        if np.any(w <= 0):
            raise ValueError("atom weights must be strictly positive")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("atom directions must be unit vectors")
        dirs = dirs / norms[:, None]
        # symmetry: each atom has an antipode of equal weight
        for i in range(dirs.shape[0]):
            dist = np.linalg.norm(dirs + dirs[i], axis=1)
            j = np.flatnonzero(dist < self.tol)
            if j.size == 0 or not np.any(np.abs(w[j] - w[i]) <= self.tol * max(1.0, w[i])):
                raise ValueError(f"atom {dirs[i]} has no antipodal atom of equal weight")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @classmethod
    def axes(cls, weights) -> "Atomic":
        """``sum_i c_i (delta_{e_i} + delta_{-e_i})``."""
        c = np.atleast_1d(np.asarray(weights, dtype=float))
        eye = np.eye(c.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([c, c]))

    @classmethod
    def symmetrized(cls, directions, weights) -> "Atomic":
        """Add the antipode of every given atom (weights are per atom)."""
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1)[:, None]
        w = np.asarray(weights, dtype=float).ravel()
        return cls(np.vstack([d, -d]), np.concatenate([w, w]))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def projection_moment(self, u, alpha):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.abs(u @ self.directions.T) ** alpha @ self.weights

    def second_moment(self):
        return (self.directions * self.weights[:, None]).T @ self.directions

    def sample_directions(self, n, rng):
        rng = as_generator(rng)
        idx = rng.choice(self.weights.size, size=n, p=self.weights / self.weights.sum())
        return self.directions[idx]

    @cached_property
    def _pairs(self):
        dirs, w = self.directions, self.weights
        used = np.zeros(len(w), dtype=bool)
        rep, pw = [], []
        for i in range(len(w)):
            if used[i]:
                continue
            j = np.flatnonzero((np.linalg.norm(dirs + dirs[i], axis=1) < self.tol) & ~used)
            j = j[j != i]
            used[i] = True
            if j.size:
                used[j[0]] = True
                pw.append(w[i] + w[j[0]])
            else:  # pragma: no cover - excluded by validation
                pw.append(w[i])
            rep.append(dirs[i])
        return np.array(rep), np.array(pw)

    def atomic_pairs(self):
        return self._pairs

    def to_dict(self):
        return {
            "kind": "atomic",
            "atoms": [
                {"direction": [float(v) for v in d], "weight": float(c)}
                for d, c in zip(self.directions, self.weights)
            ],
        }


@dataclass(frozen=True, eq=False)
class Isotropic(SpectralMeasure):
    """Spectral measure with a density w.r.t. the surface measure.

    ``omega(dxi) = mass * g(xi) dxi / int g``.  ``density=None`` means uniform
    (rotation invariant, any dimension).  A tabulated density is only
    supported in d=2: ``density[j] = g(2 pi j / n)``, periodic piecewise
    linear, and must satisfy ``g(theta + pi) = g(theta)``.
    """

    dim: int
    mass: float = 1.0
    density: np.ndarray | None = None
    n_atoms: int = field(default=512, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not (self.mass > 0 and np.isfinite(self.mass)):
            raise ValueError("mass must be positive and finite")
        if self.density is not None:
            g = np.asarray(self.density, dtype=float).ravel()
            if self.dim != 2:
                raise ValueError("tabulated spherical densities are only supported in d=2")
            if g.size < 4 or g.size % 2:
                raise ValueError("tabulated density needs an even number (>= 4) of angles")
            if np.any(g <= 0) or not np.all(np.isfinite(g)):
                raise ValueError("spherical density values must be positive and finite")
            half = g.size // 2
            if np.max(np.abs(g[:half] - g[half:])) > 1e-12 * np.max(g):
                raise ValueError("spherical density must be even: g(theta + pi) = g(theta)")
            object.__setattr__(self, "density", g)

    @property
    def is_uniform(self) -> bool:
        return self.density is None

    @property
    def total_mass(self):
        return float(self.mass)

    # -- tabulated-density helpers ------------------------------------------
    @cached_property
    def _angle_density(self):
        """Normalized periodic density on [0, 2pi) (integrates to 1)."""
        g = self.density
        n = g.size
        th = 2 * np.pi * np.arange(n + 1) / n
        vals = np.append(g, g[0])
        total = integrate.trapezoid(vals, th)
        return th, vals / total

    def _g(self, theta):
        th, vals = self._angle_density
        return np.interp(np.mod(theta, 2 * np.pi), th, vals)

    def _moment_table(self, alpha):
        cache = self.__dict__.setdefault("_mt_cache", {})
        if alpha in cache:
            return cache[alpha]
        th_nodes, _ = self._angle_density
        gl_x, gl_w = np.polynomial.legendre.leggauss(24)
        phis = np.linspace(0.0, 2 * np.pi, 361)
        out = np.empty_like(phis)
        for k, phi in enumerate(phis[:-1]):
            # integrand is smooth between table nodes and the two kinks of |cos|
            kinks = np.mod([phi + np.pi / 2, phi + 3 * np.pi / 2], 2 * np.pi)
            brk = np.unique(np.concatenate([th_nodes, kinks]))
            a, b = brk[:-1], brk[1:]
            t = 0.5 * (b - a)[:, None] * gl_x + 0.5 * (b + a)[:, None]
            f = np.abs(np.cos(t - phi)) ** alpha * self._g(t)
            out[k] = float(np.sum(0.5 * (b - a) * (f @ gl_w)))
        out[-1] = out[0]
        spline = interpolate.CubicSpline(phis, out, bc_type="periodic")
        cache[alpha] = spline
        return spline

    @cached_property
    def _atoms(self):
        """Midpoint discretization used for sampling tabulated densities."""
        m = self.n_atoms
        th = 2 * np.pi * (np.arange(m) + 0.5) / m
        w = self._g(th)
        w = self.mass * w / w.sum()
        return np.column_stack([np.cos(th), np.sin(th)]), w

    # -- primitives ----------------------------------------------------------
    def projection_moment(self, u, alpha):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        r = np.linalg.norm(u, axis=1)
        if self.is_uniform:
            return self.mass * _uniform_sphere_abs_moment(self.dim, alpha) * r**alpha
        phi = np.mod(np.arctan2(u[:, 1], u[:, 0]), 2 * np.pi)
        return self.mass * self._moment_table(alpha)(phi) * r**alpha

    def second_moment(self):
        if self.is_uniform:
            return self.mass * np.eye(self.dim) / self.dim
        d, w = self._atoms
        return (d * w[:, None]).T @ d

    def sample_directions(self, n, rng):
        rng = as_generator(rng)
        if self.is_uniform:
            if self.dim == 1:
                return rng.choice([-1.0, 1.0], size=(n, 1))
            g = rng.standard_normal((n, self.dim))
            return g / np.linalg.norm(g, axis=1)[:, None]
        d, w = self._atoms
        return d[rng.choice(w.size, size=n, p=w / w.sum())]

    def atomic_pairs(self):
        if self.is_uniform and self.dim == 1:
            return np.array([[1.0]]), np.array([self.mass])
        if self.is_uniform:
            raise NotImplementedError("uniform measure is sampled by subordination")
        d, w = self._atoms
        half = w.size // 2
        return d[:half], w[:half] + w[half:]

    def to_dict(self):
        out = {"kind": "isotropic", "dim": int(self.dim), "mass": float(self.mass)}
        out["density"] = "uniform" if self.is_uniform else [float(v) for v in self.density]
        return out


def spectral_from_dict(data: dict) -> SpectralMeasure:
    """Inverse of ``SpectralMeasure.to_dict``."""
    kind = data.get("kind")
    if kind == "atomic":
        atoms = data["atoms"]
        return Atomic([a["direction"] for a in atoms], [a["weight"] for a in atoms])
    if kind == "isotropic":
        dens = data.get("density", "uniform")
        if isinstance(dens, str):
            if dens != "uniform":
                raise ValueError(f"unknown built-in spherical density {dens!r}")
            dens = None
        return Isotropic(int(data["dim"]), float(data.get("mass", 1.0)), dens)
    raise ValueError(f"unknown spectral measure kind {kind!r}")


def _check(params: StableParams, spec: SpectralMeasure):
    if not isinstance(params, StableParams):
        params = StableParams(*params)
    if spec.dim != params.dim:
        raise ValueError(f"spectral measure lives in d={spec.dim}, params say d={params.dim}")
    return params


def characteristic_exponent(params: StableParams, spec: SpectralMeasure, zeta) -> np.ndarray | float:
    """Log-characteristic function ``psi(zeta)`` of the unit-time increment.

    ``zeta`` may be a single vector (returns a float) or an ``(n, d)`` array.
    """
    params = _check(params, spec)
    z = np.asarray(zeta, dtype=float)
    single = z.ndim <= 1
    z2 = z.reshape(1, -1) if single else z
    if z2.shape[1] != params.dim:
        raise ValueError("zeta has the wrong dimension")
    if not np.all(np.isfinite(z2)):
        raise ValueError("zeta must be finite")
    val = -radial_constant(params.alpha) * spec.projection_moment(z2, params.alpha)
    return float(val[0]) if single else val


def standard_symmetric_stable(alpha: float, size, rng) -> np.ndarray:
    """Chambers-Mallows-Stuck draws with characteristic function exp(-|u|**alpha)."""
    rng = as_generator(rng)
    v = rng.uniform(-np.pi / 2, np.pi / 2, size=size)
    if alpha == 1.0:
        return np.tan(v)
    w = rng.standard_exponential(size=size)
    return (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)) * (
        np.cos((1.0 - alpha) * v) / w
    ) ** ((1.0 - alpha) / alpha)


def positive_stable(a: float, size, rng) -> np.ndarray:
    """Kanter's draws with Laplace transform exp(-lambda**a), 0 < a < 1."""
    rng = as_generator(rng)
    u = rng.uniform(0.0, np.pi, size=size)
    e = rng.standard_exponential(size=size)
    return (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)


def sample_unit_increments(params: StableParams, spec: SpectralMeasure, n: int, rng) -> np.ndarray:
    """``n`` independent increments over unit time, shape ``(n, d)``."""
    params = _check(params, spec)
    rng = as_generator(rng)
    alpha, d = params.alpha, params.dim
    if isinstance(spec, Isotropic) and spec.is_uniform and d > 1:
        c = radial_constant(alpha) * spec.projection_moment(np.eye(d)[:1], alpha)[0]
        a = positive_stable(alpha / 2.0, n, rng)
        g = rng.standard_normal((n, d))
        return c ** (1.0 / alpha) * np.sqrt(2.0 * a)[:, None] * g
    dirs, pw = spec.atomic_pairs()
    scales = (radial_constant(alpha) * pw) ** (1.0 / alpha)
    s = standard_symmetric_stable(alpha, (n, pw.size), rng) * scales
    return s @ dirs


def sample_increment(params: StableParams, spec: SpectralMeasure, dt: float, rng, size: int | None = None):
    """Increment of the stable process over a step ``dt``.

    Returns a ``(d,)`` vector, or ``(size, d)`` when ``size`` is given.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    params = _check(params, spec)
    n = 1 if size is None else int(size)
    if dt == 0:
        out = np.zeros((n, params.dim))
    else:
        out = dt ** (1.0 / params.alpha) * sample_unit_increments(params, spec, n, rng)
    return out[0] if size is None else out


@dataclass
class JumpDecomposition:
    """Independent small-jump part ``small`` and large-jump part ``large``."""

    small: np.ndarray
    large: np.ndarray
    threshold: float
    n_large_jumps: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.small + self.large


def _compound_sum(n_samples, counts, radii, dirs, d):
    out = np.zeros((n_samples, d))
    owner = np.repeat(np.arange(n_samples), counts)
    jumps = radii[:, None] * dirs
    for k in range(d):
        out[:, k] = np.bincount(owner, weights=jumps[:, k], minlength=n_samples)
    return out


def sample_decomposed(
    params: StableParams,
    spec: SpectralMeasure,
    dt: float,
    rng,
    size: int | None = None,
    threshold: float | None = None,
    depth: float = 1.5,
    gaussian_remainder: bool = True,
    chunk_jumps: int = 2_000_000,
) -> JumpDecomposition:
    """Split the increment over ``dt`` at jump radius ``threshold``.

    ``large`` is an exact compound-Poisson draw of the jumps with radius
    above ``threshold`` (default ``dt**(1/alpha)``).  ``small`` is a LePage
    shot-noise series over the radius band ``(threshold * 10**-depth,
    threshold]``; the jumps below the band are replaced by a centred Gaussian
    with the matching covariance when ``gaussian_remainder`` is set.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if depth < 1:
        raise ValueError("series depth must be >= 1")
    params = _check(params, spec)
    rng = as_generator(rng)
    alpha, d = params.alpha, params.dim
    n = 1 if size is None else int(size)
    rho = dt ** (1.0 / alpha) if threshold is None else float(threshold)
    mass = spec.total_mass

    if np.isinf(rho):
        small = sample_increment(params, spec, dt, rng, size=n)
        large = np.zeros((n, d))
        counts = np.zeros(n, dtype=int)
    else:
        # large jumps: Poisson number, Pareto radii
        lam_large = dt * mass * rho ** (-alpha) / alpha
        counts = rng.poisson(lam_large, size=n)
        tot = int(counts.sum())
        radii = rho * rng.uniform(size=tot) ** (-1.0 / alpha)
        large = _compound_sum(n, counts, radii, spec.sample_directions(tot, rng), d)

        # small jumps: LePage series r(G) = (rho^-a + a G / (dt |w|))^(-1/a)
        # for the arrival times G of a unit Poisson process on [0, lam_small]
        eps_rho = rho * 10.0 ** (-depth)
        lam_small = dt * mass * (eps_rho ** (-alpha) - rho ** (-alpha)) / alpha
        small = np.zeros((n, d))
        per_chunk = max(1, int(chunk_jumps // max(lam_small, 1.0)))
        for start in range(0, n, per_chunk):
            m = min(per_chunk, n - start)
            c = rng.poisson(lam_small, size=m)
            tot = int(c.sum())
            arrivals = rng.uniform(0.0, lam_small, size=tot)
            r = (rho ** (-alpha) + alpha * arrivals / (dt * mass)) ** (-1.0 / alpha)
            small[start:start + m] = _compound_sum(m, c, r, spec.sample_directions(tot, rng), d)
        if gaussian_remainder:
            cov = dt * eps_rho ** (2.0 - alpha) / (2.0 - alpha) * spec.second_moment()
            small += rng.multivariate_normal(np.zeros(d), cov, size=n, method="eigh")
    if size is None:
        return JumpDecomposition(small[0], large[0], rho, counts[:1])
    return JumpDecomposition(small, large, rho, counts)


def _sphere_directions(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0]])
    if dim == 2:
        th = np.pi * np.arange(n) / n  # half circle suffices by symmetry
        return np.column_stack([np.cos(th), np.sin(th)])
    g = np.random.default_rng(12345).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1)[:, None]


def _covering_radius(dim: int, dirs: np.ndarray) -> float:
    n = dirs.shape[0]
    if dim == 1:
        return 0.0
    if dim == 2:
        # chord between neighbouring sample angles (half circle, period pi)
        return 2.0 * np.sin(np.pi / (4.0 * n))
    probe = _sphere_directions(dim, 20 * n + 200)[n:]
    sim = np.abs(probe @ dirs.T).max(axis=1)
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * sim.min())))


def estimate_kappa(spec: SpectralMeasure, params: StableParams, n_directions: int = 64):
    """Bracket the non-degeneracy constant kappa.

    The integral ``I(z) = int |<z, xi>|**alpha omega(dxi)`` is evaluated on
    ``n_directions`` unit vectors.  ``kappa_lower = max(sup I, 1/inf I)`` over
    the sample; ``kappa_upper`` widens the sampled extremes by the modulus of
    continuity of ``I`` over the covering radius of the sample.
    """
    params = _check(params, spec)
    if n_directions < 16:
        raise ValueError("n_directions must be >= 16")
    alpha = params.alpha
    dirs = _sphere_directions(params.dim, n_directions)
    vals = spec.projection_moment(dirs, alpha)
    lo_i, hi_i = float(vals.min()), float(vals.max())
    if lo_i <= 1e-12 * spec.total_mass:
        raise DegenerateMeasureError(
            f"projection integral vanishes in direction {dirs[int(vals.argmin())]}"
        )
    kappa_lower = max(hi_i, 1.0 / lo_i, 1.0)
    delta = _covering_radius(params.dim, dirs)
    modulus = spec.total_mass * (delta**alpha if alpha <= 1 else alpha * delta)
    if lo_i - modulus <= 0:
        return kappa_lower, np.inf
    kappa_upper = max(hi_i + modulus, 1.0 / (lo_i - modulus), 1.0)
    return kappa_lower, kappa_upper
