"""Drift and diffusion coefficients that see the measure through functionals.

A coefficient is a plain spatial function of ``(t, x, values)`` where
``values`` holds evaluations of a fixed tuple of :class:`MeasureFunctional`
objects at the current measure.  Restricting measure access this way makes
flat derivatives computable by the chain rule and keeps the checks cheap.

All spatial arguments are batches of shape ``(n, d)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import as_generator
from .metrics import EmpiricalMeasure, dbeta_exact

__all__ = [
    "ModelError",
    "EllipticityError",
    "MissingDerivativeError",
    "MeasureFunctional",
    "Scalar",
    "Convolution",
    "Interaction",
    "Custom",
    "CoefficientSpec",
    "eval_functionals",
    "eval_drift",
    "eval_diffusion",
    "flat_derivative",
    "FlatDerivativeReport",
    "check_flat_derivative",
    "LipschitzReport",
    "check_measure_lipschitz",
    "check_spatial_holder",
    "FAMILIES",
    "build_family",
]


class ModelError(ValueError):
    """A coefficient returned non-finite values; ``inputs`` holds the culprits."""

    def __init__(self, msg, inputs=None):
        super().__init__(msg)
        self.inputs = inputs


class EllipticityError(ModelError):
    pass


class MissingDerivativeError(ValueError):
    pass


def _is_single(x, dim) -> bool:
    return np.ndim(x) == 0 or (np.ndim(x) == 1 and dim > 1 and np.size(x) == dim)


def _as_batch(x, dim=1):
    """Coerce to shape ``(n, dim)``; a lone point becomes a batch of one."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x
    if _is_single(x, dim):
        return x.reshape(1, dim)
    return x.reshape(-1, dim)


class MeasureFunctional:
    """Map ``m -> U(m)``, possibly depending on a spatial point ``x``.

    ``derivative_norm`` is a declared bound on ``sup ||dU/dm||_{C^beta}``
    used by the Lipschitz check; ``None`` means unknown.
    """

    depends_on_x = False
    has_derivative = True
    derivative_norm: float | None = None

    def value(self, m: EmpiricalMeasure, x=None):
        raise NotImplementedError

    def derivative(self, m: EmpiricalMeasure, y, x=None):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Scalar(MeasureFunctional):
    """``U(m) = int h dm``; ``dU/dm(m)(y) = h(y) - int h dm``."""

    h: Callable
    derivative_norm: float | None = None
    name: str = "scalar"

    def value(self, m, x=None):
        return float(m.weights @ np.asarray(self.h(m.points), dtype=float))

    def derivative(self, m, y, x=None):
        y = _as_batch(y, m.dim)
        return np.asarray(self.h(y), dtype=float) - self.value(m)


@dataclass(frozen=True, eq=False)
class Convolution(MeasureFunctional):
    """Quadratic functional ``U(m) = int int h(x - y) m(dx) m(dy)``."""

    h: Callable
    derivative_norm: float | None = None
    name: str = "convolution"

    def _pair(self, a, b):
        diff = a[:, None, :] - b[None, :, :]
        n, k, d = diff.shape
        return np.asarray(self.h(diff.reshape(-1, d)), dtype=float).reshape(n, k)

    def value(self, m, x=None):
        return float(m.weights @ self._pair(m.points, m.points) @ m.weights)

    def derivative(self, m, y, x=None):
        y = _as_batch(y, m.dim)
        left = m.weights @ self._pair(m.points, y)     # int h(x - y) m(dx)
        right = self._pair(y, m.points) @ m.weights    # int h(y - x) m(dx)
        return left + right - 2.0 * self.value(m)


@dataclass(frozen=True, eq=False)
class Interaction(MeasureFunctional):
    """Pointwise convolution ``U(m)(x) = (h * m)(x) = int h(x - y) m(dy)``.

    ``h`` may be scalar or vector valued; the derivative in ``m`` at fixed
    ``x`` is ``h(x - y) - U(m)(x)``.
    """

    h: Callable
    derivative_norm: float | None = None
    name: str = "interaction"
    depends_on_x = True

    def value(self, m, x=None):
        if x is None:
            raise ValueError("Interaction needs the spatial point x")
        x = _as_batch(x, m.dim)
        diff = x[:, None, :] - m.points[None, :, :]
        n, k, d = diff.shape
        hv = np.asarray(self.h(diff.reshape(-1, d)), dtype=float)
        hv = hv.reshape((n, k) + hv.shape[1:])
        return np.tensordot(m.weights, hv, axes=([0], [1]))

    def derivative(self, m, y, x=None):
        if x is None:
            raise ValueError("Interaction needs the spatial point x")
        x = _as_batch(x, m.dim)
        if x.shape[0] != 1:
            raise ValueError("derivative takes a single spatial point")
        y = _as_batch(y, m.dim)
        return np.asarray(self.h(x - y), dtype=float) - self.value(m, x)[0]


@dataclass(frozen=True, eq=False)
class Custom(MeasureFunctional):
    """User-supplied evaluator and optional flat derivative ``(m, y) -> values``."""

    evaluator: Callable
    flat: Callable | None = None
    derivative_norm: float | None = None
    name: str = "custom"

    @property
    def has_derivative(self):
        return self.flat is not None

    def value(self, m, x=None):
        return self.evaluator(m)

    def derivative(self, m, y, x=None):
        if self.flat is None:
            raise MissingDerivativeError(f"functional {self.name!r} declares no flat derivative")
        return np.asarray(self.flat(m, _as_batch(y, m.dim)), dtype=float)


def flat_derivative(func: MeasureFunctional, m: EmpiricalMeasure, y, x=None):
    """Normalized flat derivative ``dU/dm(m)(y)``, vectorized over ``y``."""
    if not func.has_derivative:
        raise MissingDerivativeError(f"{type(func).__name__} exposes no flat derivative")
    out = func.derivative(m, y, x)
    return float(out[0]) if np.ndim(y) == 0 else out


def _no_diffusion_dependence(t, x, v):
    n, d = x.shape
    return np.broadcast_to(np.eye(d), (n, d, d))


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    """Drift and diffusion with declared regularity constants.

    ``drift(t, x, values) -> (n, d)`` and ``diffusion(t, x, values) -> (n, d, d)``
    where ``values[j]`` is functional ``j`` evaluated at the measure (a float,
    or an ``(n, ...)`` array for x-dependent functionals).

    Declared constants: ``eta`` (drift is ``2 eta``-Holder in space),
    ``drift_seminorm`` (its homogeneous seminorm), ``ellipticity`` (Lambda),
    ``diffusion_holder``, and ``drift_flat_norm`` / ``diffusion_flat_norm``
    (bounds on the ``C^{2 eta}`` norm of the flat derivative of each
    coefficient, used by the measure-Lipschitz check).
    """

    drift: Callable
    diffusion: Callable = _no_diffusion_dependence
    functionals: tuple = ()
    dim: int = 1
    eta: float = 0.5
    drift_seminorm: float = np.inf
    ellipticity: float = 1.0
    diffusion_holder: float = np.inf
    drift_flat_norm: float | None = None
    diffusion_flat_norm: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.eta <= 0.5:
            raise ValueError("eta must lie in (0, 1/2]")
        if self.ellipticity < 1.0:
            raise ValueError("ellipticity constant must be >= 1")
        object.__setattr__(self, "functionals", tuple(self.functionals))

    @property
    def measure_free(self) -> bool:
        return len(self.functionals) == 0

    def check_stable_pairing(self, alpha: float):
        """Raise unless ``2 eta + alpha > 1``."""
        if not 2.0 * self.eta + alpha > 1.0:
            raise ValueError(f"need 2*eta + alpha > 1 (eta={self.eta}, alpha={alpha})")


def eval_functionals(spec: CoefficientSpec, mu: EmpiricalMeasure | None, x=None):
    if spec.measure_free:
        return ()
    if mu is None:
        raise ValueError(f"coefficient {spec.name!r} depends on the measure")
    return tuple(f.value(mu, x) if f.depends_on_x else f.value(mu) for f in spec.functionals)


def eval_drift(spec: CoefficientSpec, t: float, x, mu: EmpiricalMeasure | None = None, values=None):
    """Drift at a batch of points; ``values`` may carry precomputed functionals."""
    xb = _as_batch(x, spec.dim)
    if values is None:
        values = eval_functionals(spec, mu, xb)
    out = np.asarray(spec.drift(t, xb, values), dtype=float)
    out = np.broadcast_to(out, xb.shape) if out.ndim < 2 else out
    if not np.all(np.isfinite(out)):
        bad = ~np.all(np.isfinite(out), axis=1)
        raise ModelError(f"non-finite drift in {spec.name!r} at t={t}",
                         {"t": t, "x": xb[bad], "values": values})
    return out[0] if _is_single(x, spec.dim) else out


def eval_diffusion(spec: CoefficientSpec, t: float, x, mu: EmpiricalMeasure | None = None,
                   values=None, check: bool = True, rtol: float = 1e-12):
    """Diffusion matrices at a batch of points, with an ellipticity check on ``sigma^T sigma``."""
    xb = _as_batch(x, spec.dim)
    if values is None:
        values = eval_functionals(spec, mu, xb)
    d = spec.dim
    s = np.asarray(spec.diffusion(t, xb, values), dtype=float)
    s = np.broadcast_to(s, (xb.shape[0], d, d))
    if not np.all(np.isfinite(s)):
        raise ModelError(f"non-finite diffusion in {spec.name!r} at t={t}", {"t": t, "x": xb})
    if check:
        ev = np.linalg.eigvalsh(np.einsum("nki,nkj->nij", s, s))
        lam = spec.ellipticity
        bad = (ev[:, 0] < (1.0 / lam) * (1 - rtol)) | (ev[:, -1] > lam * (1 + rtol))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EllipticityError(
                f"eigenvalues {ev[i]} of sigma^T sigma leave [1/{lam}, {lam}] in {spec.name!r}",
                {"t": t, "x": xb[i], "values": values},
            )
    return s[0] if _is_single(x, spec.dim) else s


@dataclass
class FlatDerivativeReport:
    eps: np.ndarray
    quotient: np.ndarray
    pairing: float
    errors: np.ndarray
    slope: float
    taylor_lhs: float
    taylor_rhs: float

    @property
    def taylor_residual(self) -> float:
        return abs(self.taylor_lhs - self.taylor_rhs)


def _slope(eps, err, floor=1e-13):
    keep = err > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)[0])


def check_flat_derivative(func: MeasureFunctional, m: EmpiricalMeasure, m_prime: EmpiricalMeasure,
                          eps_schedule=(1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3), x=None,
                          n_quad: int = 16) -> FlatDerivativeReport:
    """Difference quotients against the derivative pairing, plus the integrated identity.

    ``U(m') - U(m) = int_0^1 int dU/dm(m + l (m' - m))(y) (m' - m)(dy) dl``
    is evaluated with ``n_quad``-point Gauss-Legendre in ``l``.
    """
    if not func.has_derivative:
        raise MissingDerivativeError("functional has no flat derivative")

    def U(mm):
        v = func.value(mm, x) if func.depends_on_x else func.value(mm)
        return float(np.ravel(v)[0])

    def pair(mm):
        dm = np.ravel(func.derivative(mm, m_prime.points, x))
        d0 = np.ravel(func.derivative(mm, m.points, x))
        return float(m_prime.weights @ dm - m.weights @ d0)

    eps = np.asarray(eps_schedule, dtype=float)
    base = U(m)
    quot = np.array([(U(m.mix(m_prime, e)) - base) / e for e in eps])
    p = pair(m)
    err = np.abs(quot - p)
    nodes, wts = np.polynomial.legendre.leggauss(n_quad)
    lam = 0.5 * (nodes + 1.0)
    rhs = 0.5 * sum(w * pair(m.mix(m_prime, l)) for l, w in zip(lam, wts))
    return FlatDerivativeReport(eps, quot, p, err, _slope(eps, err), U(m_prime) - base, float(rhs))


@dataclass
class LipschitzReport:
    worst_ratio: float
    n_checked: int
    n_skipped: int
    bound: float
    witness: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= 1.0 + 1e-9


def _random_measure(rng, dim, scale=1.5):
    k = int(rng.integers(1, 7))
    pts = rng.normal(scale=scale, size=(k, dim))
    return EmpiricalMeasure.from_weights(pts, rng.dirichlet(np.ones(k)))


def _measure_pairs(rng, dim, n_pairs):
    for i in range(n_pairs):
        mu = _random_measure(rng, dim)
        if i % 3 == 0:
            yield mu, mu
        elif i % 3 == 1:
            nu = EmpiricalMeasure(mu.points + rng.normal(scale=10.0 ** rng.uniform(-3, 0), size=mu.points.shape),
                                  mu.weights)
            yield mu, nu
        else:
            yield mu, _random_measure(rng, dim)


def check_measure_lipschitz(target, t: float = 0.0, beta: float | None = None, n_pairs: int = 100,
                            rng=None, probe_x=None, which: str = "drift") -> LipschitzReport:
    """Sample measure pairs and report ``sup_x |U(mu) - U(nu)| / (K d_beta(mu, nu))``.

    ``target`` is a :class:`CoefficientSpec` (``which`` picks drift or
    diffusion; ``K`` is the declared flat norm, ``beta = 2 eta`` by default)
    or a bare :class:`MeasureFunctional` with ``derivative_norm`` set.
    Violations are reported, not raised.
    """
    rng = as_generator(0 if rng is None else rng)
    if isinstance(target, CoefficientSpec):
        dim = target.dim
        beta = 2.0 * target.eta if beta is None else beta
        K = target.drift_flat_norm if which == "drift" else target.diffusion_flat_norm
        px = np.linspace(-3, 3, 13)[:, None] * np.ones((1, dim)) if probe_x is None else _as_batch(probe_x, dim)

        def value(m):
            if which == "drift":
                return eval_drift(target, t, px, m)
            return eval_diffusion(target, t, px, m, check=False)
    else:
        dim = 1 if probe_x is None else _as_batch(probe_x, 1).shape[1]
        if beta is None:
            raise ValueError("beta is required for a bare functional")
        K = target.derivative_norm
        px = np.zeros((1, dim)) if probe_x is None else _as_batch(probe_x, dim)

        def value(m):
            return target.value(m, px) if target.depends_on_x else target.value(m)
    if K is None:
        raise ValueError("no declared flat-derivative norm to check against")
    worst, witness, checked, skipped = 0.0, None, 0, 0
    for mu, nu in _measure_pairs(rng, dim, n_pairs):
        d = dbeta_exact(mu, nu, beta)
        diff = float(np.max(np.abs(np.asarray(value(mu)) - np.asarray(value(nu)))))
        if d <= 1e-14:
            skipped += 1
            continue
        checked += 1
        r = diff / (K * d)
        if r > worst:
            worst, witness = r, (mu, nu)
    rep = LipschitzReport(worst, checked, skipped, K, witness)
    if not rep.ok:
        warnings.warn(f"measure-Lipschitz ratio {worst:.4g} exceeds the declared bound", stacklevel=2)
    return rep


def check_spatial_holder(spec: CoefficientSpec, t: float, mu: EmpiricalMeasure | None,
                         n_samples: int = 2000, rng=None, scale: float = 3.0) -> float:
    """Worst sampled ``|b(x) - b(y)| / |x - y|^{2 eta}`` relative to the declared seminorm."""
    rng = as_generator(0 if rng is None else rng)
    x = rng.normal(scale=scale, size=(n_samples, spec.dim))
    h = 10.0 ** rng.uniform(-4, 1, size=(n_samples, 1)) * rng.normal(size=(n_samples, spec.dim))
    y = x + h
    bx = eval_drift(spec, t, x, mu)
    by = eval_drift(spec, t, y, mu)
    ratio = np.linalg.norm(bx - by, axis=1) / np.linalg.norm(h, axis=1) ** (2 * spec.eta)
    top = float(ratio.max())
    if spec.drift_seminorm == 0:
        worst = 0.0 if top <= 1e-12 else np.inf
    else:
        worst = top / spec.drift_seminorm
    if worst > 1.0 + 1e-9:
        warnings.warn(f"spatial Holder ratio {worst:.4g} exceeds the declared seminorm", stacklevel=2)
    return worst


# ---------------------------------------------------------------------------
# built-in families, addressable by name from scenario files


def _zero(dim=1, sigma=1.0, eta=0.5):
    return CoefficientSpec(
        drift=lambda t, x, v: np.zeros_like(x),
        diffusion=lambda t, x, v: sigma * np.broadcast_to(np.eye(x.shape[1]), (x.shape[0],) + (x.shape[1],) * 2),
        dim=dim, eta=eta, drift_seminorm=0.0, ellipticity=max(sigma**2, sigma**-2),
        diffusion_holder=0.0, drift_flat_norm=0.0, diffusion_flat_norm=0.0, name="zero",
        params={"sigma": sigma},
    )


def _constant(c=(1.0,), sigma=1.0, eta=0.5):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    spec = _zero(dim=c.size, sigma=sigma, eta=eta)
    return CoefficientSpec(
        drift=lambda t, x, v: np.broadcast_to(c, x.shape),
        diffusion=spec.diffusion, dim=c.size, eta=eta, drift_seminorm=0.0,
        ellipticity=spec.ellipticity, diffusion_holder=0.0, drift_flat_norm=0.0,
        diffusion_flat_norm=0.0, name="constant", params={"c": c.tolist(), "sigma": sigma},
    )


def _ou(rate=1.0, sigma=1.0, dim=1):
    spec = _zero(dim=dim, sigma=sigma)
    return CoefficientSpec(
        drift=lambda t, x, v: -rate * x, diffusion=spec.diffusion, dim=dim, eta=0.5,
        drift_seminorm=abs(rate), ellipticity=spec.ellipticity, diffusion_holder=0.0,
        drift_flat_norm=0.0, diffusion_flat_norm=0.0, name="ou",
        params={"rate": rate, "sigma": sigma, "dim": dim},
    )


def _linear_mean(a=1.0, rate=0.0, sigma=1.0, dim=1):
    """``b(x, m) = a int y m(dy) - rate x``: unbounded, for closed-form mean checks."""
    funcs = tuple(Scalar((lambda k: lambda y: y[:, k])(k), name=f"coord{k}") for k in range(dim))
    spec = _zero(dim=dim, sigma=sigma)
    return CoefficientSpec(
        drift=lambda t, x, v: a * np.asarray(v, dtype=float)[None, :] - rate * x,
        diffusion=spec.diffusion, functionals=funcs, dim=dim, eta=0.5,
        drift_seminorm=abs(rate), ellipticity=spec.ellipticity, diffusion_holder=0.0,
        drift_flat_norm=None, diffusion_flat_norm=0.0, name="linear_mean",
        params={"a": a, "rate": rate, "sigma": sigma, "dim": dim},
    )


def _holder_from_lip(sup, lip, beta):
    return lip**beta * (2.0 * sup) ** (1.0 - beta)


def _kernel(strength=1.0, length=1.0, sigma=1.0, eta=0.5):
    """Gaussian-kernel attraction ``b(x, m) = K int (y - x) exp(-|y - x|^2 / 2l^2) m(dy)`` in d = 1."""
    lip = abs(strength)
    sup = abs(strength) * length * np.exp(-0.5)
    spec = _zero(dim=1, sigma=sigma)
    semi = _holder_from_lip(sup, lip, 2 * eta)
    kern = Interaction(lambda u: -strength * u[:, 0] * np.exp(-0.5 * (u[:, 0] / length) ** 2),
                       derivative_norm=sup + semi, name="gauss_kernel")
    return CoefficientSpec(
        drift=lambda t, x, v: np.asarray(v[0]).reshape(-1, 1),
        diffusion=spec.diffusion, functionals=(kern,), dim=1, eta=eta, drift_seminorm=semi,
        ellipticity=spec.ellipticity, diffusion_holder=0.0, drift_flat_norm=sup + semi,
        diffusion_flat_norm=0.0, name="kernel",
        params={"strength": strength, "length": length, "sigma": sigma, "eta": eta},
    )


def _kuramoto(coupling=1.0, sigma=1.0, noise_mod=0.25, eta=0.5):
    """``b(x, m) = K int sin(y - x) m(dy)``, ``sigma(m) = s (1 + c int cos dm)``, d = 1.

    Bounded, Lipschitz in space and measure, uniformly elliptic for ``|c| < 1``.
    """
    if not abs(noise_mod) < 1:
        raise ValueError("noise modulation must satisfy |c| < 1")
    S = Scalar(lambda y: np.sin(y[:, 0]), derivative_norm=1.0 + _holder_from_lip(1, 1, 2 * eta), name="sin")
    C = Scalar(lambda y: np.cos(y[:, 0]), derivative_norm=1.0 + _holder_from_lip(1, 1, 2 * eta), name="cos")
    K = coupling
    beta = 2 * eta

    def drift(t, x, v):
        s, c = v[0], v[1]
        return K * (s * np.cos(x) - c * np.sin(x))

    def diffusion(t, x, v):
        return np.broadcast_to(sigma * (1.0 + noise_mod * v[1]), (x.shape[0], 1, 1))

    lo, hi = sigma * (1 - abs(noise_mod)), sigma * (1 + abs(noise_mod))
    lam = max(hi**2, lo**-2)
    return CoefficientSpec(
        drift=drift, diffusion=diffusion, functionals=(S, C), dim=1, eta=eta,
        drift_seminorm=_holder_from_lip(abs(K), abs(K), beta), ellipticity=lam, diffusion_holder=0.0,
        drift_flat_norm=abs(K) * (1.0 + _holder_from_lip(1, 1, beta)),
        diffusion_flat_norm=sigma * abs(noise_mod) * (1.0 + _holder_from_lip(1, 1, beta)),
        name="kuramoto",
        params={"coupling": coupling, "sigma": sigma, "noise_mod": noise_mod, "eta": eta},
    )


def _sin_diffusion(sigma=1.0, amplitude=0.5, drift_rate=0.0, eta=0.5):
    """``sigma(m) = s (1 + a sin(int sin dm)) Id`` with ``OU`` drift; d = 1."""
    S = Scalar(lambda y: np.sin(y[:, 0]), derivative_norm=1.0 + _holder_from_lip(1, 1, 2 * eta), name="sin")
    lo, hi = sigma * (1 - abs(amplitude)), sigma * (1 + abs(amplitude))
    return CoefficientSpec(
        drift=lambda t, x, v: -drift_rate * x,
        diffusion=lambda t, x, v: np.broadcast_to(sigma * (1 + amplitude * np.sin(v[0])), (x.shape[0], 1, 1)),
        functionals=(S,), dim=1, eta=eta, drift_seminorm=abs(drift_rate) if eta == 0.5 else np.inf,
        ellipticity=max(hi**2, lo**-2), diffusion_holder=0.0, drift_flat_norm=0.0,
        diffusion_flat_norm=sigma * abs(amplitude) * S.derivative_norm, name="sin_diffusion",
        params={"sigma": sigma, "amplitude": amplitude, "drift_rate": drift_rate, "eta": eta},
    )


FAMILIES: dict[str, Callable[..., CoefficientSpec]] = {
    "zero": _zero,
    "constant": _constant,
    "ou": _ou,
    "linear_mean": _linear_mean,
    "kernel": _kernel,
    "kuramoto": _kuramoto,
    "sin_diffusion": _sin_diffusion,
}


def build_family(name: str, **params) -> CoefficientSpec:
    """Instantiate a named built-in coefficient family."""
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown coefficient family {name!r}; known: {sorted(FAMILIES)}") from None
    return factory(**params)
