"""Particle simulation of the SDE linearized around a frozen measure flow.

Noise is drawn per (step, particle block) from derived streams, so an
ensemble depends on the master seed only and never on the worker count.
A :class:`NoiseTape` stores the increments for exact replay; sharing one
tape between runs gives the common-random-number (pathwise) comparisons
used by the fixed-point solver.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import Streams
from .coefficients import CoefficientSpec, eval_diffusion, eval_drift, eval_functionals
from .metrics import EmpiricalMeasure, MeasureFlow
from .noise import Atomic, Isotropic, SpectralMeasure, StableParams, _sphere_directions, sample_increment

__all__ = [
    "SimulationBlowUp",
    "NoiseTape",
    "ParticleEnsemble",
    "initial_particles",
    "simulate_linear",
    "FrozenFlow",
    "solve_frozen_flow",
    "frozen_mean",
    "GeneratorQuadrature",
    "GeneratorValue",
    "apply_generator",
]

BLOCK = 1024
_TAPE_MAGIC = b"SMKVTAPE"
_TAPE_VERSION = 1


class SimulationBlowUp(RuntimeError):
    def __init__(self, step, msg):
        super().__init__(f"step {step}: {msg}")
        self.step = step


def _as_streams(rng) -> Streams:
    if isinstance(rng, Streams):
        return rng
    if rng is None:
        return Streams(0)
    if isinstance(rng, (int, np.integer)):
        return Streams(int(rng))
    raise TypeError("pass a Streams object or an integer seed")


@dataclass(eq=False)
class NoiseTape:
    """Stable increments ``inc[k, i]`` for step ``k`` and particle ``i``."""

    grid: np.ndarray
    increments: np.ndarray  # (K, N, d)
    antithetic: bool = True

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_particles(self) -> int:
        return self.increments.shape[1]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    @classmethod
    def generate(cls, params: StableParams, omega: SpectralMeasure, grid, n_particles: int, rng=None,
                 antithetic: bool = True, threads: int = 1, block: int = BLOCK) -> "NoiseTape":
        """Draw increments block by block from ``rng`` (a :class:`Streams` or seed).

        With ``antithetic`` each block holds ``Z`` followed by ``-Z``; the
        sample mean of a block is then exactly zero.
        """
        streams = _as_streams(rng)
        g = np.asarray(grid, dtype=float)
        dts = np.diff(g)
        K, N, d = dts.size, int(n_particles), params.dim
        if N < 1:
            raise ValueError("need at least one particle")
        out = np.empty((K, N, d))
        starts = range(0, N, block)

        def fill(b0):
            b = b0 // block
            nb = min(block, N - b0)
            for k in range(K):
                rg = streams.generator("noise", k, b)
                if antithetic and nb > 1:
                    z = sample_increment(params, omega, dts[k], rg, size=(nb + 1) // 2)
                    out[k, b0:b0 + nb] = np.concatenate([z, -z])[:nb]
                else:
                    out[k, b0:b0 + nb] = sample_increment(params, omega, dts[k], rg, size=nb)

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                list(ex.map(fill, starts))
        else:
            for b0 in starts:
                fill(b0)
        return cls(g, out, antithetic)

    # -- binary record format ----------------------------------------------
    def to_bytes(self) -> bytes:
        K, N, d = self.increments.shape
        rec = np.dtype([("step", "<u4"), ("particle", "<u4"), ("inc", "<f8", (d,))])
        arr = np.empty(K * N, dtype=rec)
        arr["step"] = np.repeat(np.arange(K, dtype=np.uint32), N)
        arr["particle"] = np.tile(np.arange(N, dtype=np.uint32), K)
        arr["inc"] = self.increments.reshape(K * N, d)
        head = _TAPE_MAGIC + struct.pack("<IIIII", _TAPE_VERSION, K, N, d, int(self.antithetic))
        return head + self.grid.astype("<f8").tobytes() + arr.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "NoiseTape":
        if data[:8] != _TAPE_MAGIC:
            raise ValueError("not a noise tape")
        version, K, N, d, anti = struct.unpack("<IIIII", data[8:28])
        if version != _TAPE_VERSION:
            raise ValueError(f"unsupported noise tape version {version}")
        off = 28
        grid = np.frombuffer(data, "<f8", K + 1, off).copy()
        off += 8 * (K + 1)
        rec = np.dtype([("step", "<u4"), ("particle", "<u4"), ("inc", "<f8", (d,))])
        arr = np.frombuffer(data, rec, K * N, off)
        inc = np.empty((K, N, d))
        inc[arr["step"], arr["particle"]] = arr["inc"]
        return cls(grid, inc, bool(anti))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NoiseTape":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(eq=False)
class ParticleEnsemble:
    grid: np.ndarray
    states: np.ndarray
    initial: EmpiricalMeasure
    paths: np.ndarray | None = None
    noise_tape: NoiseTape | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.states.shape[0] < 1 or not np.all(np.isfinite(self.states)):
            raise ValueError("ensemble states must be finite and non-empty")
        if self.paths is not None and self.paths.shape[0] != self.grid.size:
            raise ValueError("path length must equal grid length")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def marginal(self, k: int = -1) -> EmpiricalMeasure:
        if k in (-1, self.grid.size - 1):
            return EmpiricalMeasure.uniform(self.states)
        if self.paths is None:
            raise ValueError("paths were not stored")
        return EmpiricalMeasure.uniform(self.paths[k])

    def flow(self, pin_initial: bool = True) -> MeasureFlow:
        """Empirical marginal flow; node 0 is the initial law itself when pinned."""
        if self.paths is None:
            raise ValueError("paths were not stored")
        ms = [EmpiricalMeasure.uniform(p) for p in self.paths]
        if pin_initial:
            ms[0] = self.initial
        return MeasureFlow(self.grid, ms)

    def to_text(self) -> str:
        return EmpiricalMeasure.uniform(self.states).to_text()


def initial_particles(mu: EmpiricalMeasure, n: int, rng=None, method: str = "multinomial") -> np.ndarray:
    """Particles representing ``mu``: its atoms when they already are ``n``
    equally weighted points, otherwise resampled (multinomial or stratified)."""
    if mu.n == n and mu.is_uniform:
        return mu.points.copy()
    if mu.n == 1:
        return np.repeat(mu.points, n, axis=0)
    g = _as_streams(rng).generator("initial")
    if method == "multinomial":
        idx = g.choice(mu.n, size=n, p=mu.weights)
    elif method == "stratified":
        u = (np.arange(n) + g.uniform(size=n)) / n
        idx = np.minimum(np.searchsorted(np.cumsum(mu.weights), u), mu.n - 1)
    else:
        raise ValueError(f"unknown initialization {method!r}")
    return mu.points[idx]


def simulate_linear(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure, Q: MeasureFlow,
                    initial: EmpiricalMeasure, n_particles: int | None = None, rng=None,
                    tape: NoiseTape | None = None, x0=None, record_noise: bool = False,
                    store_paths: bool = True, antithetic: bool = True, threads: int = 1,
                    init_method: str = "multinomial") -> ParticleEnsemble:
    """Euler scheme for ``dX = b(t, X, Q(t)) dt + sigma(t, X, Q(t-)) dZ`` on ``Q.grid``.

    Coefficients at step ``k`` read only ``Q[k]``.  ``tape`` (or ``x0``)
    replays given noise (or starting points) bit for bit.
    """
    if spec.dim != params.dim:
        raise ValueError("coefficient and noise dimensions differ")
    streams = _as_streams(rng)
    grid = Q.grid
    if n_particles is None:
        n_particles = tape.n_particles if tape is not None else (len(x0) if x0 is not None else initial.n)
    if tape is None:
        tape = NoiseTape.generate(params, omega, grid, n_particles, streams, antithetic, threads)
    elif tape.n_particles != n_particles or not np.array_equal(tape.grid, grid):
        raise ValueError("noise tape does not match the grid or particle count")
    X = initial_particles(initial, n_particles, streams, init_method) if x0 is None else np.array(x0, dtype=float)
    X = X.reshape(n_particles, spec.dim)
    paths = np.empty((grid.size, n_particles, spec.dim)) if store_paths else None
    if store_paths:
        paths[0] = X
    dts = np.diff(grid)
    for k, dt in enumerate(dts):
        t = grid[k]
        m = None if spec.measure_free else Q[k]
        vals = eval_functionals(spec, m, X)
        b = eval_drift(spec, t, X, values=vals)
        s = eval_diffusion(spec, t, X, values=vals, check=(k == 0))
        X = X + b * dt + np.einsum("nij,nj->ni", s, tape.increments[k])
        if not np.all(np.isfinite(X)):
            raise SimulationBlowUp(k, "non-finite particle state")
        if store_paths:
            paths[k + 1] = X
    return ParticleEnsemble(grid, X, initial, paths, tape if record_noise else None)


@dataclass(eq=False)
class FrozenFlow:
    """``theta_{s, tau}(xi)`` on the grid; equal to ``xi`` for ``s <= tau``."""

    tau: float
    xi: np.ndarray
    grid: np.ndarray
    values: np.ndarray

    def at(self, s: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self.grid.size - 1))
        return self.values[k]


def _node(grid, t, what="time"):
    k = int(np.argmin(np.abs(grid - t)))
    if abs(grid[k] - t) > 1e-12 * max(1.0, abs(t)):
        raise ValueError(f"{what} {t} is not a grid node")
    return k


def solve_frozen_flow(spec: CoefficientSpec, Q: MeasureFlow, tau: float, xi, grid=None) -> FrozenFlow:
    """Forward Euler for ``d theta / ds = b(s, theta, Q(s))`` started at ``xi`` at time ``tau``.

    Only one solution is produced even when the ODE is not uniquely solvable.
    """
    g = Q.grid if grid is None else np.asarray(grid, dtype=float)
    k0 = _node(g, tau, "freezing time")
    xi = np.atleast_1d(np.asarray(xi, dtype=float)).reshape(1, spec.dim)
    vals = np.empty((g.size, spec.dim))
    vals[: k0 + 1] = xi
    th = xi
    for k in range(k0, g.size - 1):
        th = th + eval_drift(spec, g[k], th, None if spec.measure_free else Q.at(g[k])) * (g[k + 1] - g[k])
        vals[k + 1] = th
    return FrozenFlow(float(tau), xi[0], g, vals)


def frozen_mean(x, s: float, v: float, flow: FrozenFlow, spec: CoefficientSpec, Q: MeasureFlow) -> np.ndarray:
    """``x + int_s^v b(r, theta_{r, tau}(xi), Q(r)) dr`` by the left-endpoint rule on the grid."""
    if s > v:
        raise ValueError("need s <= v")
    g = flow.grid
    ks, kv = _node(g, s), _node(g, v)
    out = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, spec.dim)
    for k in range(ks, kv):
        th = flow.values[k].reshape(1, spec.dim)
        out = out + eval_drift(spec, g[k], th, None if spec.measure_free else Q.at(g[k])) * (g[k + 1] - g[k])
    return out[0]


@dataclass(frozen=True)
class GeneratorQuadrature:
    r_min: float = 1e-4
    r_max: float = 1e4
    panels: int = 256
    nodes_per_panel: int = 8
    sphere_points: int = 64

    def radial(self):
        edges = np.geomspace(self.r_min, self.r_max, self.panels + 1)
        x, w = np.polynomial.legendre.leggauss(self.nodes_per_panel)
        a, b = edges[:-1, None], edges[1:, None]
        r = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
        wr = (0.5 * (b - a) * w).ravel()
        return r, wr


@dataclass
class GeneratorValue:
    value: np.ndarray
    truncation_error: np.ndarray


def _direction_pairs(omega: SpectralMeasure, n_sphere: int):
    """Directions (one per +/- pair) and pair weights for the sphere rule."""
    if isinstance(omega, Atomic) or (isinstance(omega, Isotropic) and omega.dim == 1):
        return omega.atomic_pairs()
    if isinstance(omega, Isotropic) and omega.dim == 2:
        th = np.pi * np.arange(n_sphere // 2) / (n_sphere // 2)
        dirs = np.column_stack([np.cos(th), np.sin(th)])
        g = np.ones(th.size) if omega.is_uniform else omega._g(th)
        return dirs, omega.mass * g / g.sum()
    dirs = _sphere_directions(omega.dim, n_sphere)
    return dirs, np.full(n_sphere, omega.total_mass / n_sphere)


def apply_generator(spec: CoefficientSpec, params: StableParams, omega: SpectralMeasure, t: float, x,
                    mu: EmpiricalMeasure | None, phi, grad_phi=None,
                    quad: GeneratorQuadrature = GeneratorQuadrature(), chunk: int = 256) -> GeneratorValue:
    """Generator of the linearized dynamics applied to ``phi`` at points ``x``.

    ``<b, grad phi> + sum_pairs c/2 int [phi(x + r s xi) + phi(x - r s xi) - 2 phi(x)] r^(-1-alpha) dr``
    where ``s = sigma(t, x, mu)``.  Pairing the +/- nodes removes the odd part
    so no compensator is needed.  The radial integral is truncated to
    ``[r_min, r_max]`` with analytic corrections for both ends; the returned
    error estimate covers the next-order term near 0 and the far-field term.
    """
    alpha, d = params.alpha, params.dim
    X = np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, d)
    vals = eval_functionals(spec, mu, X)
    b = eval_drift(spec, t, X, values=vals)
    S = eval_diffusion(spec, t, X, values=vals)
    if grad_phi is None:
        if np.any(b != 0):
            h = 1e-6
            E = np.eye(d) * h
            grad = np.stack([(phi(X + e) - phi(X - e)) / (2 * h) for e in E], axis=1)
        else:
            grad = np.zeros_like(X)
    else:
        grad = np.asarray(grad_phi(X), dtype=float).reshape(X.shape)
    r, wr = quad.radial()
    wr = wr * r ** (-1.0 - alpha)
    dirs, pw = _direction_pairs(omega, quad.sphere_points)
    out = np.einsum("ni,ni->n", b, grad)
    err = np.zeros(X.shape[0])
    for c0 in range(0, X.shape[0], chunk):
        xs = X[c0:c0 + chunk]
        n = xs.shape[0]
        jump = np.einsum("nij,pj->npi", S[c0:c0 + chunk], dirs)  # (n, P, d)
        f0 = np.asarray(phi(xs), dtype=float)
        disp = r[None, None, :, None] * jump[:, :, None, :]      # (n, P, R, d)
        plus = np.asarray(phi((xs[:, None, None, :] + disp).reshape(-1, d)), dtype=float).reshape(n, -1, r.size)
        minus = np.asarray(phi((xs[:, None, None, :] - disp).reshape(-1, d)), dtype=float).reshape(n, -1, r.size)
        g = plus + minus - 2.0 * f0[:, None, None]
        body = 0.5 * (g @ wr) @ pw
        # (0, r_min): g ~ quadratic in r; (r_max, inf): phi(x +- r s xi) averages to its far mean
        small = 0.5 * (g[:, :, 0] / r[0] ** 2 * r[0] ** (2 - alpha) / (2 - alpha)) @ pw
        far = 0.5 * (g[:, :, -quad.nodes_per_panel:].mean(axis=2) * quad.r_max ** (-alpha) / alpha) @ pw
        # next Taylor order of g near 0 bounds what the quadratic correction misses
        c4 = (g[:, :, 1] / r[1] ** 2 - g[:, :, 0] / r[0] ** 2) / (r[1] ** 2 - r[0] ** 2)
        miss = 0.5 * np.abs(c4) * r[0] ** (4 - alpha) / (4 - alpha) @ pw
        out[c0:c0 + chunk] += body + small + far
        err[c0:c0 + chunk] = miss + np.abs(far)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("generator quadrature produced non-finite values")
    return GeneratorValue(out, err)
