"""Holder-dual distances between empirical measures.

``d_beta(mu, nu) = sup { int f d(mu - nu) : |f|_inf + [f]_beta <= 1 }``

On finitely supported measures the supremum is a finite linear program over
the values of ``f`` on the joint support (a function on a finite set extends
to R^d with the same sup norm and Holder seminorm, by McShane extension and
truncation), so :func:`dbeta_exact` is exact up to LP tolerance.  The
transport bound ``d_beta <= 2 W~_beta`` with cost ``|x - y|**beta ^ 1`` gives
certified upper brackets when the LP is too large.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.spatial.distance import cdist

from ._rng import as_generator

__all__ = [
    "EmpiricalMeasure",
    "MeasureFlow",
    "DistanceEstimate",
    "FlowDistance",
    "SupportTooLargeError",
    "GridMismatchError",
    "TestFamily",
    "joint_support",
    "holder_norm_on_points",
    "dbeta_exact",
    "wtilde_beta",
    "transport_cost_exact",
    "dbeta_bracket",
    "paired_upper",
    "dual_lower",
    "flow_distance",
    "append_estimates_csv",
]

LP_CAP = 2000
WTILDE_EXACT_CAP = 512


class SupportTooLargeError(ValueError):
    """Joint support exceeds the LP cap; use :func:`dbeta_bracket` instead."""


class GridMismatchError(ValueError):
    pass


@dataclass(eq=False)
class EmpiricalMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``; duplicates allowed."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0] or pts.shape[0] == 0:
            raise ValueError("need one weight per point and at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        self.points = pts
        self.weights = w

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.ones(1))

    @classmethod
    def from_weights(cls, points, weights) -> "EmpiricalMeasure":
        """Normalize nonnegative ``weights`` to a probability vector."""
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def same_as(self, other: "EmpiricalMeasure") -> bool:
        """Identical atoms and weights in the same order."""
        return (self.points.shape == other.points.shape and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def integrate(self, f) -> float:
        """``int f dmu`` for a vectorized ``f: (n, d) -> (n,)``."""
        return float(self.weights @ np.asarray(f(self.points), dtype=float))

    def mix(self, other: "EmpiricalMeasure", eps: float) -> "EmpiricalMeasure":
        """``(1 - eps) * self + eps * other``."""
        w = np.concatenate([(1.0 - eps) * self.weights, eps * other.weights])
        w = w / w.sum()
        return EmpiricalMeasure(np.vstack([self.points, other.points]), w)

    # -- columnar text format: d coordinates followed by the weight ---------
    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# empirical-measure dim={self.dim} n={self.n}\n")
        for x, w in zip(self.points, self.weights):
            buf.write(" ".join(repr(float(v)) for v in x) + " " + repr(float(w)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EmpiricalMeasure":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        arr = np.array(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ValueError("each row needs at least one coordinate and a weight")
        return cls(arr[:, :-1], arr[:, -1])

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "EmpiricalMeasure":
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass(eq=False)
class MeasureFlow:
    """Marginals of a measure-valued flow on a strictly increasing time grid."""

    grid: np.ndarray
    marginals: list
    initial_fixed: bool = True

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float).ravel()
        if g.size < 1 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if len(self.marginals) != g.size:
            raise ValueError("need one marginal per grid node")
        for m in self.marginals:
            if not isinstance(m, EmpiricalMeasure):
                raise TypeError("marginals must be EmpiricalMeasure instances")
        self.grid = g

    @classmethod
    def constant(cls, mu: EmpiricalMeasure, grid) -> "MeasureFlow":
        g = np.asarray(grid, dtype=float)
        return cls(g, [mu] * g.size)

    def __len__(self):
        return self.grid.size

    def __getitem__(self, k) -> EmpiricalMeasure:
        return self.marginals[k]

    @property
    def initial(self) -> EmpiricalMeasure:
        return self.marginals[0]

    @property
    def terminal(self) -> EmpiricalMeasure:
        return self.marginals[-1]

    def restrict(self, stop: int) -> "MeasureFlow":
        """Nodes ``0 .. stop`` inclusive."""
        return MeasureFlow(self.grid[: stop + 1], self.marginals[: stop + 1], self.initial_fixed)

    def node_index(self, t: float) -> int:
        """Index of the last node ``<= t`` (piecewise constant from the left)."""
        k = int(np.searchsorted(self.grid, t, side="right") - 1)
        return min(max(k, 0), self.grid.size - 1)

    def at(self, t: float) -> EmpiricalMeasure:
        return self.marginals[self.node_index(t)]


@dataclass
class DistanceEstimate:
    beta: float
    lower: float
    upper: float
    exact: float | None = None

    def __post_init__(self):
        if self.exact is not None and not (
            self.lower - 1e-9 <= self.exact <= self.upper + 1e-9
        ):
            raise ValueError(f"inconsistent bracket {self}")


@dataclass
class FlowDistance:
    """Sup over grid nodes of a per-node distance."""

    value: float
    per_node: np.ndarray
    method: str
    certified_upper: bool = False
    lower_bound: bool = False

    @property
    def running(self) -> np.ndarray:
        """``d_{beta, t_0, t_j}`` for each terminal node ``j`` (nondecreasing)."""
        return np.maximum.accumulate(self.per_node)


def _check_beta(beta):
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")


def joint_support(mu: EmpiricalMeasure, nu: EmpiricalMeasure, drop_zero: bool = True):
    """Union of supports with the signed weights of ``mu - nu``."""
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    pts = np.vstack([mu.points, nu.points])
    w = np.concatenate([mu.weights, -nu.weights])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    net = np.bincount(inv.ravel(), weights=w, minlength=uniq.shape[0])
    if drop_zero:
        keep = np.abs(net) > 0.0
        uniq, net = uniq[keep], net[keep]
    return uniq, net


def holder_norm_on_points(values, points, beta, chunk: int = 2048) -> float:
    """``max |f| + max_{i != j} |f_i - f_j| / |z_i - z_j|**beta`` on a finite set."""
    f = np.asarray(values, dtype=float)
    z = np.asarray(points, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    semi = 0.0
    for s in range(0, f.size, chunk):
        dist = cdist(z[s:s + chunk], z) ** beta
        diff = np.abs(f[s:s + chunk, None] - f[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(dist > 0, diff / dist, 0.0)
        semi = max(semi, float(r.max(initial=0.0)))
    return float(np.abs(f).max(initial=0.0)) + semi


def _lp_holder_dual(z, w, beta, max_rounds=100, tol=1e-10):
    """Maximize ``w . f`` with ``|f| <= u``, ``|f_i - f_j| <= v D_ij``, ``u + v <= 1``.

    Pairwise constraints are generated lazily: start from nearest neighbours,
    add violated pairs until none remain.
    """
    n = z.shape[0]
    D = cdist(z, z) ** beta
    k = min(n - 1, 8)
    order = np.argsort(D, axis=1)[:, 1:k + 1]
    pairs = {(min(i, j), max(i, j)) for i in range(n) for j in order[i]}
    c = np.concatenate([-w, [0.0, 0.0]])
    iu, iv = n, n + 1
    # box rows: f_i - u <= 0, -f_i - u <= 0, plus u + v <= 1
    rows_box = sparse.vstack([
        sparse.hstack([sparse.eye(n), -sparse.csr_matrix(np.ones((n, 1))), sparse.csr_matrix((n, 1))]),
        sparse.hstack([-sparse.eye(n), -sparse.csr_matrix(np.ones((n, 1))), sparse.csr_matrix((n, 1))]),
        sparse.csr_matrix(np.concatenate([np.zeros(n), [1.0, 1.0]])[None, :]),
    ])
    b_box = np.concatenate([np.zeros(2 * n), [1.0]])
    bounds = [(None, None)] * n + [(0, None), (0, None)]
    res = None
    for _ in range(max_rounds):
        P = np.array(sorted(pairs))
        m = P.shape[0]
        r = np.arange(m)
        dvals = D[P[:, 0], P[:, 1]]
        # f_i - f_j - v D_ij <= 0 and f_j - f_i - v D_ij <= 0
        data = np.concatenate([np.ones(m), -np.ones(m), -dvals])
        rr = np.concatenate([r, r, r])
        cc = np.concatenate([P[:, 0], P[:, 1], np.full(m, iv)])
        A1 = sparse.csr_matrix((data, (rr, cc)), shape=(m, n + 2))
        data2 = np.concatenate([-np.ones(m), np.ones(m), -dvals])
        A2 = sparse.csr_matrix((data2, (rr, cc)), shape=(m, n + 2))
        A = sparse.vstack([rows_box, A1, A2]).tocsr()
        b = np.concatenate([b_box, np.zeros(2 * m)])
        res = optimize.linprog(
            c, A_ub=A, b_ub=b, bounds=bounds, method="highs",
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            raise RuntimeError(f"LP solver failed: {res.message}")
        f, v = res.x[:n], res.x[iv]
        viol = np.abs(f[:, None] - f[None, :]) - v * D
        np.fill_diagonal(viol, -np.inf)
        bad = np.argwhere(np.triu(viol) > tol)
        bad = [(int(i), int(j)) for i, j in bad if (int(i), int(j)) not in pairs]
        if not bad:
            break
        if len(bad) > 5 * n:
            worst = np.argsort([-viol[i, j] for i, j in bad])[: 5 * n]
            bad = [bad[t] for t in worst]
        pairs.update(bad)
    else:  # pragma: no cover
        raise RuntimeError("constraint generation did not terminate")
    return -res.fun, res.x[:n], res.x[iu], res.x[iv]


def dbeta_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure, beta: float, cap: int = LP_CAP,
                return_witness: bool = False):
    """Exact ``d_beta(mu, nu)`` by linear programming on the joint support."""
    _check_beta(beta)
    z, w = joint_support(mu, nu)
    n = z.shape[0]
    if n > cap:
        raise SupportTooLargeError(
            f"joint support has {n} points > cap {cap}; use dbeta_bracket for bounds"
        )
    if n <= 1:
        val, f, u, v = 0.0, np.zeros(n), 0.0, 0.0
    else:
        val, f, u, v = _lp_holder_dual(z, w, beta)
        val = max(val, 0.0)
    if return_witness:
        return val, {"points": z, "values": f, "sup": u, "seminorm": v}
    return val


def _cost(x, y, beta):
    return np.minimum(cdist(x, y) ** beta, 1.0)


def transport_cost_exact(a, b, C) -> float:
    """Exact optimal transport value for marginals ``a``, ``b`` and cost ``C``."""
    n, m = C.shape
    if n == m and np.all(a == a[0]) and np.all(b == b[0]):
        r, c = optimize.linear_sum_assignment(C)
        return float(C[r, c].sum() / n)
    rows = []
    for i in range(n):
        rows.append(sparse.csr_matrix((np.ones(m), (np.zeros(m, int), i * m + np.arange(m))), shape=(1, n * m)))
    for j in range(m):
        rows.append(sparse.csr_matrix((np.ones(n), (np.zeros(n, int), np.arange(n) * m + j)), shape=(1, n * m)))
    A = sparse.vstack(rows).tocsr()
    res = optimize.linprog(
        C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _round_plan(P, a, b):
    """Project an approximate plan onto the transport polytope (Altschuler et al.)."""
    r = P.sum(axis=1)
    P = P * np.minimum(1.0, a / np.where(r > 0, r, 1.0))[:, None]
    c = P.sum(axis=0)
    P = P * np.minimum(1.0, b / np.where(c > 0, c, 1.0))[None, :]
    ea = a - P.sum(axis=1)
    eb = b - P.sum(axis=0)
    s = ea.sum()
    if s > 0:
        P = P + np.outer(ea, eb) / s
    return P


def _sinkhorn_upper(a, b, C, eps_final=1e-3, n_iter=60):
    from scipy.special import logsumexp

    la, lb = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    for eps in np.geomspace(max(C.max(), 1e-3), eps_final, 8):
        for _ in range(n_iter):
            f = eps * (la - logsumexp((g[None, :] - C) / eps, axis=1))
            g = eps * (lb - logsumexp((f[:, None] - C) / eps, axis=0))
    P = np.exp((f[:, None] + g[None, :] - C) / eps_final)
    P = _round_plan(P, a, b)
    return float(np.sum(P * C))


def _sorted_coupling_upper(x, a, y, b, beta):
    """Cost of the monotone coupling along the first principal axis (a feasible plan)."""
    z = np.vstack([x, y])
    z = z - z.mean(axis=0)
    axis = np.linalg.svd(z, full_matrices=False)[2][0] if z.shape[1] > 1 else np.ones(1)
    ix = np.argsort(x @ axis, kind="stable")
    iy = np.argsort(y @ axis, kind="stable")
    ca, cb = np.cumsum(a[ix]), np.cumsum(b[iy])
    cuts = np.unique(np.concatenate([[0.0], ca, cb]))
    cuts = cuts[cuts <= 1.0]
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    mass = np.diff(cuts)
    i = np.minimum(np.searchsorted(ca, mids), len(ix) - 1)
    j = np.minimum(np.searchsorted(cb, mids), len(iy) - 1)
    d = np.minimum(np.linalg.norm(x[ix[i]] - y[iy[j]], axis=1) ** beta, 1.0)
    return float(np.sum(mass * d))


def wtilde_beta(mu: EmpiricalMeasure, nu: EmpiricalMeasure, beta: float,
                exact_cap: int = WTILDE_EXACT_CAP, dense_cap: int = 25_000_000,
                assignment_cap: int = 4000) -> float:
    """Optimal transport value for the cost ``|x - y|**beta ^ 1``.

    Exact for at most ``exact_cap`` support points in total (or up to
    ``assignment_cap`` points each for equal-size uniform clouds); otherwise the
    transport cost of a feasible plan (rounded entropic plan, or a sorted
    coupling when the cost matrix is too large), hence an upper bound.
    """
    _check_beta(beta)
    x, a = mu.points, mu.weights
    y, b = nu.points, nu.weights
    if mu.n == nu.n and mu.is_uniform and nu.is_uniform and mu.n <= assignment_cap:
        return transport_cost_exact(a, b, _cost(x, y, beta))
    if mu.n + nu.n <= exact_cap:
        return transport_cost_exact(a, b, _cost(x, y, beta))
    if mu.n * nu.n <= dense_cap:
        return _sinkhorn_upper(a, b, _cost(x, y, beta))
    return _sorted_coupling_upper(x, a, y, b, beta)


def _candidate_functions(z, w, beta, effort, rng):
    """Values on ``z`` of trial test functions for the lower bracket."""
    n = z.shape[0]
    yield np.sign(w)
    dist = cdist(z, z)
    scales = dist[np.triu_indices(n, 1)] if n > 1 else np.ones(1)
    scales = scales[scales > 0]
    if scales.size == 0:
        return
    lo, hi = np.quantile(scales, 0.02), np.quantile(scales, 0.98)
    for k in range(effort):
        ell = np.exp(rng.uniform(np.log(lo), np.log(hi))) if hi > lo else hi
        if k % 2 == 0:
            # kernel-smoothed signed measure (witness-type function)
            f = np.exp(-0.5 * (dist / ell) ** 2) @ w
        else:
            centers = rng.choice(n, size=min(n, 1 + rng.integers(1, 6)), replace=False)
            amp = rng.normal(size=centers.size)
            f = np.exp(-0.5 * (dist[:, centers] / ell) ** 2) @ amp
        yield f
        m = np.abs(f).max()
        if m > 0:
            yield np.clip(f, -rng.uniform(0.1, 1.0) * m, rng.uniform(0.1, 1.0) * m)


def dbeta_bracket(mu: EmpiricalMeasure, nu: EmpiricalMeasure, beta: float, effort: int = 16,
                  rng=None, exact_cap: int = 300) -> DistanceEstimate:
    """Lower/upper bracket (and exact value on small supports) of ``d_beta``.

    The lower bracket is the best objective over ``effort`` randomized test
    functions, each normalized by its discrete Holder norm on the joint
    support; the upper bracket is ``2 * wtilde_beta``.
    """
    _check_beta(beta)
    if effort < 1:
        raise ValueError("effort must be >= 1")
    rng = as_generator(0 if rng is None else rng)
    z, w = joint_support(mu, nu)
    if z.shape[0] == 0:
        return DistanceEstimate(beta, 0.0, 0.0, 0.0)
    best = 0.0
    for f in _candidate_functions(z, w, beta, effort, rng):
        nrm = holder_norm_on_points(f, z, beta)
        if nrm > 0:
            best = max(best, abs(float(w @ f)) / nrm)
    upper = 2.0 * wtilde_beta(mu, nu, beta)
    exact = dbeta_exact(mu, nu, beta) if z.shape[0] <= exact_cap else None
    if exact is not None:
        best = min(best, exact)
        upper = max(upper, exact)
    return DistanceEstimate(beta, best, upper, exact)


def paired_upper(mu: EmpiricalMeasure, nu: EmpiricalMeasure, beta: float) -> float:
    """``2 sum_i w_i c_beta(x_i, y_i)`` for index-paired clouds with equal weights.

    The index pairing is a transport plan, so this certifies an upper bound
    on ``d_beta``; under common random numbers it is the natural distance
    between paired particle systems.
    """
    _check_beta(beta)
    if mu.n != nu.n or not np.array_equal(mu.weights, nu.weights):
        raise ValueError("paired distance needs clouds of equal size and identical weights")
    c = np.minimum(np.linalg.norm(mu.points - nu.points, axis=1) ** beta, 1.0)
    return float(2.0 * mu.weights @ c)


@dataclass
class TestFamily:
    """Fixed finite family of smooth test functions with ``||f||_{C^beta} <= 1``.

    Norms are certified with ``[f]_beta <= L**beta (2 S)**(1 - beta)`` for a
    function with sup norm ``S`` and Lipschitz constant ``L``.
    """

    beta: float
    dim: int
    frequencies: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)
    ramp_dirs: np.ndarray = field(repr=False)
    ramp_centers: np.ndarray = field(repr=False)
    ramp_scales: np.ndarray = field(repr=False)

    @staticmethod
    def _norm(sup, lip, beta):
        return sup + lip**beta * (2.0 * sup) ** (1.0 - beta)

    @classmethod
    def from_reference(cls, points, beta: float, n_freq: int = 12, n_ramps: int = 24) -> "TestFamily":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        d = pts.shape[1]
        spread = np.quantile(pts, 0.9, axis=0) - np.quantile(pts, 0.1, axis=0)
        scale = float(max(np.max(spread), 1e-3))
        ks = np.geomspace(0.25 / scale, 16.0 / scale, n_freq)
        if d == 1:
            freq = ks[:, None]
            rdirs = np.ones((1, 1))
        else:
            angles = np.linspace(0, np.pi, 4, endpoint=False)
            base = np.column_stack([np.cos(angles), np.sin(angles)] + [np.zeros(4)] * (d - 2))
            freq = (ks[:, None, None] * base[None]).reshape(-1, d)
            rdirs = base
        phases = np.array([0.0, np.pi / 2])
        qs = np.linspace(0.05, 0.95, max(2, n_ramps // 4))
        centers = []
        for u in rdirs:
            proj = pts @ u
            centers.append(np.quantile(proj, qs))
        centers = np.array(centers)
        rscales = scale * np.array([0.05, 0.2, 0.5, 2.0])
        return cls(beta, d, freq, phases, rdirs, centers, rscales)

    def evaluate(self, points) -> np.ndarray:
        """Matrix ``F[k, i] = f_k(x_i)`` with every row normalized in ``C^beta``."""
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        b = self.beta
        out = []
        proj = x @ self.frequencies.T  # (n, K)
        kn = np.linalg.norm(self.frequencies, axis=1)
        for ph in self.phases:
            out.append((np.sin(proj + ph) / self._norm(1.0, kn, b)[None, :]).T)
        for u, cs in zip(self.ramp_dirs, self.ramp_centers):
            p = x @ u
            for ell in self.ramp_scales:
                vals = np.tanh((p[None, :] - cs[:, None]) / ell)
                out.append(vals / self._norm(1.0, 1.0 / ell, b))
        return np.vstack(out)

    def integrals(self, mu: EmpiricalMeasure) -> np.ndarray:
        return self.evaluate(mu.points) @ mu.weights


def dual_lower(mu: EmpiricalMeasure, nu: EmpiricalMeasure, beta: float,
               family: TestFamily | None = None) -> float:
    """``max_f |int f d(mu - nu)|`` over a fixed smooth test family (lower bound of ``d_beta``)."""
    _check_beta(beta)
    if family is None:
        family = TestFamily.from_reference(np.vstack([mu.points, nu.points]), beta)
    return float(np.max(np.abs(family.integrals(mu) - family.integrals(nu))))


def flow_distance(P: MeasureFlow, Q: MeasureFlow, beta: float, method: str = "exact",
                  cap: int = LP_CAP, family: TestFamily | None = None, workers: int = 1) -> FlowDistance:
    """``sup_k d_beta(P(t_k), Q(t_k))`` over the grid nodes.

    ``method``: ``"exact"`` (LP; falls back to the certified ``2 W~`` upper
    bracket on nodes whose support exceeds ``cap``), ``"paired"`` (index
    coupling, certified upper bound), ``"dual"`` (fixed test family, lower
    bound).
    """
    _check_beta(beta)
    if P.grid.shape != Q.grid.shape or not np.array_equal(P.grid, Q.grid):
        raise GridMismatchError("flows are defined on different grids")
    if method == "dual" and family is None:
        family = TestFamily.from_reference(np.vstack([P.terminal.points, Q.terminal.points]), beta)
    flagged = False

    def node(k):
        nonlocal flagged
        a, b = P[k], Q[k]
        if a is b or a.same_as(b):
            return 0.0
        if method == "paired":
            return paired_upper(a, b, beta)
        if method == "dual":
            return dual_lower(a, b, beta, family)
        if method == "exact":
            try:
                return dbeta_exact(a, b, beta, cap=cap)
            except SupportTooLargeError:
                flagged = True
                return 2.0 * wtilde_beta(a, b, beta)
        raise ValueError(f"unknown method {method!r}")

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            per = np.array(list(ex.map(node, range(len(P)))))
    else:
        per = np.array([node(k) for k in range(len(P))])
    return FlowDistance(
        float(per.max()), per, method,
        certified_upper=(method == "paired") or flagged,
        lower_bound=(method == "dual"),
    )


def append_estimates_csv(path, estimates, labels=None):
    """Append DistanceEstimate rows (header written for a new file)."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if new:
            wr.writerow(["label", "beta", "exact", "lower", "upper"])
        for i, e in enumerate(estimates):
            lab = labels[i] if labels is not None else str(i)
            wr.writerow([lab, repr(e.beta), "" if e.exact is None else repr(e.exact), repr(e.lower), repr(e.upper)])
