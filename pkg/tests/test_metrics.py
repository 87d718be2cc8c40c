import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablemkv import metrics
from stablemkv.metrics import (
    EmpiricalMeasure, MeasureFlow, SupportTooLargeError, dbeta_bracket, dbeta_exact, dual_lower,
    flow_distance, paired_upper, transport_cost_exact, wtilde_beta,
)


def random_measure(rng, n=None, dim=1, spread=2.0):
    n = int(rng.integers(1, 6)) if n is None else n
    return EmpiricalMeasure.from_weights(rng.normal(scale=spread, size=(n, dim)), rng.uniform(0.1, 1.0, n))


def grid_search_two_atoms(r):
    # maximize min(2u, v r) subject to u + v <= 1 over a fine grid
    u = np.linspace(0, 1, 200_001)
    return float(np.max(np.minimum(2 * u, (1 - u) * r)))


def brute_force_uniform_ot(x, y, beta):
    n = len(x)
    C = np.minimum(np.abs(x[:, None] - y[None, :]) ** beta, 1.0)
    return min(C[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))


def test_identical_measures_distance_zero(rng):
    m = random_measure(rng, 5)
    assert dbeta_exact(m, m, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert wtilde_beta(m, m, 0.5) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("y,beta", [(1.0, 1.0), (0.3, 0.5), (-2.5, 0.7), (10.0, 0.2)])
def test_two_diracs_match_grid_search(y, beta):
    r = abs(y) ** beta
    v = dbeta_exact(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([y]), beta)
    assert v == pytest.approx(2 * r / (2 + r), abs=1e-10)
    assert v == pytest.approx(grid_search_two_atoms(r), abs=1e-4)


def test_two_diracs_unit_distance():
    assert dbeta_exact(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0]), 1.0) == pytest.approx(2 / 3)


def test_far_diracs_saturate():
    v = dbeta_exact(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1e8]), 0.5)
    assert 2 - v < 1e-3


def test_witness_is_feasible(rng):
    mu, nu = random_measure(rng, 6), random_measure(rng, 4)
    v, wit = dbeta_exact(mu, nu, 0.6, return_witness=True)
    f, z = wit["values"], wit["points"]
    w = np.concatenate([mu.weights, -nu.weights])
    pts = np.vstack([mu.points, nu.points])
    # evaluate witness on each atom through the joint support
    idx = [int(np.argmin(np.linalg.norm(z - p, axis=1))) for p in pts]
    assert w @ f[idx] == pytest.approx(v, abs=1e-9)
    assert metrics.holder_norm_on_points(f, z, 0.6) <= 1 + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), beta=st.floats(0.1, 1.0))
def test_metric_axioms(seed, beta):
    g = np.random.default_rng(seed)
    a, b, c = (random_measure(g) for _ in range(3))
    ab, ba = dbeta_exact(a, b, beta), dbeta_exact(b, a, beta)
    bc, ac = dbeta_exact(b, c, beta), dbeta_exact(a, c, beta)
    assert ab >= -1e-12 and abs(ab - ba) < 1e-9
    assert ac <= ab + bc + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), beta=st.floats(0.1, 1.0))
def test_sandwich(seed, beta):
    g = np.random.default_rng(seed)
    a, b = random_measure(g), random_measure(g)
    assert dbeta_exact(a, b, beta) <= 2 * wtilde_beta(a, b, beta) + 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eta=st.sampled_from([0.2, 0.35, 0.5]))
def test_monotone_in_exponent_unit_diameter(seed, eta):
    # every pair at distance <= 1 has |x-y|^(2 eta) <= |x-y|^eta, so the unit balls are nested
    g = np.random.default_rng(seed)
    a = EmpiricalMeasure.from_weights(g.uniform(0, 1, (4, 1)), g.uniform(0.1, 1, 4))
    b = EmpiricalMeasure.from_weights(g.uniform(0, 1, (3, 1)), g.uniform(0.1, 1, 3))
    assert dbeta_exact(a, b, 2 * eta) <= dbeta_exact(a, b, eta) + 1e-9


def test_monotone_in_exponent_fails_beyond_unit_distance():
    # two Diracs four apart: 2r/(2+r) grows with r = 4^beta
    a, b = EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([4.0])
    assert dbeta_exact(a, b, 1.0) == pytest.approx(4 / 3)
    assert dbeta_exact(a, b, 0.5) == pytest.approx(1.0)


def test_wtilde_unit_dirac_pair():
    assert wtilde_beta(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0]), 0.5) == pytest.approx(1.0)


def test_wtilde_matches_permutations_on_subinstances(rng):
    X, Y = rng.normal(size=50), rng.normal(size=50)
    for _ in range(25):
        i, j = rng.choice(50, 4, replace=False), rng.choice(50, 4, replace=False)
        x, y = X[i], Y[j]
        v = wtilde_beta(EmpiricalMeasure.uniform(x[:, None]), EmpiricalMeasure.uniform(y[:, None]), 0.7)
        assert v == pytest.approx(brute_force_uniform_ot(x, y, 0.7), abs=1e-10)


def test_transport_two_by_two_closed_form(rng):
    # 2x2 plans form a one-parameter segment; the optimum sits at an endpoint
    a, b = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    C = rng.uniform(size=(2, 2))
    lo, hi = max(0.0, a[0] - b[1]), min(a[0], b[0])
    vals = [C[0, 0] * p + C[0, 1] * (a[0] - p) + C[1, 0] * (b[0] - p) + C[1, 1] * (b[1] - a[0] + p)
            for p in (lo, hi)]
    assert transport_cost_exact(a, b, C) == pytest.approx(min(vals), abs=1e-12)


def test_entropic_path_is_tight_upper_bound():
    g = np.random.default_rng(1)
    mu = EmpiricalMeasure.uniform(g.normal(size=(300, 1)))
    nu = EmpiricalMeasure.uniform(g.normal(size=(280, 1)) + 0.5)
    exact = wtilde_beta(mu, nu, 0.7, exact_cap=10**6)
    approx = wtilde_beta(mu, nu, 0.7, exact_cap=0)
    assert exact <= approx <= 1.01 * exact


def test_bracket_identical_is_zero(rng):
    m = random_measure(rng, 4)
    est = dbeta_bracket(m, m, 0.5)
    assert est.lower == pytest.approx(0.0, abs=1e-12) and est.upper == pytest.approx(0.0, abs=1e-12)


def test_bracket_unit_diracs():
    est = dbeta_bracket(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([1.0]), 1.0)
    assert est.lower <= 2 / 3 + 1e-12 and est.upper == pytest.approx(2.0)


def test_bracket_contains_exact(rng):
    for _ in range(100):
        a, b = random_measure(rng), random_measure(rng)
        beta = rng.uniform(0.1, 1.0)
        est = dbeta_bracket(a, b, beta, rng=rng)
        v = dbeta_exact(a, b, beta)
        assert est.lower - 1e-9 <= v <= est.upper + 1e-9


def test_cap_enforced(rng):
    big = EmpiricalMeasure.uniform(rng.normal(size=(30, 1)))
    with pytest.raises(SupportTooLargeError):
        dbeta_exact(big, EmpiricalMeasure.dirac([0.0]), 0.5, cap=10)


def test_paired_and_dual_bound_exact(rng):
    x = rng.normal(size=(40, 1))
    y = x + rng.normal(scale=0.3, size=(40, 1))
    mu, nu = EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y)
    v = dbeta_exact(mu, nu, 0.5)
    assert dual_lower(mu, nu, 0.5) <= v + 1e-9 <= paired_upper(mu, nu, 0.5) + 2e-9


def test_weak_convergence_trend():
    g = np.random.default_rng(7)
    vals = []
    for n in (20, 80, 320):
        a = EmpiricalMeasure.uniform(g.normal(size=(n, 1)))
        b = EmpiricalMeasure.uniform(g.normal(size=(2 * n, 1)))
        vals.append(dbeta_exact(a, b, 0.5))
    assert vals[0] > vals[1] > vals[2]


def _flows(rng, K=5):
    grid = np.linspace(0, 1, K)
    mu = random_measure(rng, 3)
    P = MeasureFlow(grid, [mu] + [random_measure(rng, 4) for _ in range(K - 1)])
    Q = MeasureFlow(grid, [mu] + [random_measure(rng, 4) for _ in range(K - 1)])
    return P, Q


def test_flow_distance_identical(rng):
    P, _ = _flows(rng)
    assert flow_distance(P, P, 0.5).value == 0.0


def test_flow_distance_differs_at_last_node(rng):
    P, _ = _flows(rng)
    other = random_measure(rng, 3)
    Q = MeasureFlow(P.grid, list(P.marginals[:-1]) + [other])
    assert flow_distance(P, Q, 0.5).value == pytest.approx(dbeta_exact(P.terminal, other, 0.5), abs=1e-12)


def test_flow_distance_restriction_monotone(rng):
    for _ in range(10):
        P, Q = _flows(rng)
        full = flow_distance(P, Q, 0.4)
        parts = [flow_distance(P.restrict(j), Q.restrict(j), 0.4).value for j in range(1, len(P) + 1)]
        assert np.all(np.diff(parts) >= -1e-12)
        assert parts[-1] == pytest.approx(full.value)


def test_text_roundtrip(rng, tmp_path):
    m = random_measure(rng, 5, dim=2)
    m.save(tmp_path / "m.txt")
    back = EmpiricalMeasure.load(tmp_path / "m.txt")
    assert np.array_equal(back.points, m.points) and np.array_equal(back.weights, m.weights)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]))
