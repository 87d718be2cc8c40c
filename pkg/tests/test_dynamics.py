import numpy as np
import pytest
from scipy import stats

from stablemkv._rng import Streams
from stablemkv.coefficients import build_family
from stablemkv.dynamics import (
    GeneratorQuadrature, NoiseTape, apply_generator, frozen_mean, initial_particles, simulate_linear,
    solve_frozen_flow,
)
from stablemkv.metrics import EmpiricalMeasure, MeasureFlow
from stablemkv.noise import Isotropic, StableParams, characteristic_exponent

from conftest import ecf_check, half_axis

P15 = StableParams(1.5, 1)
ZERO = build_family("zero")
DELTA0 = EmpiricalMeasure.dirac([0.0])


def _const_flow(T=1.0, K=8, mu=DELTA0):
    return MeasureFlow.constant(mu, np.linspace(0, T, K + 1))


def test_one_step_marginal_ecf():
    Q = _const_flow(0.25, 1)
    ens = simulate_linear(ZERO, P15, half_axis(), Q, DELTA0, n_particles=100_000, rng=1, antithetic=False)
    probes = np.linspace(0.2, 3.0, 10)[:, None]
    psi = characteristic_exponent(P15, half_axis(), probes)
    assert all(ecf_check(ens.states, probes, psi, 0.25))


def test_step_refinement_same_law():
    a = simulate_linear(ZERO, P15, half_axis(), _const_flow(1.0, 1), DELTA0, 40_000, rng=2).states[:, 0]
    b = simulate_linear(ZERO, P15, half_axis(), _const_flow(1.0, 8), DELTA0, 40_000, rng=3).states[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_replay_bitwise():
    Q = _const_flow()
    tape = NoiseTape.generate(P15, half_axis(), Q.grid, 500, rng=4)
    x0 = initial_particles(DELTA0, 500, rng=5)
    spec = build_family("kuramoto")
    mu = EmpiricalMeasure.uniform(np.linspace(-1, 1, 7)[:, None])
    Qm = _const_flow(mu=mu)
    a = simulate_linear(spec, P15, half_axis(), Qm, mu, tape=tape, x0=x0)
    b = simulate_linear(spec, P15, half_axis(), Qm, mu, tape=tape, x0=x0)
    assert np.array_equal(a.paths, b.paths)


def test_tape_roundtrip_and_threads(tmp_path):
    g = np.linspace(0, 1, 5)
    one = NoiseTape.generate(StableParams(1.2, 2), Isotropic(2), g, 2500, rng=Streams(9), threads=1)
    many = NoiseTape.generate(StableParams(1.2, 2), Isotropic(2), g, 2500, rng=Streams(9), threads=4)
    assert np.array_equal(one.increments, many.increments)
    one.save(tmp_path / "t.bin")
    back = NoiseTape.load(tmp_path / "t.bin")
    assert np.array_equal(back.increments, one.increments) and np.array_equal(back.grid, g)


def test_antithetic_blocks_have_zero_mean():
    tape = NoiseTape.generate(P15, half_axis(), np.linspace(0, 1, 3), 2048, rng=1)
    assert np.allclose(tape.increments[:, :1024].sum(axis=1), 0.0, atol=1e-9)


def test_initial_particles_pin_atoms():
    mu = EmpiricalMeasure.from_weights([[0.0], [5.0]], [1, 3])
    x = initial_particles(mu, 40_000, rng=0)
    assert set(np.unique(x)) <= {0.0, 5.0}
    assert np.mean(x == 5.0) == pytest.approx(0.75, abs=0.01)
    s = initial_particles(mu, 8, rng=0, method="stratified")
    assert np.sum(s == 5.0) == 6


def test_predictability_reads_only_past_nodes():
    spec = build_family("linear_mean")
    grid = np.linspace(0, 1, 9)
    mus = [EmpiricalMeasure.dirac([float(k)]) for k in range(9)]
    changed = mus[:5] + [EmpiricalMeasure.dirac([100.0])] * 4
    tape = NoiseTape.generate(P15, half_axis(), grid, 64, rng=1)
    a = simulate_linear(spec, P15, half_axis(), MeasureFlow(grid, mus), DELTA0, tape=tape, x0=np.zeros(64))
    b = simulate_linear(spec, P15, half_axis(), MeasureFlow(grid, changed), DELTA0, tape=tape, x0=np.zeros(64))
    # node 5 states depend on Q[0..4] only
    assert np.array_equal(a.paths[:6], b.paths[:6])
    assert not np.array_equal(a.paths[6], b.paths[6])


def test_common_noise_strong_trend():
    grid = np.linspace(0, 1, 17)
    tape = NoiseTape.generate(P15, half_axis(), grid, 2000, rng=3)
    Q = MeasureFlow.constant(DELTA0, grid)
    ref = simulate_linear(build_family("ou", rate=1.0), P15, half_axis(), Q, DELTA0, tape=tape).states
    gaps = [np.mean(np.abs(simulate_linear(build_family("ou", rate=r), P15, half_axis(), Q, DELTA0,
                                           tape=tape).states - ref)) for r in (2.0, 1.5, 1.1, 1.01)]
    assert np.all(np.diff(gaps) < 0)


def test_mean_absolute_value_bounded_under_refinement():
    vals = []
    for K in (8, 32):
        ens = simulate_linear(build_family("ou"), P15, half_axis(), _const_flow(1.0, K), DELTA0, 20_000, rng=K)
        vals.append(np.mean(np.abs(ens.paths), axis=(1, 2)).max())
    assert np.all(np.isfinite(vals)) and abs(vals[0] - vals[1]) < 0.1


def test_frozen_flow_zero_drift():
    f = solve_frozen_flow(ZERO, _const_flow(), 0.25, [1.5])
    assert np.all(f.values == 1.5)


def test_frozen_flow_constant_drift_exact():
    spec = build_family("constant", c=[2.0])
    f = solve_frozen_flow(spec, _const_flow(), 0.25, [1.0])
    s = f.grid
    assert np.allclose(f.values[:, 0], np.where(s <= 0.25, 1.0, 1.0 + 2.0 * (s - 0.25)), atol=1e-14)


def test_frozen_flow_euler_first_order():
    spec = build_family("ou")
    errs = []
    for K in (16, 32, 64, 128):
        f = solve_frozen_flow(spec, _const_flow(1.0, K), 0.0, [1.0])
        errs.append(abs(f.values[-1, 0] - np.exp(-1.0)))
    slope = np.polyfit(np.log([1 / 16, 1 / 32, 1 / 64, 1 / 128]), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_frozen_mean_cases():
    Q = _const_flow()
    spec = build_family("constant", c=[3.0])
    f = solve_frozen_flow(spec, Q, 0.0, [0.0])
    assert np.allclose(frozen_mean([0.7], 0.5, 0.5, f, spec, Q), [0.7])
    assert np.allclose(frozen_mean([0.7], 0.25, 0.75, f, spec, Q), [0.7 + 3.0 * 0.5])


def test_frozen_mean_equals_flow_on_shared_grid(rng):
    spec = build_family("kuramoto", coupling=2.0)
    mu = EmpiricalMeasure.uniform(rng.normal(size=(9, 1)))
    Q = _const_flow(1.0, 16, mu)
    for _ in range(5):
        tau = Q.grid[rng.integers(0, 8)]
        xi = rng.normal(size=1)
        f = solve_frozen_flow(spec, Q, tau, xi)
        s = Q.grid[rng.integers(9, 17)]
        assert np.allclose(frozen_mean(xi, tau, s, f, spec, Q), f.at(s), atol=1e-10)


def test_generator_kills_affine():
    v = apply_generator(ZERO, P15, half_axis(), 0.0, np.array([[0.3], [-1.0]]), None, lambda x: 2 * x[:, 0] + 1)
    assert np.allclose(v.value, 0.0, atol=1e-9)


@pytest.mark.parametrize("alpha", [0.8, 1.5])
def test_generator_on_cosine_is_exponent(alpha):
    p = StableParams(alpha, 1)
    z = 1.3
    v = apply_generator(ZERO, p, half_axis(), 0.0, np.zeros((1, 1)), None, lambda x: np.cos(z * x[:, 0]))
    psi = characteristic_exponent(p, half_axis(), np.array([[z]]))[0]
    assert v.value[0] == pytest.approx(psi, rel=1e-4)


def test_generator_isotropic_2d_cosine():
    p = StableParams(1.5, 2)
    z = np.array([0.6, -1.1])
    v = apply_generator(build_family("zero", dim=2), p, Isotropic(2), 0.0, np.zeros((1, 2)), None,
                        lambda x: np.cos(x @ z))
    assert v.value[0] == pytest.approx(characteristic_exponent(p, Isotropic(2), z[None])[0], rel=2e-3)


def test_martingale_problem():
    spec = build_family("ou")
    K, N = 32, 1000
    Q = _const_flow(0.5, K)
    ens = simulate_linear(spec, P15, half_axis(), Q, DELTA0, N, rng=11)
    phi = lambda x: np.exp(-0.5 * x[:, 0] ** 2)  # noqa: E731
    quad = GeneratorQuadrature(panels=64)
    A = np.stack([apply_generator(spec, P15, half_axis(), t, ens.paths[k], None, phi,
                                  grad_phi=lambda x: -x * np.exp(-0.5 * x**2), quad=quad).value
                  for k, t in enumerate(Q.grid)])
    dt = np.diff(Q.grid)[:, None]
    resid = phi(ens.paths[-1]) - phi(ens.paths[0]) - np.sum(A[:-1] * dt, axis=0)
    se = resid.std(ddof=1) / np.sqrt(N)
    assert abs(resid.mean()) <= 3 * se + 1e-3


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        simulate_linear(ZERO, StableParams(1.5, 2), Isotropic(2), _const_flow(), DELTA0, 10)


def test_ensemble_flow_pins_initial():
    mu = EmpiricalMeasure.from_weights([[0.0], [1.0]], [1, 1])
    ens = simulate_linear(ZERO, P15, half_axis(), _const_flow(mu=mu), mu, 100, rng=1)
    assert ens.flow().initial.same_as(mu)
