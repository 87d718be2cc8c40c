"""Look at the driving noise from three angles.

Samples of an increment are compared with its characteristic function.
A lattice Fourier inversion gives the density of the frozen-coefficient
process, which is checked against a Monte Carlo histogram.  Fractional
moments of that density shrink like (t - s)^(gamma / alpha) as the horizon
shrinks.
"""

import numpy as np

from stablemkv import StableParams, characteristic_exponent, density_fft, moment_scaling_check, sample_increment
from stablemkv.noise import Atomic
from stablemkv.proxy import chi_square_test, sample_proxy


def main():
    omega = Atomic(np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]))
    rng = np.random.default_rng(7)
    for alpha in (0.8, 1.5):
        p = StableParams(alpha, 1)
        z = sample_increment(p, omega, 0.5, rng, size=100_000)[:, 0]
        print(f"alpha = {alpha}")
        for freq in (0.5, 1.0, 2.0):
            emp = np.cos(freq * z).mean()
            exact = np.exp(0.5 * characteristic_exponent(p, omega, np.array([[freq]]))[0])
            print(f"  E cos({freq} Z) = {emp:.4f}   exp(dt psi) = {exact:.4f}")

        grid = density_fft(p, omega)
        draws = sample_proxy(p, omega, None, n=100_000, rng=rng)
        stat, pval = chi_square_test(grid, draws)
        print(f"  lattice density: mass {grid.mass:.5f}, chi-square p-value {pval:.3f}")

        fit = moment_scaling_check(p, omega, alpha / 2, [1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0])
        print(f"  moment of order {alpha / 2}: slope {fit.exponent:.4f} (expected {fit.target:.4f})")


if __name__ == "__main__":
    main()
