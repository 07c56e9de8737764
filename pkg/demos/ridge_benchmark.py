"""ASGA against the plain GA on ridge functions f = (a . mu - 0.7)^2 in 10-d.

Prints the median number of evaluations to reach f < 1e-3 over 10 seeds for
several ridge scales and two directions.

Usage: python3 demos/ridge_benchmark.py
"""

import numpy as np

from hullopt.asga import AsgaConfig, optimize


def evaluations(method, a, seed, **kw):
    res = optimize(lambda P: (P @ a - 0.7) ** 2, (-1.0, 1.0), AsgaConfig(seed=seed, **kw), method=method,
                   vectorized=True, n_params=10, stop_below=1e-3)
    e = res.evaluations_to_reach(1e-3)
    return np.inf if e is None else e


def main():
    w = np.random.default_rng(2024).standard_normal(10)
    directions = {"diagonal": np.ones(10) / np.sqrt(10), "seeded": w / np.linalg.norm(w)}
    print(f"{'|a|':>7} {'direction':>9} {'GA':>6} {'ASGA':>6} {'ratio':>6} {'ASGA-pop':>8} {'ratio':>6}")
    for scale in (1.0, 10.0, np.sqrt(1000.0), 100.0, np.sqrt(1e5)):
        for name, u in directions.items():
            a = scale * u
            ga = np.median([evaluations("ga", a, s) for s in range(10)])
            asga = np.median([evaluations("asga", a, s) for s in range(10)])
            pop = np.median([evaluations("asga", a, s, reduced_bounds="population") for s in range(10)])
            print(f"{scale:7.1f} {name:>9} {ga:6.0f} {asga:6.0f} {asga / ga:6.2f} {pop:8.0f} {pop / ga:6.2f}")


if __name__ == "__main__":
    main()
