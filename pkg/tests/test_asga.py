import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import mannwhitneyu

from hullopt.asga import (
    AsgaConfig,
    Individual,
    asga_generation,
    ga_generation,
    optimize,
    write_history,
)
from hullopt.errors import ConfigurationError


def sphere(P):
    return (np.asarray(P) ** 2).sum(axis=1)


def test_config_validation():
    for bad in ({"p_c": 1.5}, {"p_m": -0.1}, {"population": 0}, {"back_map": 0}, {"history": "x"}):
        with pytest.raises(ConfigurationError):
            AsgaConfig(**bad)
    with pytest.raises(ConfigurationError):
        optimize(sphere, (-1, 1), AsgaConfig(), method="pso", n_params=2)
    with pytest.raises(ConfigurationError):
        optimize(sphere, (1, -1), AsgaConfig(), n_params=2)


def test_individual_validation():
    ind = Individual([0.5, -1.0], 2.0)
    assert not ind.genes.flags.writeable
    with pytest.raises(ValueError):
        Individual([1.5], 0.0)
    with pytest.raises(ValueError):
        Individual([0.0], np.inf)


def test_no_crossover_no_mutation_copies_parents():
    rng = np.random.default_rng(0)
    genes = rng.uniform(-1, 1, (40, 5))
    fit = sphere(genes)
    cfg = AsgaConfig(population=40, offspring=30, p_c=0.0, p_m=0.0)
    kids = ga_generation(genes, fit, cfg, rng)
    pool = genes[np.argsort(fit)[:20]]
    for k in kids:
        assert np.any(np.all(pool == k, axis=1))


@given(st.integers(0, 10_000))
def test_blend_children_stay_in_box_and_span(seed):
    rng = np.random.default_rng(seed)
    genes = rng.uniform(-1, 1, (10, 3))
    cfg = AsgaConfig(population=10, offspring=50, p_c=1.0, p_m=0.0)
    kids = ga_generation(genes, sphere(genes), cfg, rng)
    pool = genes[np.argsort(sphere(genes))[:5]]
    lo, hi = pool.min(axis=0), pool.max(axis=0)
    span = hi - lo
    assert np.all(kids >= np.maximum(lo - 0.5 * span, -1) - 1e-15)
    assert np.all(kids <= np.minimum(hi + 0.5 * span, 1) + 1e-15)


@given(st.integers(0, 10_000), st.sampled_from(["ga", "asga"]))
def test_elitism_and_box(seed, method):
    cfg = AsgaConfig(population=20, offspring=10, generations=8, seed=seed)
    a = np.linspace(1, 2, 4)
    res = optimize(lambda P: (P @ a - 0.1) ** 2 + 0.01 * sphere(P), (-0.2, 0.2), cfg, method=method,
                   vectorized=True, n_params=4)
    best = [r["best"] for r in res.history]
    assert np.all(np.diff(best) <= 0)
    assert np.all(np.abs(res.evaluated) <= 1.0)
    assert res.n_evaluations == 20 + 8 * 10 == len(res.evaluated)
    assert res.best.fitness == best[-1] == res.fitness_values.min()
    assert np.all(np.abs(res.best_parameters) <= 0.2)


def test_sphere_baseline():
    bests = [optimize(sphere, (-1, 1), AsgaConfig(population=40, generations=50, seed=s), method="ga",
                      vectorized=True, n_params=5).best.fitness for s in range(10)]
    assert np.median(bests) < 1e-2


def test_one_dimensional_quadratic_matches_grid():
    grid = np.linspace(-1, 1, 200001)
    target = grid[np.argmin((grid - 0.3) ** 2)]
    res = optimize(lambda p: float((p.values[0] - 0.3) ** 2), (-1.0, 1.0), AsgaConfig(generations=50),
                   n_params=1)
    assert abs(res.best_parameters[0] - target) < 1e-3


def test_constant_fitness_keeps_initial_individual():
    res = optimize(lambda P: np.ones(len(P)), (-1, 1), AsgaConfig(population=10, generations=5),
                   vectorized=True, n_params=3)
    assert {r["best"] for r in res.history} == {1.0}
    assert {r["mean"] for r in res.history} == {1.0}
    assert np.any(np.all(res.evaluated[:10] == res.best.genes, axis=1))


@pytest.mark.parametrize("method", ["ga", "asga"])
def test_bit_identical_history(method):
    cfg = AsgaConfig(population=30, offspring=10, generations=15, seed=7)
    f = lambda P: np.sin(3 * P).sum(axis=1) + sphere(P)  # noqa: E731
    a = optimize(f, (-1, 1), cfg, method=method, vectorized=True, n_params=6)
    b = optimize(f, (-1, 1), cfg, method=method, vectorized=True, n_params=6)
    assert a.history == b.history
    np.testing.assert_array_equal(a.evaluated, b.evaluated)


def test_scalar_and_vectorized_agree():
    cfg = AsgaConfig(population=12, offspring=6, generations=4, seed=3)
    a = optimize(lambda p: float(np.sum(p.values ** 2)), (-1, 1), cfg, n_params=3)
    b = optimize(sphere, (-1, 1), cfg, vectorized=True, n_params=3)
    assert a.history == b.history


def test_non_finite_fitness_gets_worst_value():
    def f(P):
        v = sphere(P)
        v[::3] = np.nan
        return v

    res = optimize(f, (-1, 1), AsgaConfig(population=12, offspring=6, generations=3), vectorized=True,
                   n_params=2)
    assert res.flags["nonfinite"] > 0
    assert np.all(np.isfinite(res.fitness_values))
    first = res.fitness_values[:12]
    assert np.all(first[::3] == first[1:][first[1:] == first[1:]].max())


def test_asga_falls_back_on_short_history():
    rng = np.random.default_rng(0)
    genes = rng.uniform(-1, 1, (5, 10))
    cfg = AsgaConfig(population=5, offspring=4)
    kids, info = asga_generation(genes, sphere(genes), cfg, rng)
    assert info["fallback"] and kids.shape == (4, 10)


def test_asga_generation_uses_subspace():
    rng = np.random.default_rng(1)
    a = np.linspace(-1, 1, 10)
    X = rng.uniform(-1, 1, (200, 10))
    f = (X @ a) ** 2
    cfg = AsgaConfig(population=40, offspring=20)
    kids, info = asga_generation(X[:40], f[:40], cfg, rng, (X, f))
    assert not info["fallback"]
    w = info["subspace"].W1[:, 0]
    assert abs(w @ a) / np.linalg.norm(a) > 0.95
    assert kids.shape == (20, 10) and np.all(np.abs(kids) <= 1)


def test_full_dimension_asga_matches_ga_distribution():
    def final(method, as_dim):
        return [optimize(sphere, (-1, 1), AsgaConfig(population=30, offspring=10, generations=30, seed=s,
                                                     as_dim=as_dim), method=method, vectorized=True,
                         n_params=4).best.fitness for s in range(20)]

    ga, full = final("ga", 1), final("asga", 4)
    assert mannwhitneyu(ga, full).pvalue > 0.01


def test_population_history_option():
    cfg = AsgaConfig(population=30, offspring=10, generations=5, history="population")
    res = optimize(lambda P: (P @ np.ones(4)) ** 2, (-1, 1), cfg, vectorized=True, n_params=4)
    assert res.flags["ga_fallback"] == 0 and res.eigenvalues is not None


def test_stop_below():
    res = optimize(sphere, (-1, 1), AsgaConfig(generations=100), vectorized=True, n_params=2, stop_below=1e-2)
    assert res.history[-1]["best"] < 1e-2
    assert len(res.history) < 101
    assert res.evaluations_to_reach(1e-2) == res.history[-1]["evaluations"]
    assert res.evaluations_to_reach(-1.0) is None


def test_genes_parameters_round_trip(surface_design):
    mu = np.random.default_rng(0).uniform(-0.2, 0.2, (50, 10))
    np.testing.assert_allclose(surface_design.from_genes(surface_design.to_genes(mu)), mu, rtol=0, atol=1e-12)
    g = np.random.default_rng(1).uniform(-1, 1, (50, 10))
    np.testing.assert_allclose(surface_design.to_genes(surface_design.from_genes(g)), g, rtol=0, atol=1e-12)


def test_write_history(tmp_path):
    res = optimize(sphere, (-1, 1), AsgaConfig(population=10, generations=3), vectorized=True, n_params=2)
    write_history(tmp_path / "h.csv", res.history)
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert [int(r["generation"]) for r in rows] == [0, 1, 2, 3]
    assert float(rows[-1]["best"]) == res.history[-1]["best"]


def test_population_reduced_bounds():
    rng = np.random.default_rng(2)
    a = np.linspace(-1, 1, 10)
    X = rng.uniform(-1, 1, (200, 10))
    f = (X @ a) ** 2
    genes = 0.05 * rng.uniform(-1, 1, (40, 10))
    cfg = AsgaConfig(population=40, offspring=20, p_m=0.0, reduced_bounds="population")
    kids, info = asga_generation(genes, (genes @ a) ** 2, cfg, rng, (X, f))
    w = info["subspace"].W1
    proj, q = genes @ w, kids @ w
    span = proj.max() - proj.min()
    # back-maps keep q unless clipped, so children stay in the padded range
    assert info["clipped"] == 0
    assert q.min() >= proj.min() - 0.1 * span - 1e-10 and q.max() <= proj.max() + 0.1 * span + 1e-10
    with pytest.raises(ConfigurationError):
        AsgaConfig(reduced_bounds="other")


def test_initial_population_seeds_the_run():
    cfg = AsgaConfig(population=20, offspring=10, generations=5, seed=1)
    f = lambda P: ((P - 0.05) ** 2).sum(axis=1)  # noqa: E731
    first = optimize(f, (-1, 1), cfg, vectorized=True, n_params=3)
    again = optimize(f, (-1, 1), cfg, vectorized=True, n_params=3, initial=first.population)
    np.testing.assert_array_equal(again.evaluated[:20], first.population)
    assert again.history[0]["best"] == first.history[-1]["best"]
    assert again.best.fitness <= first.best.fitness
    partial = optimize(f, (-1, 1), cfg, vectorized=True, n_params=3, initial=first.population[:4])
    np.testing.assert_array_equal(partial.evaluated[:4], first.population[:4])
    with pytest.raises(ConfigurationError):
        optimize(f, (-1, 1), cfg, vectorized=True, n_params=3, initial=np.full((2, 3), 2.0))
