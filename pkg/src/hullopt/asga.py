"""Real-coded genetic algorithm with an optional active-subspace reduction.

Genes live in ``[-1, 1]^n`` and are mapped affinely onto the design bounds
before every fitness call. One generation of the plain GA

1. keeps the best ``ceil(T / 2)`` individuals as the parent pool,
2. breeds offspring by BLX-0.5 crossover (probability ``p_c``) and per-gene
   Gaussian mutation (probability ``p_m``),
3. evaluates the offspring and keeps the best ``T`` of parents and offspring.

The ASGA variant builds an active subspace from the evaluation history,
projects the parent pool onto it, breeds in the reduced coordinates and
back-maps every reduced child to ``B`` full-space candidates. Reduced
coordinates are bred inside the bounding box of the zonotope ``W1^T [-1, 1]^n``
or, with ``reduced_bounds="population"``, inside the padded range of the
projected current population.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .active_subspace import back_map, build_subspace, estimate_gradients
from .errors import ConfigurationError
from .ffd import ParameterVector

__all__ = ["Individual", "AsgaConfig", "OptimizeResult", "ga_generation", "asga_generation",
           "optimize", "write_history"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Individual:
    genes: np.ndarray
    fitness: float = None

    def __post_init__(self):
        g = np.array(self.genes, dtype=float).reshape(-1)
        if np.any(np.abs(g) > 1.0):
            raise ValueError("genes must lie in [-1, 1]")
        if self.fitness is not None and not np.isfinite(self.fitness):
            raise ValueError("fitness must be finite")
        g.flags.writeable = False
        object.__setattr__(self, "genes", g)


@dataclass(frozen=True)
class AsgaConfig:
    population: int = 100
    offspring: int = 20
    generations: int = 150
    p_c: float = 0.5
    p_m: float = 0.5
    back_map: int = 2
    as_dim: int = 1
    seed: int = 0
    blend_alpha: float = 0.5
    mutation_scale: float = 0.1
    neighbors: int = None
    history: str = "full"
    sampler: str = "projected"
    reduced_bounds: str = "zonotope"

    def __post_init__(self):
        for name in ("p_c", "p_m"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]")
        for name in ("population", "offspring", "generations", "back_map", "as_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.history not in ("full", "population"):
            raise ConfigurationError("history must be 'full' or 'population'")
        if self.reduced_bounds not in ("zonotope", "population"):
            raise ConfigurationError("reduced_bounds must be 'zonotope' or 'population'")


@dataclass
class OptimizeResult:
    best: Individual
    best_parameters: np.ndarray
    history: list
    n_evaluations: int
    flags: dict
    eigenvalues: np.ndarray = None
    evaluated: np.ndarray = field(default=None, repr=False)
    fitness_values: np.ndarray = field(default=None, repr=False)
    population: np.ndarray = field(default=None, repr=False)

    def evaluations_to_reach(self, target):
        """Evaluation count at the first generation whose best is below ``target`` (None if never)."""
        for row in self.history:
            if row["best"] < target:
                return row["evaluations"]
        return None


def _generation_rng(seed, gen):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(gen,)))


def _pool(genes, fitness, size):
    order = np.argsort(fitness, kind="stable")[:size]
    return genes[order]


def _breed(pool, count, cfg, rng, lo, hi):
    """BLX crossover and Gaussian mutation of ``count`` children in the box ``[lo, hi]``.

    The mutation standard deviation is ``mutation_scale * (hi - lo)``.
    """
    d = pool.shape[1]
    i = rng.integers(len(pool), size=count)
    j = rng.integers(len(pool), size=count)
    a, b = pool[i], pool[j]
    cross = rng.random(count) < cfg.p_c
    u = rng.random((count, d))
    low, span = np.minimum(a, b), np.abs(a - b)
    blend = low - cfg.blend_alpha * span + u * (1 + 2 * cfg.blend_alpha) * span
    child = np.where(cross[:, None], blend, a)
    mutate = rng.random((count, d)) < cfg.p_m
    child = child + mutate * rng.standard_normal((count, d)) * (cfg.mutation_scale * (hi - lo))
    return np.clip(child, lo, hi)


def ga_generation(genes, fitness, cfg, rng):
    """Offspring genes of one plain-GA generation, shape ``(offspring, n)``."""
    pool = _pool(genes, fitness, math.ceil(cfg.population / 2))
    n = genes.shape[1]
    return _breed(pool, cfg.offspring, cfg, rng, -np.ones(n), np.ones(n))


def asga_generation(genes, fitness, cfg, rng, history=None):
    """Offspring genes of one ASGA generation and diagnostics.

    ``history`` is a ``(X, f)`` pair of all evaluated genes. The subspace
    falls back to the plain GA when the history is too short for local
    gradient fits.

    Returns
    -------
    kids : (offspring, n) array
    info : dict with ``subspace`` (or None), ``fallback`` and ``clipped`` count
    """
    X, f = history if history is not None else (genes, fitness)
    n = genes.shape[1]
    nb = cfg.neighbors or 2 * (n + 1)
    if len(X) < max(nb, n + 2) or cfg.as_dim > n:
        return ga_generation(genes, fitness, cfg, rng), {"subspace": None, "fallback": True, "clipped": 0}
    grads = estimate_gradients(X, f, min(nb, len(X)))
    sub = build_subspace(grads, cfg.as_dim)
    pool = _pool(genes, fitness, math.ceil(cfg.population / 2)) @ sub.W1
    # the box maps onto the zonotope W1^T [-1, 1]^n; breed inside its bounding box
    reach = np.abs(sub.W1).sum(axis=0)
    lo, hi = -reach, reach
    if cfg.reduced_bounds == "population":
        proj = genes @ sub.W1
        plo, phi = proj.min(axis=0), proj.max(axis=0)
        pad = 0.1 * np.maximum(phi - plo, 2e-3 * reach)
        lo, hi = np.maximum(plo - pad, -reach), np.minimum(phi + pad, reach)
    kids, clipped = [], 0
    while sum(len(k) for k in kids) < cfg.offspring:
        need = cfg.offspring - sum(len(k) for k in kids)
        reduced = _breed(pool, math.ceil(need / cfg.back_map), cfg, rng, lo, hi)
        for q in reduced:
            pts, was_clipped = back_map(sub, q, cfg.back_map, rng, sampler=cfg.sampler)
            kids.append(pts)
            clipped += was_clipped
    kids = np.concatenate(kids)[:cfg.offspring]
    return np.clip(kids, -1.0, 1.0), {"subspace": sub, "fallback": False, "clipped": clipped}


def _as_bounds(bounds, n):
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (n,)).copy()
    if np.any(lo >= hi):
        raise ConfigurationError("lower bounds must be below upper bounds")
    return lo, hi


def optimize(fitness, bounds, cfg=AsgaConfig(), method="asga", vectorized=False, n_params=None,
             stop_below=None, initial=None):
    """Minimize ``fitness`` over the box ``bounds`` with the GA or ASGA.

    Parameters
    ----------
    fitness : callable
        ``fitness(ParameterVector) -> float``; with ``vectorized=True`` it
        takes a ``(k, n)`` array of parameters and returns ``k`` values.
    bounds : (lower, upper)
        Scalars or length-``n`` arrays.
    method : {"asga", "ga"}
    n_params : int, optional
        Needed when both bounds are scalars.
    stop_below : float, optional
        Stop after the first generation whose best fitness is below this.
    initial : (k, n) array, optional
        Genes in ``[-1, 1]`` that seed the initial population, for example
        the final population of an earlier run. Missing individuals are drawn
        uniformly; extra rows are dropped.

    Returns
    -------
    OptimizeResult
        Best-ever individual, per-generation history rows
        ``{generation, evaluations, best, mean}`` and diagnostic flags.
    """
    if method not in ("asga", "ga"):
        raise ConfigurationError("method must be 'asga' or 'ga'")
    n = n_params or max(np.size(bounds[0]), np.size(bounds[1]))
    lo, hi = _as_bounds(bounds, n)
    flags = {"nonfinite": 0, "ga_fallback": 0, "clipped_backmap": 0}
    all_x, all_f = [], []

    def evaluate(genes):
        params = lo + 0.5 * (genes + 1.0) * (hi - lo)
        if vectorized:
            vals = np.asarray(fitness(params), dtype=float).reshape(-1)
        else:
            vals = np.array([float(fitness(ParameterVector(p, lo, hi))) for p in params])
        bad = ~np.isfinite(vals)
        if bad.any():
            flags["nonfinite"] += int(bad.sum())
            finite = [v for v in all_f if len(v)] + [vals[~bad]]
            pool = np.concatenate(finite)
            worst = pool.max() if len(pool) else np.finfo(float).max
            logger.warning("%d non-finite fitness values replaced by %g", bad.sum(), worst)
            vals = np.where(bad, worst, vals)
        all_x.append(genes)
        all_f.append(vals)
        return vals

    rng = _generation_rng(cfg.seed, 0)
    genes = rng.uniform(-1.0, 1.0, (cfg.population, n))
    if initial is not None:
        seeded = np.atleast_2d(np.asarray(initial, dtype=float))[:cfg.population]
        if seeded.shape[1] != n or np.any(np.abs(seeded) > 1.0):
            raise ConfigurationError(f"initial genes must have shape (k, {n}) and lie in [-1, 1]")
        genes[:len(seeded)] = seeded
    fit = evaluate(genes)
    evals = len(fit)
    best_i = int(np.argmin(fit))
    best_g, best_f = genes[best_i].copy(), float(fit[best_i])
    history = [{"generation": 0, "evaluations": evals, "best": best_f, "mean": float(fit.mean())}]
    eigenvalues = None
    done = stop_below is not None and best_f < stop_below
    for gen in range(1, 0 if done else cfg.generations + 1):
        rng = _generation_rng(cfg.seed, gen)
        if method == "ga" or n == 1:
            kids = ga_generation(genes, fit, cfg, rng)
        else:
            hist = (np.concatenate(all_x), np.concatenate(all_f)) if cfg.history == "full" else (genes, fit)
            kids, info = asga_generation(genes, fit, cfg, rng, hist)
            flags["ga_fallback"] += info["fallback"]
            flags["clipped_backmap"] += info["clipped"]
            if info["subspace"] is not None:
                eigenvalues = info["subspace"].eigenvalues
        kf = evaluate(kids)
        evals += len(kf)
        merged = np.concatenate([genes, kids])
        mf = np.concatenate([fit, kf])
        keep = np.argsort(mf, kind="stable")[:cfg.population]
        genes, fit = merged[keep], mf[keep]
        if fit[0] < best_f:
            best_g, best_f = genes[0].copy(), float(fit[0])
        history.append({"generation": gen, "evaluations": evals, "best": best_f, "mean": float(fit.mean())})
        if stop_below is not None and best_f < stop_below:
            break

    return OptimizeResult(
        best=Individual(best_g, best_f),
        best_parameters=lo + 0.5 * (best_g + 1.0) * (hi - lo),
        history=history,
        n_evaluations=evals,
        flags=flags,
        eigenvalues=eigenvalues,
        evaluated=np.concatenate(all_x),
        fitness_values=np.concatenate(all_f),
        population=genes,
    )


def write_history(path, history):
    """Write history rows as CSV with columns generation, evaluations, best, mean."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "evaluations", "best", "mean"])
        for r in history:
            w.writerow([r["generation"], r["evaluations"], repr(float(r["best"])), repr(float(r["mean"]))])
