"""Active subspaces of a scalar function on the box ``[-1, 1]^n``.

The uncentered gradient covariance ``C = E[grad f grad f^T]`` is estimated by
Monte Carlo from gradient samples and split by its eigendecomposition into
an active block ``W1`` (largest eigenvalues) and an inactive block ``W2``.
Gradients can be estimated from scattered function values by local linear
least squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["ActiveSubspace", "GradientEstimate", "estimate_gradients", "build_subspace",
           "forward_map", "back_map"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientEstimate:
    """Gradient samples plus a mask of rows that used the global fallback model."""

    gradients: np.ndarray
    fallback: np.ndarray

    @property
    def n_fallback(self):
        return int(self.fallback.sum())


def _global_slope(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    return coef[1:]


def estimate_gradients(samples, values, neighbors=None, rcond=1e-10):
    """Local linear gradient estimates at every sample.

    For each sample a linear model ``f ~ c + g . (x - x_i)`` is fitted by least
    squares to its ``neighbors`` nearest samples (itself included) and ``g`` is
    returned. Rank-deficient neighbourhoods fall back to the global linear
    model and are flagged.

    Parameters
    ----------
    samples : (k, n) array
    values : (k,) array
    neighbors : int, optional
        Defaults to ``2 (n + 1)`` capped at ``k``.

    Returns
    -------
    GradientEstimate
    """
    X = np.asarray(samples, dtype=float)
    y = np.asarray(values, dtype=float).reshape(-1)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("samples must be (k, n) with one value per sample")
    k, n = X.shape
    if k <= n:
        raise ValueError(f"need more than n={n} samples, got {k}")
    if neighbors is None:
        neighbors = min(2 * (n + 1), k)
    if not n + 1 <= neighbors <= k:
        raise ValueError(f"neighbors must be in [{n + 1}, {k}]")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("samples and values must be finite")

    _, idx = cKDTree(X).query(X, k=neighbors)
    idx = idx.reshape(k, neighbors)
    dx = X[idx] - X[:, None, :]
    A = np.concatenate([np.ones((k, neighbors, 1)), dx], axis=-1)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    ok = s[:, -1] > rcond * s[:, 0]
    sinv = np.where(s > rcond * s[:, :1], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    coef = np.einsum("kji,kj,kmj,km->ki", Vt, sinv, U, y[idx])
    grads = coef[:, 1:]
    fallback = ~ok
    if fallback.any():
        logger.info("%d of %d local fits rank-deficient; using the global linear model", fallback.sum(), k)
        grads[fallback] = _global_slope(X, y)
    return GradientEstimate(grads, fallback)


@dataclass(frozen=True, eq=False)
class ActiveSubspace:
    """Eigenvectors ``W = [W1 W2]`` of the gradient covariance, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dim: int

    @property
    def W1(self):
        return self.eigenvectors[:, :self.dim]

    @property
    def W2(self):
        return self.eigenvectors[:, self.dim:]

    @property
    def n(self):
        return self.eigenvectors.shape[0]


def build_subspace(gradients, dim):
    """Monte Carlo covariance ``C = G^T G / k`` and its eigensplit at ``dim``.

    ``dim == n`` is accepted and gives an empty inactive block. Each
    eigenvector is signed so its largest-magnitude entry is positive.
    """
    G = np.asarray(getattr(gradients, "gradients", gradients), dtype=float)
    if G.ndim != 2 or len(G) < 1:
        raise ValueError("gradients must be a non-empty (k, n) array")
    if not np.all(np.isfinite(G)):
        raise ValueError("gradients must be finite")
    n = G.shape[1]
    if not 1 <= dim <= n:
        raise ValueError(f"active dimension must be in [1, {n}], got {dim}")
    C = G.T @ G / len(G)
    lam, W = np.linalg.eigh(0.5 * (C + C.T))
    lam, W = lam[::-1], W[:, ::-1]
    lam = np.maximum(lam, 0.0)
    sign = np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(n)])
    W = W * np.where(sign == 0, 1.0, sign)
    return ActiveSubspace(lam, W, int(dim))


def forward_map(subspace, mu):
    """Active variable ``W1^T mu`` for one point ``(n,)`` or many ``(k, n)``."""
    return np.asarray(mu, dtype=float) @ subspace.W1


def back_map(subspace, q, count, rng, max_attempts=100, sampler="projected"):
    """Full-space points ``W1 q + W2 eta`` inside ``[-1, 1]^n``.

    Parameters
    ----------
    q : (dim,) array
        Active coordinates.
    count : int
        Number ``B`` of points wanted.
    rng : numpy Generator
    max_attempts : int
        Candidate draws per wanted point before giving up on rejection.
    sampler : {"projected", "box"}
        ``"projected"`` draws ``eta = W2^T u`` with ``u`` uniform in the box,
        ``"box"`` draws each ``eta_j`` uniformly over its box-induced range
        ``[-|W2_j|_1, |W2_j|_1]``.

    Returns
    -------
    points : (b, n) array with ``1 <= b <= count``
    clipped : bool
        True when no candidate was feasible and the first one was clipped
        to the box instead.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    W1, W2 = subspace.W1, subspace.W2
    base = W1 @ q
    if W2.shape[1] == 0:
        inside = np.all(np.abs(base) <= 1.0)
        return np.clip(base, -1.0, 1.0)[None], not inside
    total = count * max_attempts
    if sampler == "projected":
        eta = rng.uniform(-1.0, 1.0, (total, subspace.n)) @ W2
    elif sampler == "box":
        half = np.abs(W2).sum(axis=0)
        eta = rng.uniform(-1.0, 1.0, (total, W2.shape[1])) * half
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    cand = base + eta @ W2.T
    ok = np.all(np.abs(cand) <= 1.0, axis=1)
    if ok.any():
        return cand[ok][:count], False
    return np.clip(cand[:1], -1.0, 1.0), True
