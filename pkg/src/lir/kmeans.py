"""Seeded k-means used as the IVF coarse quantizer."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .errors import ParameterError

MAX_ITER = 25


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared L2 distance from every row of ``x`` to every centroid, shape (n, k)."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ``argmin`` resolves ties to the lowest centroid id."""
    return squared_distances(x, centroids).argmin(axis=1)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a chosen centroid
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free)) if free.size else int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(x, x[idx : idx + 1]).ravel())
    return x[chosen].astype(np.float64)


def _repair_empty(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> bool:
    """Re-seed each empty cell with the point farthest from its centroid in the largest cell.

    Returns True if any centroid moved.
    """
    k = centroids.shape[0]
    moved = False
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        largest = int(counts.argmax())
        members = np.flatnonzero(labels == largest)
        if members.size < 2:
            break
        d = ((x[members] - centroids[largest]) ** 2).sum(axis=1)
        far = int(members[d.argmax()])
        if d.max() == 0.0:
            continue
        centroids[empty] = x[far]
        labels[far] = empty
        counts[largest] -= 1
        counts[empty] = 1
        moved = True
    return moved


def kmeans(x, k: int, seed: int, max_iter: int = MAX_ITER) -> Tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns:
        (centroids of shape (k, dim) in float64, labels of shape (n,)).
        Deterministic for a fixed seed.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"number of cells must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(x, k, rng)
    labels = assign(x, centroids)
    for _ in range(max_iter):
        _repair_empty(x, centroids, labels)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_labels = assign(x, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, labels
