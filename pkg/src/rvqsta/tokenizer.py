"""K-means semantic tokenizer: Lloyd iterations from k-means++ seeds, best of several restarts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.types import Codebook, FeatureSequence, RvqStaError, ShapeError, TokenSequence
from .rvq import squared_distances


class KMeansError(RvqStaError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centroids: Codebook
    iterations_run: int
    inertia: float
    inertia_history: tuple = ()

    @property
    def k(self) -> int:
        return self.centroids.K

    def __eq__(self, other):
        return (
            isinstance(other, KMeansModel)
            and self.centroids == other.centroids
            and self.iterations_run == other.iterations_run
            and self.inertia == other.inertia
        )


def _points(points) -> np.ndarray:
    if isinstance(points, FeatureSequence):
        return points.frames
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"points must be a 2-D matrix, got shape {arr.shape}")
    return arr


def _nearest(points: np.ndarray, centroids: np.ndarray):
    d2 = squared_distances(points, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = squared_distances(x, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[j] = x[idx]
        closest = np.minimum(closest, squared_distances(x, centroids[j:j + 1])[:, 0])
    return centroids


def _update(x, labels, d2, old: np.ndarray) -> np.ndarray:
    k = old.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(old)
    np.add.at(sums, labels, x)
    new = old.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    # Empty clusters take the points currently farthest from their centroids.
    spare = d2.copy()
    for j in np.flatnonzero(~live):
        far = int(np.argmax(spare))
        new[j] = x[far]
        spare[far] = -1.0
    return new


def _lloyd(x: np.ndarray, k: int, max_iters: int, tol: float, rng: np.random.Generator) -> KMeansModel:
    centroids = _kmeans_plus_plus(x, k, rng)
    labels, d2 = _nearest(x, centroids)
    inertia = float(d2.sum())
    history = [inertia]
    iters = 0
    for _ in range(max_iters):
        centroids = _update(x, labels, d2, centroids)
        new_labels, d2 = _nearest(x, centroids)
        new_inertia = float(d2.sum())
        iters += 1
        if new_inertia > inertia * (1 + 1e-12) + 1e-300:
            raise KMeansError(f"inertia increased at iteration {iters}: {inertia!r} -> {new_inertia!r}")
        history.append(new_inertia)
        done = np.array_equal(new_labels, labels) or inertia - new_inertia < tol
        labels, inertia = new_labels, new_inertia
        if done:
            break
    return KMeansModel(Codebook(centroids), iters, inertia, tuple(history))


def kmeans_fit(points, k: int, max_iters: int = 100, tol: float = 0.0, seed: int = 0,
               n_init: int = 10) -> KMeansModel:
    """Fit ``k`` centroids with Lloyd's algorithm.

    Each of the ``n_init`` runs starts from its own k-means++ seeding and stops
    when the assignment is unchanged, when the inertia improvement drops below
    ``tol``, or after ``max_iters`` centroid updates. Inertia is checked to be
    non-increasing after every update. The run with the lowest final inertia
    is returned (earliest run on ties).
    """
    x = _points(points)
    if k < 1:
        raise KMeansError(f"k must be >= 1, got {k}")
    if x.shape[0] < k:
        raise KMeansError(f"fewer points ({x.shape[0]}) than clusters (k={k})")
    if max_iters < 1:
        raise KMeansError(f"max_iters must be >= 1, got {max_iters}")
    if tol < 0:
        raise KMeansError(f"tol must be >= 0, got {tol}")
    if n_init < 1:
        raise KMeansError(f"n_init must be >= 1, got {n_init}")

    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        run = _lloyd(x, k, max_iters, tol, np.random.default_rng(child))
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def kmeans_assign(points, model: KMeansModel | Codebook) -> TokenSequence:
    """Map every frame to its nearest centroid (ties go to the lowest index)."""
    x = _points(points)
    cb = model.centroids if isinstance(model, KMeansModel) else model
    if x.shape[1] != cb.D:
        raise ShapeError(f"dimension mismatch: points have D={x.shape[1]}, centroids have D={cb.D}")
    labels, _ = _nearest(x, cb.entries)
    return TokenSequence(labels, cb.K)
