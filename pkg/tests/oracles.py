"""Independent reference computations used only by the tests."""

import itertools

import numpy as np


def exhaustive_kmeans_optimum(points, k):
    """Minimum within-cluster sum of squares over every labelling in ``k^N``.

    Point 0 is pinned to cluster 0; relabelling clusters never changes the cost.
    """
    x = np.asarray(points, dtype=float)
    n = len(x)
    rest = np.array(list(itertools.product(range(k), repeat=n - 1)), dtype=np.int8).reshape(-1, n - 1)
    labels = np.hstack([np.zeros((len(rest), 1), dtype=np.int8), rest])
    total_sq = float(np.sum(x ** 2))
    explained = np.zeros(len(labels))
    for j in range(k):
        mask = (labels == j).astype(float)
        counts = mask.sum(axis=1)
        sums = mask @ x
        with np.errstate(invalid="ignore", divide="ignore"):
            part = np.where(counts > 0, np.sum(sums ** 2, axis=1) / counts, 0.0)
        explained += part
    return total_sq - explained.max()


def kernel_form_ridge(phi, targets, lam):
    """Ridge weights via the push-through identity ``phi^T (phi phi^T + lam I)^-1 Y``."""
    n = phi.shape[0]
    return phi.T @ np.linalg.solve(phi @ phi.T + lam * np.eye(n), targets)


def central_difference_gradient(loss, w, step=1e-5):
    grad = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        up, down = w.copy(), w.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (loss(up) - loss(down)) / (2 * step)
    return grad
