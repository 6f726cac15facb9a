"""Gaussian RBF network classifier over eigenspace features.

Hidden-unit centers are placed by seeded k-means, widths come from a
nearest-center heuristic, and the linear output layer (plus a bias unit) is
fitted to one-hot targets by regularized least squares.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import linalg as sla

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    MissingFile,
    SchemaViolation,
    SingularSystem,
    TooFewPoints,
    UnwritablePath,
)
from .seeding import make_rng

FORMAT_TAG = "fusedfaces-rbf-model"
FORMAT_VERSION = 1

WIDTH_MODES = ("p_nearest", "global_max")


@dataclass(frozen=True)
class RbfConfig:
    """Training hyperparameters.

    ``num_centers=None`` means two hidden units per class, resolved at
    training time.
    """

    num_centers: Optional[int] = None
    width_mode: str = "p_nearest"
    width_p: int = 2
    ridge_lambda: float = 1e-6
    kmeans_max_iters: int = 100
    kmeans_restarts: int = 20
    kmeans_seed: int = 0
    reject_threshold: float = 0.5

    def __post_init__(self):
        def bad(msg):
            raise InvalidConfig(msg, module="rbfnet")

        if self.num_centers is not None and (not _is_int(self.num_centers) or self.num_centers < 1):
            bad(f"num_centers must be an integer >= 1, got {self.num_centers!r}")
        if self.width_mode not in WIDTH_MODES:
            bad(f"width_mode must be one of {WIDTH_MODES}, got {self.width_mode!r}")
        if not _is_int(self.width_p) or self.width_p < 1:
            bad(f"width_p must be an integer >= 1, got {self.width_p!r}")
        if (self.width_mode == "p_nearest" and self.num_centers is not None
                and self.num_centers > 1 and self.width_p >= self.num_centers):
            bad(f"width_p ({self.width_p}) must be smaller than num_centers ({self.num_centers})")
        if not math.isfinite(self.ridge_lambda) or self.ridge_lambda < 0:
            bad(f"ridge_lambda must be >= 0, got {self.ridge_lambda!r}")
        if not _is_int(self.kmeans_max_iters) or self.kmeans_max_iters < 1:
            bad(f"kmeans_max_iters must be an integer >= 1, got {self.kmeans_max_iters!r}")
        if not _is_int(self.kmeans_restarts) or self.kmeans_restarts < 1:
            bad(f"kmeans_restarts must be an integer >= 1, got {self.kmeans_restarts!r}")
        if not _is_int(self.kmeans_seed):
            bad(f"kmeans_seed must be an integer, got {self.kmeans_seed!r}")
        if not math.isfinite(self.reject_threshold):
            bad(f"reject_threshold must be finite, got {self.reject_threshold!r}")

    def centers_for(self, num_classes):
        return self.num_centers if self.num_centers is not None else 2 * num_classes

    def as_dict(self):
        return asdict(self)


def _is_int(value):
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


# ---------------------------------------------------------------------------
# k-means


class KMeansResult(NamedTuple):
    centers: np.ndarray
    assignments: np.ndarray
    distortion: float
    iterations: int
    histories: List[List[float]]


def _sq_dists(points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus_init(points, k, rng):
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _lloyd(points, centers, max_iters):
    """Run Lloyd iterations in place; returns (assignments, history, iterations)."""
    k = len(centers)
    prev = None
    history = []
    iterations = 0
    for _ in range(max_iters):
        assign = np.argmin(_sq_dists(points, centers), axis=1)
        if prev is not None and np.array_equal(assign, prev):
            break
        empty = []
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                empty.append(j)
        own = np.sum((points - centers[assign]) ** 2, axis=1)
        history.append(float(own.sum()))
        taken = np.zeros(len(points), dtype=bool)
        for j in empty:
            # re-seed at the point worst served by its current center
            cand = np.where(taken, -1.0, own)
            far = int(np.argmax(cand))
            centers[j] = points[far]
            taken[far] = True
        prev = assign
        iterations += 1
    assign = np.argmin(_sq_dists(points, centers), axis=1)
    return assign, history, iterations


def kmeans_trace(points, k, seed=0, max_iters=100, restarts=1) -> KMeansResult:
    """k-means with k-means++ seeding and seeded restarts; keeps the lowest distortion.

    ``histories`` holds the per-iteration distortion of every restart.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise DimensionMismatch("points must all share one dimension", module="rbfnet")
    n = len(pts)
    if k < 1 or k > n:
        raise TooFewPoints(f"cannot place {k} centers on {n} points")
    best = None
    histories = []
    for r in range(restarts):
        rng = make_rng(seed, "kmeans", r)
        centers = _plus_plus_init(pts, k, rng)
        assign, history, iters = _lloyd(pts, centers, max_iters)
        histories.append(history)
        distortion = float(np.sum((pts - centers[assign]) ** 2))
        if best is None or distortion < best[2]:
            best = (centers, assign, distortion, iters)
    return KMeansResult(best[0], best[1], best[2], best[3], histories)


def kmeans(points, k, seed=0, max_iters=100, restarts=1):
    """Cluster ``points`` into ``k`` groups; returns ``(centers, assignments)``."""
    if not isinstance(points, np.ndarray):
        dims = {len(np.atleast_1d(p)) for p in points}
        if len(dims) > 1:
            raise DimensionMismatch(f"points have mixed dimensions {sorted(dims)}", module="rbfnet")
    result = kmeans_trace(points, k, seed=seed, max_iters=max_iters, restarts=restarts)
    return result.centers, result.assignments


# ---------------------------------------------------------------------------
# hidden layer


def compute_widths(centers, mode="p_nearest", p=2):
    """Gaussian widths, one per center.

    ``p_nearest``: mean distance to the ``p`` nearest other centers.
    ``global_max``: ``d_max / sqrt(2k)`` for every center.
    Zero widths fall back to the smallest nonzero width, or 1.0.
    """
    c = np.asarray(centers, dtype=np.float64)
    k = len(c)
    if k == 1:
        return np.ones(1)
    dist = np.sqrt(_sq_dists(c, c))
    if mode == "p_nearest":
        p = min(p, k - 1)
        others = np.sort(dist + np.diag(np.full(k, np.inf)), axis=1)[:, :p]
        sigma = others.mean(axis=1)
    elif mode == "global_max":
        sigma = np.full(k, dist.max() / math.sqrt(2 * k))
    else:
        raise InvalidConfig(f"unknown width mode {mode!r}", module="rbfnet")
    nonzero = sigma[sigma > 0]
    fallback = nonzero.min() if nonzero.size else 1.0
    return np.where(sigma > 0, sigma, fallback)


def activation_matrix(centers, widths, features):
    """``N x (k+1)`` Gaussian activations with a trailing bias column of ones."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    c = np.asarray(centers, dtype=np.float64)
    if x.shape[1] != c.shape[1]:
        raise DimensionMismatch(f"feature dimension {x.shape[1]} does not match centers ({c.shape[1]})",
                                module="rbfnet")
    phi = np.exp(-_sq_dists(x, c) / (2.0 * np.asarray(widths) ** 2))
    return np.hstack([phi, np.ones((len(x), 1))])


# ---------------------------------------------------------------------------
# output layer


def ridge_loss(phi, targets, weights, lam):
    resid = phi @ weights - targets
    return float(np.sum(resid ** 2) + lam * np.sum(weights ** 2))


def ridge_gradient(phi, targets, weights, lam):
    return 2.0 * phi.T @ (phi @ weights - targets) + 2.0 * lam * weights


def solve_output_weights(phi, targets, lam):
    """Minimise ``||phi W - Y||^2 + lam ||W||^2``.

    With ``lam > 0`` the normal equations are solved by Cholesky. With
    ``lam == 0`` a least-squares solve is used; when ``phi`` has full row
    rank but not full column rank (more units than samples) the
    minimum-norm interpolant is returned.
    """
    n, m = phi.shape
    if lam > 0:
        gram = phi.T @ phi + lam * np.eye(m)
        try:
            factor = sla.cho_factor(gram, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            raise SingularSystem("regularized normal equations are not positive definite") from None
        return sla.cho_solve(factor, phi.T @ targets)
    rank = np.linalg.matrix_rank(phi)
    if rank < min(n, m):
        raise SingularSystem(
            f"activation matrix is rank deficient ({rank} < {min(n, m)}) with ridge 0; set --ridge > 0"
        )
    weights, *_ = np.linalg.lstsq(phi, targets, rcond=None)
    return weights


# ---------------------------------------------------------------------------
# model


def _frozen(array):
    arr = np.array(array, dtype=np.float64, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RbfModel:
    centers: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    class_labels: tuple
    config: RbfConfig = RbfConfig()
    fingerprint: Optional[dict] = None

    def __post_init__(self):
        centers = _frozen(self.centers)
        widths = _frozen(self.widths).reshape(-1)
        weights = _frozen(self.weights)
        labels = tuple(int(c) for c in self.class_labels)
        if centers.ndim != 2:
            raise DimensionMismatch("centers must be a 2-D array", module="rbfnet")
        k = centers.shape[0]
        if widths.size != k or not np.all(widths > 0):
            raise InvalidConfig("widths must be positive, one per center", module="rbfnet")
        if len(labels) < 2 or len(set(labels)) != len(labels):
            raise InvalidConfig("class labels must be at least 2 distinct ids", module="rbfnet")
        if weights.shape != (k + 1, len(labels)):
            raise DimensionMismatch(f"weights have shape {weights.shape}, expected {(k + 1, len(labels))}",
                                    module="rbfnet")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "class_labels", labels)

    @property
    def feature_dim(self):
        return self.centers.shape[1]


@dataclass(frozen=True, eq=False)
class Decision:
    label: Optional[int]
    scores: np.ndarray = field(repr=False)

    @property
    def accepted(self):
        return self.label is not None


def activations(model: RbfModel, feature) -> np.ndarray:
    x = np.asarray(feature, dtype=np.float64).reshape(-1)
    if x.size != model.feature_dim:
        raise DimensionMismatch(f"feature has {x.size} coordinates, model expects {model.feature_dim}",
                                module="rbfnet")
    return activation_matrix(model.centers, model.widths, x[None, :])[0]


def one_hot(labels, classes):
    index = {c: i for i, c in enumerate(classes)}
    y = np.zeros((len(labels), len(classes)))
    y[np.arange(len(labels)), [index[l] for l in labels]] = 1.0
    return y


def train_rbf(features, labels, config: RbfConfig = RbfConfig(), fingerprint=None) -> RbfModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = [int(l) for l in labels]
    if len(x) == 0:
        raise TooFewPoints("no training features")
    if len(x) != len(labels):
        raise DimensionMismatch(f"{len(x)} features but {len(labels)} labels", module="rbfnet")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise TooFewPoints(f"need at least 2 classes, got {len(classes)}")
    k = config.centers_for(len(classes))
    if k > len(x):
        raise TooFewPoints(f"{k} centers requested for {len(x)} training features")
    if config.width_mode == "p_nearest" and k > 1 and config.width_p >= k:
        raise InvalidConfig(f"width_p ({config.width_p}) must be smaller than the center count ({k})",
                            module="rbfnet")

    # canonical sample order: the trained model must not depend on input order
    order = np.lexsort(tuple(x[:, j] for j in reversed(range(x.shape[1]))) + (np.asarray(labels),))
    x = np.ascontiguousarray(x[order])
    labels = [labels[i] for i in order]

    centers, _ = kmeans(x, k, seed=config.kmeans_seed, max_iters=config.kmeans_max_iters,
                        restarts=config.kmeans_restarts)
    widths = compute_widths(centers, config.width_mode, config.width_p)
    phi = activation_matrix(centers, widths, x)
    weights = solve_output_weights(phi, one_hot(labels, classes), config.ridge_lambda)
    return RbfModel(centers, widths, weights, tuple(classes), config, fingerprint)


def decide(scores, class_labels, threshold) -> Decision:
    best = int(np.argmax(scores))  # first maximum, i.e. the lowest label
    # one-hot regression can overshoot 1; cap the confidence so a threshold above 1 rejects everything
    if min(scores[best], 1.0) < threshold:
        return Decision(None, scores)
    return Decision(class_labels[best], scores)


def classify(model: RbfModel, feature) -> Decision:
    scores = activations(model, feature) @ model.weights
    return decide(scores, model.class_labels, model.config.reject_threshold)


def classify_many(model: RbfModel, features) -> List[Decision]:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    scores = activation_matrix(model.centers, model.widths, x) @ model.weights
    return [decide(row, model.class_labels, model.config.reject_threshold) for row in scores]


# ---------------------------------------------------------------------------
# serialization


def dumps_model(model: RbfModel) -> str:
    doc = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": model.config.as_dict(),
        "class_labels": list(model.class_labels),
        "centers": model.centers.tolist(),
        "widths": model.widths.tolist(),
        "weights": model.weights.tolist(),
        "fingerprint": model.fingerprint,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_model(text: str, source="<string>") -> RbfModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{source}: invalid JSON ({exc.msg})", module="rbfnet") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise SchemaViolation(f"{source}: not an RBF model file", module="rbfnet")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaViolation(f"{source}: unsupported model version {doc.get('version')!r}", module="rbfnet")
    try:
        centers = np.asarray(doc["centers"], dtype=np.float64)
        return RbfModel(
            centers=centers.reshape(len(doc["centers"]), -1),
            widths=doc["widths"],
            weights=doc["weights"],
            class_labels=tuple(doc["class_labels"]),
            config=RbfConfig(**doc["config"]),
            fingerprint=doc.get("fingerprint"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaViolation):
            raise
        raise SchemaViolation(f"{source}: malformed model file ({exc})", module="rbfnet") from None


def save_model(model: RbfModel, path) -> None:
    try:
        Path(path).write_text(dumps_model(model), encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


def load_model(path) -> RbfModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(f"no such model file: {path}") from None
    return loads_model(text, source=str(path))
