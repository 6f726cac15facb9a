"""Eigenface basis construction, projection and reconstruction.

The basis is built with the snapshot method: for ``M`` training images of
``D`` pixels (``M << D``) the small ``M x M`` Gram matrix of the centered
data is diagonalised and its eigenvectors are mapped back to pixel space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    LengthMismatch,
    MissingFile,
    NoConvergence,
    NotSymmetric,
    SchemaViolation,
    TooFewImages,
    UnwritablePath,
)
from .imageio import GrayImage, check_uniform

log = logging.getLogger(__name__)

FORMAT_TAG = "fusedfaces-eigenspace"
FORMAT_VERSION = 1

RANK_CUTOFF = 1e-10
SIGN_EPS = 1e-12


def jacobi_eigen(matrix, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit the upper triangle in row order until the largest
    off-diagonal magnitude drops below ``tol * max(1, max|A|)``.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and the matching orthonormal eigenvectors as columns.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    if not np.all(np.isfinite(a)):
        raise NotSymmetric("matrix contains non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    asym = float(np.abs(a - a.T).max())
    if asym > 1e-10 * scale:
        raise NotSymmetric(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * scale

    def max_off(m):
        if n == 1:
            return 0.0
        return float(np.abs(m[~np.eye(n, dtype=bool)]).max())

    for _ in range(max_sweeps):
        if max_off(a) < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        if max_off(a) >= threshold:
            raise NoConvergence(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


@dataclass(frozen=True)
class EigenSelection:
    """How many eigenfaces to keep: a fixed count or a variance fraction."""

    mode: str = "variance"
    value: float = 0.95

    def __post_init__(self):
        mode = {"fixed_count": "fixed", "variance_fraction": "variance"}.get(self.mode, self.mode)
        if mode not in ("fixed", "variance"):
            raise InvalidConfig(f"eigen selection mode must be 'fixed' or 'variance', got {self.mode!r}",
                                module="eigenspace")
        if mode == "fixed":
            if float(self.value) != int(self.value) or int(self.value) < 1:
                raise InvalidConfig(f"fixed eigenface count must be an integer >= 1, got {self.value!r}",
                                    module="eigenspace")
            value = int(self.value)
        else:
            value = float(self.value)
            if not 0.0 < value <= 1.0:
                raise InvalidConfig(f"variance fraction must lie in (0, 1], got {self.value!r}",
                                    module="eigenspace")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "value", value)

    def choose(self, eigenvalues):
        """Number of leading components to retain from ``eigenvalues`` (descending)."""
        available = len(eigenvalues)
        if available == 0:
            return 0
        if self.mode == "fixed":
            if self.value > available:
                log.warning("requested %d eigenfaces but only %d are non-degenerate", self.value, available)
            return min(self.value, available)
        if self.value == 1.0:
            return available
        cumulative = np.cumsum(eigenvalues)
        # smallest U with cumulative[U - 1] >= f * total
        return min(int(np.searchsorted(cumulative, self.value * cumulative[-1], side="left")) + 1, available)


def _frozen(array):
    arr = np.ascontiguousarray(array, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Eigenspace:
    """Mean face, ``(U, D)`` orthonormal eigenface rows and their eigenvalues."""

    mean_face: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    source_dims: tuple
    fingerprint: Optional[dict] = None

    def __post_init__(self):
        width, height = self.source_dims
        dim = width * height
        mean = _frozen(self.mean_face).reshape(-1)
        basis = _frozen(self.basis).reshape(-1, dim)
        values = _frozen(self.eigenvalues).reshape(-1)
        if mean.size != dim:
            raise DimensionMismatch(f"mean face has {mean.size} pixels, expected {dim}", module="eigenspace")
        if basis.shape[0] != values.size:
            raise LengthMismatch(f"{basis.shape[0]} basis vectors but {values.size} eigenvalues")
        object.__setattr__(self, "mean_face", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", values)
        object.__setattr__(self, "source_dims", (int(width), int(height)))

    @property
    def num_components(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.mean_face.size


def build_eigenspace(train_images: Sequence[GrayImage], selection: EigenSelection = EigenSelection(),
                     fingerprint=None) -> Eigenspace:
    if len(train_images) < 2:
        raise TooFewImages(f"need at least 2 training images, got {len(train_images)}")
    height, width = check_uniform(train_images, module="eigenspace")
    x = np.stack([img.vector for img in train_images])
    m, d = x.shape
    mean = x.sum(axis=0) / m
    centered = (x - mean).T  # D x M
    gram = centered.T @ centered / m
    values, vectors = jacobi_eigen(gram)

    # rounding noise in the centered data is ~eps * max|x| per pixel
    noise_floor = d * (16.0 * np.finfo(float).eps * max(1.0, float(np.abs(x).max()))) ** 2
    lam_max = values[0] if values.size else 0.0
    if lam_max <= noise_floor:
        keep = 0
    else:
        keep = int(np.count_nonzero(values >= max(RANK_CUTOFF * lam_max, noise_floor)))
    count = selection.choose(values[:keep])
    if count == 0:
        log.warning("training images have no variance; eigenspace is empty")
        return Eigenspace(mean, np.zeros((0, d)), np.zeros(0), (width, height), fingerprint)

    basis = centered @ vectors[:, :count]
    basis /= np.linalg.norm(basis, axis=0)
    # re-orthonormalize without changing spans or directions
    q, r = np.linalg.qr(basis)
    basis = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    basis = basis.T
    for row in basis:
        lead = np.flatnonzero(np.abs(row) > SIGN_EPS)
        if lead.size and row[lead[0]] < 0:
            row *= -1.0
    return Eigenspace(mean, basis, np.clip(values[:count], 0.0, None), (width, height), fingerprint)


def _check_vector(space, vector):
    vec = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vec.size != space.dim:
        raise DimensionMismatch(f"image has {vec.size} pixels, eigenspace expects {space.dim}",
                                module="eigenspace")
    return vec


def project(space: Eigenspace, image: GrayImage) -> np.ndarray:
    """Coordinates of ``image`` in the eigenface basis: ``B (x - mean)``."""
    if (image.width, image.height) != space.source_dims:
        raise DimensionMismatch(
            f"image is {image.width}x{image.height}, eigenspace was built on "
            f"{space.source_dims[0]}x{space.source_dims[1]}",
            module="eigenspace",
        )
    return space.basis @ (image.vector - space.mean_face)


def project_many(space: Eigenspace, images: Sequence[GrayImage]) -> np.ndarray:
    return np.stack([project(space, img) for img in images]) if images else np.zeros((0, space.num_components))


def reconstruct(space: Eigenspace, feature) -> np.ndarray:
    """Unclamped ``(height, width)`` image ``mean + sum_i coords_i * basis_i``."""
    coords = np.asarray(feature, dtype=np.float64).reshape(-1)
    if coords.size != space.num_components:
        raise LengthMismatch(f"feature has {coords.size} coordinates, eigenspace has {space.num_components}")
    width, height = space.source_dims
    return (space.mean_face + coords @ space.basis).reshape(height, width)


# ---------------------------------------------------------------------------
# serialization


def dumps_eigenspace(space: Eigenspace) -> str:
    doc = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "width": space.source_dims[0],
        "height": space.source_dims[1],
        "num_components": space.num_components,
        "mean": space.mean_face.tolist(),
        "eigenvalues": space.eigenvalues.tolist(),
        "basis": space.basis.reshape(-1).tolist(),
        "fingerprint": space.fingerprint,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_eigenspace(text: str, source="<string>") -> Eigenspace:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{source}: invalid JSON ({exc.msg})", module="eigenspace") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise SchemaViolation(f"{source}: not an eigenspace file", module="eigenspace")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaViolation(f"{source}: unsupported eigenspace version {doc.get('version')!r}", module="eigenspace")
    try:
        width, height, u = int(doc["width"]), int(doc["height"]), int(doc["num_components"])
        basis = np.asarray(doc["basis"], dtype=np.float64)
        if basis.size != u * width * height:
            raise SchemaViolation(f"{source}: basis has {basis.size} values, expected {u * width * height}", module="eigenspace")
        return Eigenspace(
            mean_face=np.asarray(doc["mean"], dtype=np.float64),
            basis=basis.reshape(u, width * height),
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=np.float64),
            source_dims=(width, height),
            fingerprint=doc.get("fingerprint"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaViolation):
            raise
        raise SchemaViolation(f"{source}: malformed eigenspace file ({exc})", module="eigenspace") from None


def save_eigenspace(space: Eigenspace, path) -> None:
    try:
        Path(path).write_text(dumps_eigenspace(space), encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


def load_eigenspace(path) -> Eigenspace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(f"no such eigenspace file: {path}") from None
    return loads_eigenspace(text, source=str(path))
