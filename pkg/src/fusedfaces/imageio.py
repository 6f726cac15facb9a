"""Grayscale rasters, binary PGM files, dataset manifests and synthetic data.

Pixels are held as float64 intensities in [0, 1]. Quantization to integer
samples happens only when reading or writing files.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedHeader,
    MissingFile,
    MissingImage,
    InvalidConfig,
    SchemaViolation,
    TruncatedPayload,
    UnwritablePath,
)
from .seeding import make_rng

MODALITIES = ("visual", "thermal", "fused")
MANIFEST_NAME = "manifest.json"

_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Fixed-size grayscale raster.

    ``pixels`` is a read-only ``(height, width)`` float64 array; its row-major
    flattening is :attr:`vector`.
    """

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be >= 1, got {self.width}x{self.height}")
        px = np.array(self.pixels, dtype=np.float64)
        if px.size != self.width * self.height:
            raise ValueError(
                f"expected {self.width * self.height} pixels for {self.width}x{self.height}, got {px.size}"
            )
        px = px.reshape(self.height, self.width)
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, array) -> "GrayImage":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def vector(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class DatasetEntry:
    subject_id: int
    modality: str
    image_path: Path
    pose_tag: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.subject_id, bool) or not isinstance(self.subject_id, int) or self.subject_id < 1:
            raise SchemaViolation(f"subject_id must be an integer >= 1, got {self.subject_id!r}")
        if self.modality not in MODALITIES:
            raise SchemaViolation(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        object.__setattr__(self, "image_path", Path(self.image_path))

    @property
    def sort_key(self):
        return (self.subject_id, self.pose_tag or "", self.modality, str(self.image_path))


@dataclass(frozen=True)
class Dataset:
    entries: tuple
    image_width: int
    image_height: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise SchemaViolation("dataset has no entries")
        if self.image_width < 1 or self.image_height < 1:
            raise SchemaViolation("dataset image dimensions must be >= 1")

    def select(self, modality):
        return [e for e in self.entries if e.modality == modality]

    @property
    def subject_ids(self):
        return sorted({e.subject_id for e in self.entries})


# ---------------------------------------------------------------------------
# PGM


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise MissingFile(f"no such file: {path}") from None
    except IsADirectoryError:
        raise MissingFile(f"not a file: {path}") from None


def _parse_header(data: bytes, path):
    """Return ``(width, height, maxval, payload_offset)`` for a P5 buffer."""
    if data[:2] != b"P5":
        raise MalformedHeader(f"{path}: expected magic 'P5', got {data[:2]!r}")
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        # whitespace and comments between header fields
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                eol = data.find(b"\n", pos)
                pos = n if eol < 0 else eol + 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        token = data[start:pos]
        if not token:
            raise MalformedHeader(f"{path}: header ends before width/height/maxval")
        if not token.isdigit():
            raise MalformedHeader(f"{path}: non-numeric header field {token!r}")
        fields.append(int(token))
    if pos >= n or data[pos] not in _WHITESPACE:
        raise MalformedHeader(f"{path}: missing whitespace byte after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeader(f"{path}: invalid dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeader(f"{path}: maxval {maxval} outside 1..65535")
    return width, height, maxval, pos


def read_pgm_header(path):
    """Parse only the header of a P5 file: ``(width, height, maxval)``."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4096)
    except FileNotFoundError:
        raise MissingFile(f"no such file: {path}") from None
    width, height, maxval, _ = _parse_header(head, path)
    return width, height, maxval


def load_pgm(path) -> GrayImage:
    """Read a binary (P5) PGM file; samples are scaled by ``1 / maxval``."""
    data = _read_bytes(path)
    width, height, maxval, offset = _parse_header(data, path)
    sample_size = 1 if maxval < 256 else 2
    needed = width * height * sample_size
    payload = data[offset:offset + needed]
    if len(payload) < needed:
        raise TruncatedPayload(f"{path}: expected {needed} payload bytes, found {len(payload)}")
    dtype = np.uint8 if sample_size == 1 else np.dtype(">u2")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    if raw.max(initial=0) > maxval:
        raise MalformedHeader(f"{path}: payload sample exceeds maxval {maxval}")
    return GrayImage(width, height, raw / maxval)


def quantize(pixels) -> np.ndarray:
    """Map [0, 1] intensities to 8-bit samples, rounding half up."""
    return np.floor(np.asarray(pixels, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(image: GrayImage, comment: Optional[str] = None) -> bytes:
    header = b"P5\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("utf-8") + b"\n"
    header += f"{image.width} {image.height}\n255\n".encode("ascii")
    return header + quantize(image.pixels).tobytes()


def save_pgm(image: GrayImage, path, comment: Optional[str] = None) -> None:
    """Write ``image`` as an 8-bit P5 file, optionally with header comment lines."""
    data = encode_pgm(image, comment)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# manifests


def _require(cond, message):
    if not cond:
        raise SchemaViolation(message)


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def load_manifest(path) -> Dataset:
    """Load a JSON dataset manifest and check every image's header dimensions.

    Relative image paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFile(f"no such manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None

    _require(isinstance(doc, dict), f"{path}: manifest must be a JSON object")
    width, height = doc.get("width"), doc.get("height")
    _require(_is_int(width) and width >= 1, f"{path}: 'width' must be a positive integer")
    _require(_is_int(height) and height >= 1, f"{path}: 'height' must be a positive integer")
    raw_entries = doc.get("entries")
    _require(isinstance(raw_entries, list), f"{path}: 'entries' must be a list")
    _require(len(raw_entries) > 0, f"{path}: 'entries' must not be empty")

    base = path.parent
    entries = []
    for i, raw in enumerate(raw_entries):
        _require(isinstance(raw, dict), f"{path}: entry {i} must be an object")
        unknown = set(raw) - {"subject_id", "modality", "path", "pose_tag"}
        _require(not unknown, f"{path}: entry {i} has unknown keys {sorted(unknown)}")
        _require(_is_int(raw.get("subject_id")), f"{path}: entry {i} 'subject_id' must be an integer")
        _require(isinstance(raw.get("path"), str) and raw["path"], f"{path}: entry {i} 'path' must be a string")
        pose = raw.get("pose_tag")
        _require(pose is None or isinstance(pose, str), f"{path}: entry {i} 'pose_tag' must be a string")
        entry = DatasetEntry(
            subject_id=raw["subject_id"],
            modality=raw.get("modality"),
            image_path=base / raw["path"],
            pose_tag=pose,
        )
        try:
            w, h, _ = read_pgm_header(entry.image_path)
        except MissingFile:
            raise MissingImage(f"entry {i} references missing image {entry.image_path}") from None
        if (w, h) != (width, height):
            raise DimensionMismatch(
                f"entry {i} ({raw['path']}) is {w}x{h}, manifest declares {width}x{height}"
            )
        entries.append(entry)
    return Dataset(tuple(entries), width, height)


def save_manifest(dataset: Dataset, path, fingerprint: Optional[dict] = None) -> None:
    """Write ``dataset`` as a manifest with paths relative to the manifest file."""
    path = Path(path)
    base = path.parent.resolve()
    entries = []
    for e in dataset.entries:
        rel = os.path.relpath(Path(e.image_path).resolve(), base)
        item = {"subject_id": e.subject_id, "modality": e.modality, "path": Path(rel).as_posix()}
        if e.pose_tag is not None:
            item["pose_tag"] = e.pose_tag
        entries.append(item)
    doc = {"width": dataset.image_width, "height": dataset.image_height, "entries": entries}
    if fingerprint is not None:
        doc["fingerprint"] = fingerprint
    try:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# synthetic data


def _bilinear_upsample(grid, height, width):
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def smooth_field(rng, height, width, octaves=(3, 5, 9)):
    """Sum of bilinearly upsampled uniform grids, rescaled to [0.15, 0.85]."""
    field_ = np.zeros((height, width))
    for i, cells in enumerate(octaves):
        grid = rng.random((cells, cells))
        field_ += _bilinear_upsample(grid, height, width) / (i + 1)
    lo, hi = field_.min(), field_.max()
    if hi - lo < 1e-12:
        return np.full((height, width), 0.5)
    return 0.15 + 0.7 * (field_ - lo) / (hi - lo)


def generate_synthetic_dataset(num_classes, per_class, width, height, noise_sigma, seed,
                               output_dir) -> Dataset:
    """Write a paired visual/thermal stand-in dataset and return its manifest.

    Each class gets one smooth base pattern per modality, mixed with a
    pattern shared by all classes. Every image adds independent Gaussian
    noise and is clamped to [0, 1]. Output files are a pure function of the
    arguments.
    """
    for name, value, low in (("num_classes", num_classes, 2), ("per_class", per_class, 2),
                             ("width", width, 1), ("height", height, 1)):
        if not _is_int(value) or value < low:
            raise InvalidConfig(f"{name} must be an integer >= {low}, got {value!r}", module="imageio")
    if not np.isfinite(noise_sigma) or noise_sigma < 0:
        raise InvalidConfig(f"noise_sigma must be >= 0, got {noise_sigma!r}", module="imageio")

    out = Path(output_dir)
    try:
        for sub in ("visual", "thermal"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritablePath(f"cannot create {out}: {exc.strerror or exc}") from None

    shared = {m: smooth_field(make_rng(seed, "synth", m, "shared"), height, width)
              for m in ("visual", "thermal")}
    entries = []
    for cls in range(1, num_classes + 1):
        bases = {}
        for m in ("visual", "thermal"):
            own = smooth_field(make_rng(seed, "synth", m, "class", cls), height, width)
            bases[m] = 0.4 * shared[m] + 0.6 * own
        for i in range(per_class):
            pose = f"p{i:02d}"
            for m in ("visual", "thermal"):
                noise_rng = make_rng(seed, "synth", m, "noise", cls, i)
                px = bases[m] + noise_sigma * noise_rng.standard_normal((height, width))
                img = GrayImage(width, height, np.clip(px, 0.0, 1.0))
                file = out / m / f"s{cls:03d}_{pose}.pgm"
                save_pgm(img, file)
                entries.append(DatasetEntry(cls, m, file, pose))
    dataset = Dataset(tuple(entries), width, height)
    save_manifest(dataset, out / MANIFEST_NAME)
    return dataset


def check_uniform(images: Sequence[GrayImage], module="imageio"):
    """Return the common ``(height, width)`` of ``images`` or raise."""
    shape = images[0].shape
    for i, img in enumerate(images):
        if img.shape != shape:
            raise DimensionMismatch(
                f"image {i} is {img.width}x{img.height}, expected {shape[1]}x{shape[0]}", module=module
            )
    return shape


_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def safe_tag(tag: Optional[str]) -> str:
    """Filesystem-safe rendering of a pose tag."""
    return _SAFE.sub("_", tag) if tag else "none"
