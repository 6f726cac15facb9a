"""Pixel-wise weighted fusion of registered visual/thermal image pairs.

``F(x, y) = a * V(x, y) + b * T(x, y)``, clamped to [0, 1]. The default
weights are 0.70 (visual) and 0.30 (thermal).
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, SchemaViolation, UnpairedEntry, UnwritablePath
from .imageio import (
    MANIFEST_NAME,
    Dataset,
    DatasetEntry,
    GrayImage,
    load_pgm,
    safe_tag,
    save_manifest,
    save_pgm,
)

log = logging.getLogger(__name__)

DEFAULT_VISUAL_WEIGHT = 0.70
DEFAULT_THERMAL_WEIGHT = 0.30


@dataclass(frozen=True)
class FusionWeights:
    a: float = DEFAULT_VISUAL_WEIGHT
    b: float = DEFAULT_THERMAL_WEIGHT

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InvalidConfig(f"fusion weights must be finite, got a={a}, b={b}", module="fusion")
        if a < 0 or b < 0:
            raise InvalidConfig(f"fusion weights must be >= 0, got a={a}, b={b}", module="fusion")
        if a + b <= 0:
            raise InvalidConfig("fusion weights must satisfy a + b > 0", module="fusion")
        if abs(a + b - 1.0) > 1e-12:
            log.warning("fusion weights sum to %g, not 1; fused pixels will be clamped to [0, 1]", a + b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def as_dict(self):
        return {"visual_weight": self.a, "thermal_weight": self.b}


def fuse(visual: GrayImage, thermal: GrayImage, weights: FusionWeights = FusionWeights()) -> GrayImage:
    if visual.shape != thermal.shape:
        raise DimensionMismatch(
            f"visual image is {visual.width}x{visual.height}, thermal is {thermal.width}x{thermal.height}",
            module="fusion",
        )
    fused = weights.a * visual.pixels + weights.b * thermal.pixels
    return GrayImage(visual.width, visual.height, np.clip(fused, 0.0, 1.0))


def pair_entries(dataset: Dataset):
    """Match visual and thermal entries on ``(subject_id, pose_tag)``.

    Returns ``[(visual, thermal), ...]`` sorted by subject id then pose tag.
    Fused entries already in the dataset are ignored.
    """
    visual, thermal = {}, {}
    for e in dataset.entries:
        if e.modality == "fused":
            continue
        table = visual if e.modality == "visual" else thermal
        key = (e.subject_id, e.pose_tag)
        if key in table:
            raise UnpairedEntry(
                f"duplicate {e.modality} entry for subject {key[0]} pose {key[1]!r}: {e.image_path}"
            )
        table[key] = e
    for key in sorted(set(visual) ^ set(thermal), key=lambda k: (k[0], k[1] or "")):
        orphan = visual.get(key) or thermal.get(key)
        raise UnpairedEntry(
            f"{orphan.modality} entry for subject {key[0]} pose {key[1]!r} has no partner: {orphan.image_path}"
        )
    keys = sorted(visual, key=lambda k: (k[0], k[1] or ""))
    if not keys:
        raise SchemaViolation("dataset contains no visual/thermal pairs to fuse")
    return [(visual[k], thermal[k]) for k in keys]


def fuse_dataset(dataset: Dataset, weights: FusionWeights, output_dir, threads=1,
                 fingerprint=None) -> Dataset:
    """Fuse every visual/thermal pair and write the results under ``output_dir``.

    Output files are named ``s<subject>_<pose>.pgm`` and a manifest is written
    next to them. The returned dataset lists fused entries in pairing order,
    so it does not depend on the order of the input manifest.
    """
    pairs = pair_entries(dataset)
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritablePath(f"cannot create {out}: {exc.strerror or exc}") from None

    if fingerprint is None:
        fingerprint = weights.as_dict()
    comment = "fingerprint " + json.dumps(fingerprint, sort_keys=True, separators=(",", ":"))

    targets = [out / f"s{v.subject_id:03d}_{safe_tag(v.pose_tag)}.pgm" for v, _ in pairs]
    if len(set(targets)) != len(targets):
        raise UnpairedEntry("pose tags collide after filename sanitisation")

    def work(job):
        (v_entry, t_entry), target = job
        image = fuse(load_pgm(v_entry.image_path), load_pgm(t_entry.image_path), weights)
        if image.shape != (dataset.image_height, dataset.image_width):
            raise DimensionMismatch(
                f"{v_entry.image_path} is {image.width}x{image.height}, dataset declares "
                f"{dataset.image_width}x{dataset.image_height}",
                module="fusion",
            )
        save_pgm(image, target, comment=comment)
        return DatasetEntry(v_entry.subject_id, "fused", target, v_entry.pose_tag)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(work, zip(pairs, targets)))
    else:
        entries = [work(job) for job in zip(pairs, targets)]
    fused = Dataset(tuple(entries), dataset.image_width, dataset.image_height)
    save_manifest(fused, out / MANIFEST_NAME, fingerprint=fingerprint)
    return fused
