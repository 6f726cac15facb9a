"""Per-class genuine/impostor test protocol and Table-style reports.

Every class is trained on ``train_per_class`` images. It is then probed
with ``genuine`` held-out images of its own and ``impostor`` held-out images
drawn round-robin from the other classes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, Optional

from .eigenspace import Eigenspace, project
from .errors import InsufficientImages, MissingFile, SchemaViolation, UnwritablePath
from .imageio import Dataset, DatasetEntry, load_pgm
from .rbfnet import Decision, RbfModel, classify
from .seeding import make_rng

RECOGNITION_DEFINITION = (
    "recognition rate = (genuine probes accepted as the class + impostor probes not accepted "
    "as the class) / all probes"
)
FRR_DEFINITION = "false rejection rate = genuine probes rejected or misclassified / genuine probes"


@dataclass(frozen=True)
class ProbeSet:
    class_id: int
    genuine: tuple
    impostor: tuple

    @property
    def entries(self):
        return self.genuine + self.impostor


@dataclass(frozen=True)
class SplitPlan:
    train_entries: tuple
    probes: tuple
    seed: int = 0
    genuine_count: int = 5
    impostor_count: int = 5

    def __post_init__(self):
        object.__setattr__(self, "train_entries", tuple(self.train_entries))
        object.__setattr__(self, "probes", tuple(sorted(self.probes, key=lambda p: p.class_id)))
        train_paths = {str(e.image_path) for e in self.train_entries}
        for ps in self.probes:
            if len(ps.genuine) != self.genuine_count or len(ps.impostor) != self.impostor_count:
                raise SchemaViolation(
                    f"class {ps.class_id} probe set has {len(ps.genuine)}+{len(ps.impostor)} probes, "
                    f"expected {self.genuine_count}+{self.impostor_count}",
                    module="harness",
                )
            if any(e.subject_id != ps.class_id for e in ps.genuine):
                raise SchemaViolation(f"class {ps.class_id} has a genuine probe of another class",
                                      module="harness")
            if any(e.subject_id == ps.class_id for e in ps.impostor):
                raise SchemaViolation(f"class {ps.class_id} has an impostor probe of its own class",
                                      module="harness")
            leaked = [e for e in ps.entries if str(e.image_path) in train_paths]
            if leaked:
                raise SchemaViolation(f"probe {leaked[0].image_path} is also a training image",
                                      module="harness")

    def probe_set(self, class_id):
        for ps in self.probes:
            if ps.class_id == class_id:
                return ps
        raise KeyError(class_id)


def _group_by_class(dataset: Dataset):
    fused = [e for e in dataset.entries if e.modality == "fused"]
    if not fused:
        raise SchemaViolation("dataset has no fused entries to split", module="harness")
    groups: Dict[int, list] = {}
    for e in sorted(fused, key=lambda e: e.sort_key):
        groups.setdefault(e.subject_id, []).append(e)
    return groups


def make_split(dataset: Dataset, train_per_class=10, genuine_probes=5, impostor_probes=5,
               seed=0) -> SplitPlan:
    groups = _group_by_class(dataset)
    classes = sorted(groups)
    if len(classes) < 2:
        raise InsufficientImages(f"need at least 2 classes, dataset has {len(classes)}")
    if train_per_class < 1 or genuine_probes < 0 or impostor_probes < 0:
        raise InsufficientImages("train_per_class must be >= 1 and probe counts >= 0")
    need = train_per_class + genuine_probes
    for c in classes:
        have = len(groups[c])
        if have < need:
            raise InsufficientImages(
                f"class {c} has {have} images but {need} are needed "
                f"({train_per_class} train + {genuine_probes} genuine); short by {need - have}"
            )

    train, held = [], {}
    for c in classes:
        perm = make_rng(seed, "split", c).permutation(len(groups[c]))
        train.extend(sorted((groups[c][i] for i in perm[:train_per_class]), key=lambda e: e.sort_key))
        held[c] = [groups[c][i] for i in perm[train_per_class:]]

    probes = []
    for pos, c in enumerate(classes):
        others = classes[pos + 1:] + classes[:pos]
        pools = {}
        for o in others:
            order = make_rng(seed, "impostor", c, o).permutation(len(held[o]))
            pools[o] = [held[o][i] for i in order]
        impostors = []
        taken = {o: 0 for o in others}
        turn = 0
        while len(impostors) < impostor_probes:
            live = [o for o in others if taken[o] < len(pools[o])]
            if not live:
                raise InsufficientImages(
                    f"class {c}: only {len(impostors)} held-out impostor images available, "
                    f"{impostor_probes} requested"
                )
            o = others[turn % len(others)]
            turn += 1
            if taken[o] < len(pools[o]):
                impostors.append(pools[o][taken[o]])
                taken[o] += 1
        probes.append(ProbeSet(c, tuple(held[c][:genuine_probes]), tuple(impostors)))
    return SplitPlan(tuple(train), tuple(probes), seed, genuine_probes, impostor_probes)


# ---------------------------------------------------------------------------
# split files


def _entry_doc(e: DatasetEntry, base: Path):
    doc = {"subject_id": e.subject_id, "modality": e.modality,
           "path": Path(os.path.relpath(Path(e.image_path).resolve(), base)).as_posix()}
    if e.pose_tag is not None:
        doc["pose_tag"] = e.pose_tag
    return doc


def _entry_from(doc, base: Path):
    return DatasetEntry(doc["subject_id"], doc["modality"], base / doc["path"], doc.get("pose_tag"))


def save_split(plan: SplitPlan, path, fingerprint=None) -> None:
    path = Path(path)
    base = path.parent.resolve()
    doc = {
        "seed": plan.seed,
        "genuine_count": plan.genuine_count,
        "impostor_count": plan.impostor_count,
        "train": [_entry_doc(e, base) for e in plan.train_entries],
        "probes": [
            {"class_id": ps.class_id,
             "genuine": [_entry_doc(e, base) for e in ps.genuine],
             "impostor": [_entry_doc(e, base) for e in ps.impostor]}
            for ps in plan.probes
        ],
        "fingerprint": fingerprint,
    }
    try:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


def load_split(path) -> SplitPlan:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFile(f"no such split file: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc.msg})", module="harness") from None
    base = path.parent
    try:
        return SplitPlan(
            train_entries=tuple(_entry_from(d, base) for d in doc["train"]),
            probes=tuple(
                ProbeSet(p["class_id"],
                         tuple(_entry_from(d, base) for d in p["genuine"]),
                         tuple(_entry_from(d, base) for d in p["impostor"]))
                for p in doc["probes"]
            ),
            seed=doc["seed"],
            genuine_count=doc["genuine_count"],
            impostor_count=doc["impostor_count"],
        )
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"{path}: malformed split file ({exc})", module="harness") from None


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class ClassResult:
    """Outcome counts for one probed class; every rate is derived from them."""

    class_id: int
    genuine_accepted: int = 0
    genuine_rejected: int = 0
    genuine_misclassified: int = 0
    impostor_false_accepts: int = 0
    impostor_rejected: int = 0
    impostor_other_class: int = 0

    @property
    def genuine_count(self):
        return self.genuine_accepted + self.genuine_rejected + self.genuine_misclassified

    @property
    def impostor_count(self):
        return self.impostor_false_accepts + self.impostor_rejected + self.impostor_other_class

    @property
    def total_probes(self):
        return self.genuine_count + self.impostor_count

    @property
    def correct(self):
        return self.genuine_accepted + self.impostor_rejected + self.impostor_other_class

    @property
    def recognition_fraction(self) -> Fraction:
        return Fraction(self.correct, self.total_probes) if self.total_probes else Fraction(0)

    @property
    def false_rejection_fraction(self) -> Fraction:
        if not self.genuine_count:
            return Fraction(0)
        return Fraction(self.genuine_rejected + self.genuine_misclassified, self.genuine_count)

    @property
    def recognition_rate(self) -> float:
        return float(self.recognition_fraction)

    @property
    def false_rejection_rate(self) -> float:
        return float(self.false_rejection_fraction)

    @property
    def confusion_cells(self):
        return {
            "genuine_accepted": self.genuine_accepted,
            "genuine_rejected": self.genuine_rejected,
            "genuine_misclassified": self.genuine_misclassified,
            "impostor_false_accepts": self.impostor_false_accepts,
            "impostor_rejected": self.impostor_rejected,
            "impostor_other_class": self.impostor_other_class,
        }


@dataclass(frozen=True)
class EvaluationReport:
    per_class: tuple
    fingerprint: dict = field(default_factory=dict)

    @property
    def overall_fraction(self) -> Fraction:
        rates = [r.recognition_fraction for r in self.per_class]
        return sum(rates, Fraction(0)) / len(rates) if rates else Fraction(0)

    @property
    def max_fraction(self) -> Fraction:
        return max((r.recognition_fraction for r in self.per_class), default=Fraction(0))

    @property
    def mean_frr_fraction(self) -> Fraction:
        rates = [r.false_rejection_fraction for r in self.per_class]
        return sum(rates, Fraction(0)) / len(rates) if rates else Fraction(0)

    @property
    def overall_rate(self) -> float:
        return float(self.overall_fraction)

    @property
    def max_rate(self) -> float:
        return float(self.max_fraction)


def tally(class_id, genuine_decisions, impostor_decisions) -> ClassResult:
    counts = dict.fromkeys(ClassResult(class_id).confusion_cells, 0)
    for d in genuine_decisions:
        if d.label == class_id:
            counts["genuine_accepted"] += 1
        elif d.label is None:
            counts["genuine_rejected"] += 1
        else:
            counts["genuine_misclassified"] += 1
    for d in impostor_decisions:
        if d.label == class_id:
            counts["impostor_false_accepts"] += 1
        elif d.label is None:
            counts["impostor_rejected"] += 1
        else:
            counts["impostor_other_class"] += 1
    return ClassResult(class_id, **counts)


def evaluate_decisions(plan: SplitPlan, decide: Callable[[DatasetEntry], Decision],
                       fingerprint: Optional[dict] = None) -> EvaluationReport:
    """Score ``plan`` with an arbitrary per-entry decision function."""
    rows = []
    for ps in plan.probes:
        rows.append(tally(ps.class_id, [decide(e) for e in ps.genuine], [decide(e) for e in ps.impostor]))
    return EvaluationReport(tuple(rows), dict(fingerprint or {}))


def evaluate(space: Eigenspace, model: RbfModel, plan: SplitPlan, fingerprint=None,
             loader=load_pgm) -> EvaluationReport:
    cache = {}

    def decide(entry):
        key = str(entry.image_path)
        if key not in cache:
            cache[key] = classify(model, project(space, loader(entry.image_path)))
        return cache[key]

    return evaluate_decisions(plan, decide, fingerprint)


# ---------------------------------------------------------------------------
# rendering


def format_percent(value) -> str:
    """``Fraction``/float rate as a percentage with one decimal, rounded half up."""
    frac = value if isinstance(value, Fraction) else Fraction(value)
    tenths = math.floor(frac * 1000 + Fraction(1, 2))
    return f"{tenths // 10}.{tenths % 10}%"


HEADER = ("Class", "Total number of testing images", "Genuine probes", "Impostor probes",
          "Recognition rate", "False rejection rate")


def report_rows(report: EvaluationReport):
    rows = []
    for r in sorted(report.per_class, key=lambda r: r.class_id):
        rows.append((f"Class-{r.class_id}", str(r.total_probes), str(r.genuine_count), str(r.impostor_count),
                     format_percent(r.recognition_fraction), format_percent(r.false_rejection_fraction)))
    footer = (
        "Overall",
        str(sum(r.total_probes for r in report.per_class)),
        str(sum(r.genuine_count for r in report.per_class)),
        str(sum(r.impostor_count for r in report.per_class)),
        f"{format_percent(report.overall_fraction)} ({format_percent(report.max_fraction)} maximum)",
        format_percent(report.mean_frr_fraction),
    )
    return rows, footer


def render_report(report: EvaluationReport, fmt="tsv") -> str:
    config = json.dumps(report.fingerprint, sort_keys=True, separators=(",", ":"))
    rows, footer = report_rows(report)
    if fmt == "tsv":
        lines = [f"# config: {config}", f"# {RECOGNITION_DEFINITION}", f"# {FRR_DEFINITION}",
                 "\t".join(HEADER)]
        lines += ["\t".join(r) for r in rows]
        lines.append("\t".join(footer))
    elif fmt in ("markdown", "md"):
        lines = [f"<!-- config: {config} -->", f"<!-- {RECOGNITION_DEFINITION} -->",
                 f"<!-- {FRR_DEFINITION} -->", "",
                 "| " + " | ".join(HEADER) + " |",
                 "|" + "|".join(["---"] + ["---:"] * (len(HEADER) - 1)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("| " + " | ".join(f"**{c}**" for c in footer) + " |")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return "\n".join(lines) + "\n"
