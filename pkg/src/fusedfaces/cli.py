"""Command-line entry point.

Subcommands mirror the pipeline stages::

    fusedfaces synth    --out data --classes 10 --per-class 20 --seed 7
    fusedfaces fuse     --manifest data/manifest.json --out fused
    fusedfaces train    --manifest fused/manifest.json --out model
    fusedfaces project  --eigenspace model/eigenspace.json --manifest fused/manifest.json --out feats.tsv
    fusedfaces eval     --eigenspace model/eigenspace.json --model model/model.json --split model/split.json
    fusedfaces pipeline --manifest data/manifest.json --out run

Every tunable can also come from a JSON file given with ``--config``; keys
mirror the flag names (dashes or underscores). Flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .eigenspace import EigenSelection, build_eigenspace, load_eigenspace, project, save_eigenspace
from .errors import FusedFacesError, InvalidConfig, MissingFile, SchemaViolation, UnwritablePath
from .fusion import FusionWeights, fuse_dataset
from .harness import evaluate, load_split, make_split, render_report, save_split
from .imageio import (
    MANIFEST_NAME,
    generate_synthetic_dataset,
    load_manifest,
    load_pgm,
)
from .rbfnet import RbfConfig, load_model, save_model, train_rbf
from .seeding import derive_seed

log = logging.getLogger("fusedfaces")

COMMANDS = ("synth", "fuse", "train", "project", "eval", "pipeline")

# resolved when neither the config file nor a flag sets a value
DEFAULTS = {
    "visual_weight": 0.70,
    "thermal_weight": 0.30,
    "eigen_mode": "variance",
    "eigen_value": 0.95,
    "centers": None,
    "width_mode": "p_nearest",
    "width_p": 2,
    "ridge": 1e-6,
    "reject_threshold": 0.5,
    "kmeans_iters": 100,
    "kmeans_restarts": 20,
    "train_per_class": 10,
    "genuine": 5,
    "impostor": 5,
    "classes": 10,
    "per_class": 20,
    "width": 32,
    "height": 32,
    "noise": 0.05,
    "seed": 0,
    "format": "tsv",
    "threads": None,
    "manifest": None,
    "out": None,
    "eigenspace": None,
    "model": None,
    "split": None,
}

_TYPES = {
    "visual_weight": float, "thermal_weight": float, "eigen_value": float, "ridge": float,
    "reject_threshold": float, "noise": float,
    "width_p": int, "kmeans_iters": int, "kmeans_restarts": int, "train_per_class": int,
    "genuine": int, "impostor": int, "classes": int, "per_class": int, "width": int,
    "height": int, "seed": int, "threads": int, "centers": int,
    "eigen_mode": str, "width_mode": str, "format": str,
    "manifest": str, "out": str, "eigenspace": str, "model": str, "split": str,
}


@dataclass(frozen=True)
class RunConfig:
    command: Optional[str]
    weights: FusionWeights = FusionWeights()
    selection: EigenSelection = EigenSelection()
    rbf: RbfConfig = RbfConfig()
    seed: int = 0
    report_format: str = "tsv"
    train_per_class: int = 10
    genuine: int = 5
    impostor: int = 5
    synth: dict = field(default_factory=lambda: {"classes": 10, "per_class": 20, "width": 32,
                                                  "height": 32, "noise": 0.05})
    threads: int = 1
    paths: dict = field(default_factory=dict)

    def fingerprint(self, **extra):
        """Everything that influences an artifact's bytes; paths and threads excluded."""
        doc = {
            "fusion": self.weights.as_dict(),
            "eigen": {"mode": self.selection.mode, "value": self.selection.value},
            "rbf": self.rbf.as_dict(),
            "split": {"train_per_class": self.train_per_class, "genuine": self.genuine,
                      "impostor": self.impostor},
            "seed": self.seed,
        }
        doc.update(extra)
        return doc


def _normalize_keys(doc, source):
    out = {}
    for key, value in doc.items():
        name = key.replace("-", "_")
        if name in DEFAULTS:
            out[name] = value
        else:
            raise SchemaViolation(f"{source}: unknown config key {key!r}", module="config")
    return out


def _coerce(name, value, source):
    if value is None:
        return None
    kind = _TYPES[name]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if kind is str and isinstance(value, str):
        return value
    raise SchemaViolation(f"{source}: {name.replace('_', '-')} must be of type {kind.__name__}, got {value!r}",
                          module="config")


def load_config(path=None, overrides=None, command=None) -> RunConfig:
    """Resolve defaults <- JSON config file <- explicit overrides into a RunConfig."""
    values = dict(DEFAULTS)
    source = str(path) if path else "<flags>"
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise MissingFile(f"no such config file: {path}") from None
        if text.strip():
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}: invalid JSON ({exc.msg})", module="config") from None
            if not isinstance(doc, dict):
                raise SchemaViolation(f"{path}: config must be a JSON object", module="config")
            for k, v in _normalize_keys(doc, source).items():
                values[k] = _coerce(k, v, source)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v, "<flags>")

    try:
        weights = FusionWeights(values["visual_weight"], values["thermal_weight"])
    except InvalidConfig as exc:
        raise SchemaViolation(f"{source}: violates FusionWeights invariant ({exc.args[0]})",
                              module="config") from None
    try:
        selection = EigenSelection(values["eigen_mode"], values["eigen_value"])
    except InvalidConfig as exc:
        raise SchemaViolation(f"{source}: violates EigenSelection invariant ({exc.args[0]})",
                              module="config") from None
    seed = values["seed"]
    try:
        rbf = RbfConfig(
            num_centers=values["centers"],
            width_mode=values["width_mode"],
            width_p=values["width_p"],
            ridge_lambda=values["ridge"],
            kmeans_max_iters=values["kmeans_iters"],
            kmeans_restarts=values["kmeans_restarts"],
            kmeans_seed=derive_seed(seed, "kmeans"),
            reject_threshold=values["reject_threshold"],
        )
    except InvalidConfig as exc:
        raise SchemaViolation(f"{source}: violates RbfConfig invariant ({exc.args[0]})",
                              module="config") from None
    if values["format"] not in ("tsv", "md", "markdown"):
        raise SchemaViolation(f"{source}: format must be tsv or md, got {values['format']!r}", module="config")
    minimums = {"train_per_class": 1, "genuine": 0, "impostor": 0, "classes": 2, "per_class": 2,
                "width": 1, "height": 1}
    for name, low in minimums.items():
        if values[name] < low:
            raise SchemaViolation(f"{source}: {name.replace('_', '-')} must be >= {low}", module="config")
    if values["noise"] < 0:
        raise SchemaViolation(f"{source}: noise must be >= 0", module="config")
    threads = values["threads"] if values["threads"] is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise SchemaViolation(f"{source}: threads must be >= 1", module="config")

    return RunConfig(
        command=command,
        weights=weights,
        selection=selection,
        rbf=rbf,
        seed=seed,
        report_format="md" if values["format"] == "markdown" else values["format"],
        train_per_class=values["train_per_class"],
        genuine=values["genuine"],
        impostor=values["impostor"],
        synth={k: values[k] for k in ("classes", "per_class", "width", "height", "noise")},
        threads=threads,
        paths={k: values[k] for k in ("manifest", "out", "eigenspace", "model", "split")},
    )


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--config", help="JSON config file; keys mirror flag names")
    p.add_argument("--seed", type=int, help="top-level seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads for per-image work (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log each stage to stderr")


def _add_fusion(p):
    p.add_argument("--visual-weight", type=float, help="weight a of the visual image (default 0.70)")
    p.add_argument("--thermal-weight", type=float, help="weight b of the thermal image (default 0.30)")


def _add_training(p):
    p.add_argument("--eigen-mode", choices=("fixed", "variance"), help="eigenface selection rule")
    p.add_argument("--eigen-value", type=float, help="eigenface count (fixed) or variance fraction")
    p.add_argument("--centers", type=int, help="RBF hidden units (default: 2 per class)")
    p.add_argument("--width-mode", choices=("p_nearest", "global_max"), help="RBF width heuristic")
    p.add_argument("--width-p", type=int, help="neighbours averaged by p_nearest (default 2)")
    p.add_argument("--ridge", type=float, help="ridge penalty of the output layer (default 1e-6)")
    p.add_argument("--reject-threshold", type=float, help="minimum winning score to accept (default 0.5)")
    p.add_argument("--kmeans-iters", type=int, help="Lloyd iteration cap (default 100)")
    p.add_argument("--kmeans-restarts", type=int, help="seeded k-means restarts (default 20)")
    p.add_argument("--train-per-class", type=int, help="training images per class (default 10)")
    p.add_argument("--genuine", type=int, help="genuine probes per class (default 5)")
    p.add_argument("--impostor", type=int, help="impostor probes per class (default 5)")


def _add_format(p):
    p.add_argument("--format", choices=("tsv", "md", "markdown"), help="report format (default tsv)")


def build_parser():
    parser = argparse.ArgumentParser(prog="fusedfaces", description="Fused visual/thermal face recognition")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic paired visual/thermal dataset")
    _add_common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--classes", type=int, help="number of subjects (default 10)")
    p.add_argument("--per-class", type=int, help="image pairs per subject (default 20)")
    p.add_argument("--width", type=int, help="image width (default 32)")
    p.add_argument("--height", type=int, help="image height (default 32)")
    p.add_argument("--noise", type=float, help="per-pixel Gaussian noise sigma (default 0.05)")

    p = sub.add_parser("fuse", help="fuse visual/thermal pairs of a manifest")
    _add_common(p)
    _add_fusion(p)
    p.add_argument("--manifest", help="manifest with visual and thermal entries")
    p.add_argument("--out", help="output directory for fused images and manifest")

    p = sub.add_parser("train", help="build the eigenspace and train the RBF network")
    _add_common(p)
    _add_training(p)
    p.add_argument("--manifest", help="manifest with fused entries")
    p.add_argument("--out", help="output directory for eigenspace.json, model.json, split.json")

    p = sub.add_parser("project", help="write eigenspace coordinates of a manifest's images")
    _add_common(p)
    p.add_argument("--eigenspace", help="eigenspace file")
    p.add_argument("--manifest", help="manifest of images to project")
    p.add_argument("--out", help="output TSV file (default stdout)")

    p = sub.add_parser("eval", help="run the per-class test protocol and print the report")
    _add_common(p)
    _add_format(p)
    p.add_argument("--eigenspace", help="eigenspace file")
    p.add_argument("--model", help="model file")
    p.add_argument("--split", help="split file written by train")
    p.add_argument("--out", help="report file (default stdout)")

    p = sub.add_parser("pipeline", help="fuse, train and evaluate end to end")
    _add_common(p)
    _add_fusion(p)
    _add_training(p)
    _add_format(p)
    p.add_argument("--manifest", help="manifest with visual and thermal entries")
    p.add_argument("--out", help="output directory for all artifacts")
    return parser


def _require(cfg, *names):
    for name in names:
        if not cfg.paths.get(name):
            raise InvalidConfig(f"--{name} is required for '{cfg.command}'", module="cli")
    return [cfg.paths[n] for n in names]


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritablePath(f"cannot create {path}: {exc.strerror or exc}") from None
    return Path(path)


def _write(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# stages


def cmd_synth(cfg):
    (out,) = _require(cfg, "out")
    s = cfg.synth
    dataset = generate_synthetic_dataset(s["classes"], s["per_class"], s["width"], s["height"],
                                         s["noise"], cfg.seed, out)
    log.info("synth: wrote %d entries to %s", len(dataset.entries), out)
    print(Path(out) / MANIFEST_NAME)


def cmd_fuse(cfg):
    manifest, out = _require(cfg, "manifest", "out")
    fused = fuse_dataset(load_manifest(manifest), cfg.weights, out, threads=cfg.threads)
    log.info("fuse: wrote %d fused images to %s", len(fused.entries), out)
    print(Path(out) / MANIFEST_NAME)
    return fused


def _train(cfg, fused_dataset, out):
    plan = make_split(fused_dataset, cfg.train_per_class, cfg.genuine, cfg.impostor, seed=cfg.seed)
    images = [load_pgm(e.image_path) for e in plan.train_entries]
    log.info("train: building eigenspace from %d images", len(images))
    space = build_eigenspace(images, cfg.selection)
    features = [project(space, img) for img in images]
    labels = [e.subject_id for e in plan.train_entries]
    fp = cfg.fingerprint(num_components=space.num_components)
    space = replace(space, fingerprint=fp)
    log.info("train: %d eigenfaces retained; fitting RBF network", space.num_components)
    model = train_rbf(features, labels, cfg.rbf, fingerprint=fp)
    save_eigenspace(space, out / "eigenspace.json")
    save_model(model, out / "model.json")
    save_split(plan, out / "split.json", fingerprint=fp)
    return space, model, plan


def cmd_train(cfg):
    manifest, out = _require(cfg, "manifest", "out")
    out = _mkdir(out)
    _train(cfg, load_manifest(manifest), out)
    print(out)


def cmd_project(cfg):
    path, manifest = _require(cfg, "eigenspace", "manifest")
    space = load_eigenspace(path)
    dataset = load_manifest(manifest)
    config = json.dumps(space.fingerprint or {}, sort_keys=True, separators=(",", ":"))
    lines = [f"# config: {config}",
             "\t".join(["subject_id", "modality", "pose_tag"]
                       + [f"c{i + 1}" for i in range(space.num_components)])]
    for e in sorted(dataset.entries, key=lambda e: e.sort_key):
        coords = project(space, load_pgm(e.image_path))
        lines.append("\t".join([str(e.subject_id), e.modality, e.pose_tag or ""] + [repr(float(c)) for c in coords]))
    text = "\n".join(lines) + "\n"
    if cfg.paths.get("out"):
        _write(cfg.paths["out"], text)
    else:
        sys.stdout.write(text)


def cmd_eval(cfg):
    es, mp, sp = _require(cfg, "eigenspace", "model", "split")
    space, model, plan = load_eigenspace(es), load_model(mp), load_split(sp)
    report = evaluate(space, model, plan, fingerprint=model.fingerprint or space.fingerprint)
    text = render_report(report, cfg.report_format)
    if cfg.paths.get("out"):
        _write(cfg.paths["out"], text)
    sys.stdout.write(text)


def cmd_pipeline(cfg):
    manifest, out = _require(cfg, "manifest", "out")
    out = _mkdir(out)
    log.info("pipeline: fusing %s", manifest)
    fused = fuse_dataset(load_manifest(manifest), cfg.weights, out / "fused", threads=cfg.threads)
    space, model, plan = _train(cfg, fused, out)
    log.info("pipeline: evaluating %d probe sets", len(plan.probes))
    report = evaluate(space, model, plan, fingerprint=model.fingerprint)
    text = render_report(report, cfg.report_format)
    _write(out / f"report.{cfg.report_format}", text)
    sys.stdout.write(text)
    return report


HANDLERS = {
    "synth": cmd_synth,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "project": cmd_project,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose") and v is not None}
    try:
        cfg = load_config(args.config, overrides, command=args.command)
        HANDLERS[args.command](cfg)
    except FusedFacesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
