"""End-to-end run orchestration: mask -> split -> train -> predict -> analyze -> pvi.

Each stage records a fingerprint (config subset plus content digests of its
inputs) in run_manifest.json. Re-running with an unchanged fingerprint and
intact outputs skips the stage, so interrupted runs resume where they left
off and identical fresh runs are byte-for-byte reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .datasets import (
    labels_for_partition,
    make_random_split,
    make_uniform_split,
    read_manifest,
    scan_labels,
    write_manifest,
)
from .errors import EmptyPartitionError, StageError
from .masking import MaskSpec, mask_dataset
from .privacy import (
    REFERENCE_IMPORTANCE,
    ImportanceWeights,
    build_pvi_report,
    compute_rii,
    read_survey_csv,
    write_pvi_report,
)
from .records import attach_attributes, read_records_csv, write_records_csv
from .stats import analyze_task

logger = logging.getLogger(__name__)

DEFAULT_TASKS = ("sex_cls", "race_cls", "age_cls", "age_reg")


@dataclass
class Diagnostic:
    field: str
    message: str
    remedy: str

    def __str__(self):
        return f"{self.field}: {self.message} ({self.remedy})"


@dataclass
class RunConfig:
    """Declarative description of one pipeline run."""

    input_dir: str = ""
    outputs_dir: str = ""
    seed: int = 0
    mask: Dict[str, object] = field(default_factory=dict)
    split: Dict[str, object] = field(default_factory=dict)
    train: Dict[str, object] = field(default_factory=dict)
    pretrain: Dict[str, object] = field(default_factory=dict)
    analyze: Dict[str, object] = field(default_factory=dict)
    pvi: Dict[str, object] = field(default_factory=dict)

    _KNOWN = ("input_dir", "outputs_dir", "seed", "mask", "split", "train",
              "pretrain", "analyze", "pvi")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        cfg = cls()
        for key, value in (raw or {}).items():
            if key not in cls._KNOWN:
                raise ValueError(
                    f"unknown config key {key!r}; known keys: {', '.join(cls._KNOWN)}"
                )
            setattr(cfg, key, value)
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        import yaml

        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"config root must be a mapping, got {type(raw).__name__}")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._KNOWN}

    # convenient accessors with defaults
    def tasks(self) -> Tuple[str, ...]:
        return tuple(self.train.get("tasks", DEFAULT_TASKS))

    def mask_spec(self) -> MaskSpec:
        color = self.mask.get("color", (178, 190, 181))
        if isinstance(color, str):
            color = parse_color(color)
        return MaskSpec(
            coverage=self.mask.get("coverage", "high"),
            shape=self.mask.get("shape", "pointed"),
            color=tuple(color),
            opacity=float(self.mask.get("opacity", 1.0)),
        )


def parse_color(text: str) -> Tuple[int, int, int]:
    """Parse '#RRGGBB', 'RRGGBB', or 'r,g,b' into an RGB tuple."""
    text = text.strip().lstrip("#")
    if "," in text:
        parts = [int(p) for p in text.split(",")]
    else:
        if len(text) != 6:
            raise ValueError(f"expected RRGGBB hex, got {text!r}")
        parts = [int(text[i:i + 2], 16) for i in (0, 2, 4)]
    if len(parts) != 3:
        raise ValueError(f"expected three color components, got {parts}")
    return tuple(parts)


def validate_config(config: RunConfig) -> List[Diagnostic]:
    """Actionable diagnostics; an empty list means the config can run."""
    from .models import AUGMENTATIONS, TASKS

    diags: List[Diagnostic] = []
    if not config.input_dir:
        diags.append(Diagnostic("input_dir", "missing", "set input_dir to the image directory"))
    elif not Path(config.input_dir).is_dir():
        diags.append(Diagnostic("input_dir", f"{config.input_dir} is not a directory",
                                "point input_dir at an existing directory"))
    if not config.outputs_dir:
        diags.append(Diagnostic("outputs_dir", "missing", "set outputs_dir"))
    try:
        config.mask_spec()
    except Exception as exc:
        diags.append(Diagnostic("mask", str(exc), "fix coverage/shape/color/opacity"))
    kind = config.split.get("kind", "random")
    if kind not in ("random", "uniform"):
        diags.append(Diagnostic("split.kind", f"unknown kind {kind!r}",
                                "use 'random' or 'uniform'"))
    for task in config.tasks():
        if task not in TASKS:
            diags.append(Diagnostic("train.tasks", f"unknown task {task!r}",
                                    f"choose from {sorted(TASKS)}"))
    aug = config.train.get("augmentation", "basic")
    if aug not in AUGMENTATIONS:
        diags.append(Diagnostic("train.augmentation", f"unknown augmentation {aug!r}",
                                f"choose from {AUGMENTATIONS}"))
    if int(config.train.get("epochs", 3500)) < 1:
        diags.append(Diagnostic("train.epochs", "must be >= 1", "raise epochs"))
    survey = config.pvi.get("survey")
    if survey and not Path(survey).is_file():
        diags.append(Diagnostic("pvi.survey", f"{survey} does not exist",
                                "point pvi.survey at a survey CSV or remove it"))
    return diags


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(*parts: object) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _digest_dir(directory: Path, suffixes=(".jpg", ".jpeg", ".png")) -> str:
    entries = []
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in suffixes:
            entries.append((p.name, _sha256_file(p)))
    return _digest(entries)


@dataclass
class StageRecord:
    name: str
    fingerprint: str
    status: str = "ok"  # "ok" or "skipped"
    seconds: float = 0.0
    outputs: List[str] = field(default_factory=list)
    info: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "fingerprint": self.fingerprint,
            "status": self.status, "seconds": round(self.seconds, 3),
            "outputs": self.outputs, "info": self.info,
        }


class RunManifest:
    """Stage ledger persisted as run_manifest.json inside outputs_dir."""

    VERSION = 1

    def __init__(self, outputs_dir: Path, config: RunConfig):
        self.outputs_dir = Path(outputs_dir)
        self.config = config
        self.stages: Dict[str, StageRecord] = {}

    @property
    def path(self) -> Path:
        return self.outputs_dir / "run_manifest.json"

    def to_dict(self) -> dict:
        return {
            "version": self.VERSION,
            "config": self.config.to_dict(),
            "stages": {name: rec.to_dict() for name, rec in self.stages.items()},
        }

    def write(self) -> None:
        self.outputs_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.outputs_dir, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)

    @classmethod
    def load(cls, outputs_dir) -> Optional[dict]:
        path = Path(outputs_dir) / "run_manifest.json"
        if not path.is_file():
            return None
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            return None


def _outputs_intact(outputs_dir: Path, rel_paths: Sequence[str]) -> bool:
    return all((outputs_dir / rel).exists() for rel in rel_paths)


def run_pipeline(config: RunConfig) -> RunManifest:
    """Execute every stage, skipping the ones whose fingerprints still hold.

    Raises StageError naming the first stage that fails.
    """
    diags = validate_config(config)
    if diags:
        raise StageError("config", ValueError("; ".join(str(d) for d in diags)))

    outputs_dir = Path(config.outputs_dir)
    outputs_dir.mkdir(parents=True, exist_ok=True)
    previous = RunManifest.load(outputs_dir)
    manifest = RunManifest(outputs_dir, config)

    def run_stage(name: str, fingerprint: str, fn: Callable[[], StageRecord]):
        prev = (previous or {}).get("stages", {}).get(name)
        if (
            prev
            and prev.get("fingerprint") == fingerprint
            and _outputs_intact(outputs_dir, prev.get("outputs", []))
        ):
            rec = StageRecord(
                name=name, fingerprint=fingerprint, status="skipped",
                outputs=prev["outputs"], info=prev.get("info", {}),
            )
            logger.info("stage %s: skipped (fingerprint unchanged)", name)
        else:
            start = time.monotonic()
            try:
                rec = fn()
            except Exception as exc:
                manifest.write()
                raise StageError(name, exc) from exc
            rec.name, rec.fingerprint = name, fingerprint
            rec.seconds = time.monotonic() - start
            logger.info("stage %s: ok in %.1fs", name, rec.seconds)
        manifest.stages[name] = rec
        manifest.write()
        return rec

    input_dir = Path(config.input_dir)
    masked_dir = outputs_dir / "masked"
    models_dir = outputs_dir / "models"
    pred_dir = outputs_dir / "predictions"
    analysis_dir = outputs_dir / "analysis"

    # -- mask ---------------------------------------------------------------
    input_digest = _digest_dir(input_dir)
    spec = config.mask_spec()
    mask_fp = _digest("mask", config.mask, input_digest)

    def do_mask() -> StageRecord:
        summary = mask_dataset(
            input_dir, masked_dir, spec,
            parallelism=int(config.mask.get("parallelism", 1)),
        )
        if summary.ok_count == 0:
            raise EmptyPartitionError("masking produced no usable images")
        outs = ["masked/manifest.tsv", "masked/summary.json"] + [
            str(Path("masked") / Path(r.output_path).name)
            for r in summary.results if r.status == "ok"
        ]
        return StageRecord("mask", mask_fp, outputs=outs, info=summary.to_dict())

    run_stage("mask", mask_fp, do_mask)

    # -- split ----------------------------------------------------------------
    masked_digest = _digest_dir(masked_dir)
    split_fp = _digest("split", config.split, config.seed, masked_digest)
    split_path = outputs_dir / "split.tsv"

    def do_split() -> StageRecord:
        labels, _skipped = scan_labels(masked_dir)
        if not labels:
            raise EmptyPartitionError("no parseable masked images to split")
        kind = config.split.get("kind", "random")
        if kind == "uniform":
            sm = make_uniform_split(
                labels, config.seed,
                balance_on=tuple(config.split.get("balance_on", ("sex", "race"))),
                test_quota=config.split.get("test_quota"),
            )
        else:
            sm = make_random_split(labels, config.seed)
        write_manifest(sm, split_path)
        return StageRecord("split", split_fp, outputs=["split.tsv"],
                           info={"kind": sm.kind, **sm.metadata})

    run_stage("split", split_fp, do_split)
    split_manifest = read_manifest(split_path)

    def partition_paths(part: str) -> Tuple[List[str], list]:
        labels = labels_for_partition(split_manifest, part)
        paths, kept = [], []
        for label in labels:
            hits = [p for p in masked_dir.glob(label.image_id + ".*")
                    if p.suffix.lower() in (".jpg", ".jpeg", ".png")]
            if hits:
                paths.append(str(hits[0]))
                kept.append(label)
        return paths, kept

    # -- pretrain (optional) ---------------------------------------------------
    backbone_path = None
    if config.pretrain.get("enabled", False):
        from .pretrain import ContrastivePretrainer

        pre_fp = _digest("pretrain", config.pretrain, config.seed, masked_digest,
                         _sha256_file(split_path))
        backbone_path = models_dir / "backbone.pt"

        def do_pretrain() -> StageRecord:
            paths, _ = partition_paths("train")
            kwargs = {k: v for k, v in config.pretrain.items() if k != "enabled"}
            pre = ContrastivePretrainer(seed=config.seed, **kwargs)
            pre.fit(paths)
            pre.save_backbone(backbone_path)
            return StageRecord("pretrain", pre_fp, outputs=["models/backbone.pt"],
                               info={"loss_history": pre.loss_history_})

        run_stage("pretrain", pre_fp, do_pretrain)

    # -- train / predict / analyze, one stage each per task --------------------
    from .models import AttributePredictor, predict_records, targets_for_task

    train_cfg = {k: v for k, v in config.train.items() if k != "tasks"}
    for task in config.tasks():
        model_path = models_dir / f"{task}.pt"
        train_fp = _digest("train", task, train_cfg, config.seed, masked_digest,
                           _sha256_file(split_path),
                           _sha256_file(backbone_path) if backbone_path else None)

        def do_train(task=task, model_path=model_path) -> StageRecord:
            X_train, l_train = partition_paths("train")
            X_val, l_val = partition_paths("val")
            if not X_train or not X_val:
                raise EmptyPartitionError(f"empty train or val partition for {task}")
            est = AttributePredictor(
                task=task, seed=config.seed,
                pretrain=str(backbone_path) if backbone_path else None,
                **train_cfg,
            )
            est.fit(X_train, targets_for_task(l_train, task),
                    X_val=X_val, y_val=targets_for_task(l_val, task))
            est.save(model_path)
            return StageRecord(
                "", "", outputs=[f"models/{task}.pt"],
                info={
                    "best_epoch": est.best_epoch_,
                    "best_val_metric": est.best_val_metric_,
                    "baseline_val_metric": est.baseline_val_metric_,
                },
            )

        run_stage(f"train:{task}", train_fp, do_train)

        pred_path = pred_dir / f"{task}.csv"
        predict_fp = _digest("predict", task, _sha256_file(model_path),
                             _sha256_file(split_path), masked_digest)

        def do_predict(task=task, model_path=model_path, pred_path=pred_path) -> StageRecord:
            X_test, l_test = partition_paths("test")
            if not X_test:
                raise EmptyPartitionError(f"empty test partition for {task}")
            est = AttributePredictor.load(model_path)
            records = predict_records(est, X_test, l_test)
            pred_dir.mkdir(parents=True, exist_ok=True)
            write_records_csv(records, pred_path)
            return StageRecord("", "", outputs=[f"predictions/{task}.csv"],
                               info={"n": len(records)})

        run_stage(f"predict:{task}", predict_fp, do_predict)

        analysis_path = analysis_dir / f"{task}.json"
        analyze_fp = _digest("analyze", task, config.analyze, _sha256_file(pred_path))

        def do_analyze(task=task, pred_path=pred_path, analysis_path=analysis_path) -> StageRecord:
            records = read_records_csv(pred_path, task=task)
            records = attach_attributes(records, split_manifest.labels)
            report = analyze_task(
                records,
                group_attrs=tuple(config.analyze.get("group_attrs",
                                                     ("sex", "race", "age_bin"))),
            )
            analysis_dir.mkdir(parents=True, exist_ok=True)
            analysis_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            return StageRecord("", "", outputs=[f"analysis/{task}.json"],
                               info={"metrics": report["metrics"]})

        run_stage(f"analyze:{task}", analyze_fp, do_analyze)

    # -- pvi --------------------------------------------------------------------
    analysis_digest = _digest([
        _sha256_file(analysis_dir / f"{t}.json") for t in config.tasks()
        if (analysis_dir / f"{t}.json").is_file()
    ])
    survey = config.pvi.get("survey")
    pvi_fp = _digest("pvi", config.pvi,
                     _sha256_file(Path(survey)) if survey else None, analysis_digest)

    def do_pvi() -> StageRecord:
        if survey:
            weights = compute_rii(read_survey_csv(survey))
        else:
            weights = ImportanceWeights(values=dict(REFERENCE_IMPORTANCE),
                                        scheme="reference")
        attr_by_task = {"sex_cls": "sex", "race_cls": "race", "age_cls": "age"}
        predictability = {}
        for task, attr in attr_by_task.items():
            path = analysis_dir / f"{task}.json"
            if task in config.tasks() and path.is_file():
                metrics = json.loads(path.read_text())["metrics"]
                predictability[attr] = metrics["accuracy"]
        if not predictability:
            raise EmptyPartitionError("no classification analyses available for PVI")
        sub = ImportanceWeights(
            values={a: weights.values[a] for a in predictability},
            n_responses=weights.n_responses, scheme=weights.scheme,
        )
        report = build_pvi_report(sub, {"masked_face": predictability})
        write_pvi_report(report, outputs_dir / "pvi.json")
        return StageRecord("", "", outputs=["pvi.json"],
                           info={"pvi": report["modalities"]["masked_face"]["pvi"]})

    run_stage("pvi", pvi_fp, do_pvi)
    return manifest
