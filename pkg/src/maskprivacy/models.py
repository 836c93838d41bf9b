"""Soft-biometric attribute models on a ResNet50 backbone.

Four tasks share one architecture: a ResNet50 trunk and a linear head sized
by the task (sex 2, race 5, age bins 7, age regression 1). Training follows
a plain SGD recipe with per-epoch validation; the kept checkpoint is the
epoch with the best validation metric, earliest epoch winning ties. The
untrained (epoch 0) metric is recorded as a baseline but never selected.
"""

from __future__ import annotations

import copy
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from sklearn.base import BaseEstimator
from torch import nn
from torch.utils.data import DataLoader, Dataset
from torchvision import transforms
from torchvision.models import resnet50

from .datasets import AGE_BIN_NAMES, RACES, SEXES, AttributeLabel, age_bin_name
from .errors import (
    ConfigMismatchError,
    CorruptCheckpointError,
    EmptyPartitionError,
    InsufficientDataError,
)
from .records import PredictionRecord

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
FEATURE_DIM = 2048
AUGMENTATIONS = ("none", "basic", "randaugment_default")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    head_size: int
    kind: str              # "classification" or "regression"
    attribute: str         # label field feeding the target
    classes: Optional[Tuple[str, ...]] = None


TASKS: Dict[str, TaskSpec] = {
    "sex_cls": TaskSpec("sex_cls", 2, "classification", "sex", SEXES),
    "race_cls": TaskSpec("race_cls", 5, "classification", "race", RACES),
    "age_cls": TaskSpec("age_cls", 7, "classification", "age_bin", AGE_BIN_NAMES),
    "age_reg": TaskSpec("age_reg", 1, "regression", "age_years"),
}


def select_checkpoint(val_metrics: Sequence[float]) -> int:
    """1-based epoch of the best validation metric; earliest epoch wins ties.

    Non-finite metrics (a diverged epoch) are never selected; if no epoch
    produced a finite metric the run is unusable and that is an error.
    """
    if not val_metrics:
        raise ValueError("no validation metrics recorded")
    finite = [m for m in val_metrics if math.isfinite(m)]
    if not finite:
        raise ValueError(f"training diverged: no finite validation metric in {val_metrics}")
    best = max(finite)
    return next(i for i, m in enumerate(val_metrics, start=1) if m == best)


def build_backbone() -> nn.Module:
    """ResNet50 trunk with the classifier removed; emits 2048-d features.

    Residual branches start at zero (identity blocks), keeping activation
    magnitudes flat through depth; without this an untrained trunk emits
    features in the hundreds and early fine-tuning is unstable.
    """
    net = resnet50(weights=None, zero_init_residual=True)
    net.fc = nn.Identity()
    return net


class _AttributeNet(nn.Module):
    def __init__(self, head_size: int):
        super().__init__()
        self.backbone = build_backbone()
        self.head = nn.Linear(FEATURE_DIM, head_size)
        # Zero-init the head: a fresh backbone emits large-magnitude features,
        # and default init then puts initial outputs tens of sigma out, which
        # destabilizes the first epochs (MSE especially). Zero weights start
        # regression at the target mean and classification at uniform logits.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        return self.head(self.backbone(x))


class _FaceDataset(Dataset):
    """Images (arrays or paths) plus targets; transform applied lazily."""

    def __init__(self, images, targets, transform):
        if len(images) != len(targets):
            raise ValueError("images and targets must align")
        self.images = list(images)
        self.targets = targets
        self.transform = transform

    def __len__(self):
        return len(self.images)

    def __getitem__(self, idx):
        item = self.images[idx]
        if isinstance(item, (str, Path)):
            with Image.open(item) as im:
                pil = im.convert("RGB")
        else:
            pil = Image.fromarray(np.asarray(item).astype(np.uint8)).convert("RGB")
        return self.transform(pil), self.targets[idx]


def build_eval_transform(image_size: int):
    return transforms.Compose([
        transforms.Resize((image_size, image_size)),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])


def build_train_transform(image_size: int, augmentation: str):
    if augmentation not in AUGMENTATIONS:
        raise ConfigMismatchError(
            f"augmentation must be one of {AUGMENTATIONS}, got {augmentation!r}"
        )
    steps: list = [transforms.Resize((image_size, image_size))]
    if augmentation == "basic":
        steps += [
            transforms.RandomHorizontalFlip(0.5),
            transforms.RandomCrop(image_size, padding=max(image_size // 16, 1)),
        ]
    elif augmentation == "randaugment_default":
        # Library defaults deliberately untouched.
        steps += [transforms.RandAugment(), transforms.RandomHorizontalFlip(0.5)]
    steps += [transforms.ToTensor(), transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD)]
    return transforms.Compose(steps)


class AttributePredictor(BaseEstimator):
    """Single-task attribute estimator with an sklearn-style surface.

    fit(X, y) trains from scratch (or from a contrastive backbone checkpoint
    given via `pretrain`), validates every epoch, and restores the best
    checkpoint before returning. predict/predict_proba run the restored
    model. X holds RGB arrays or image paths; y holds class names for
    classification tasks and float ages for regression.
    """

    def __init__(
        self,
        task: str = "sex_cls",
        epochs: int = 3500,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        augmentation: str = "basic",
        image_size: int = 224,
        pretrain: Optional[str] = None,
        head_size: Optional[int] = None,
        seed: int = 0,
        device: Optional[str] = None,
    ):
        self.task = task
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augmentation = augmentation
        self.image_size = image_size
        self.pretrain = pretrain
        self.head_size = head_size
        self.seed = seed
        self.device = device

    # -- configuration ----------------------------------------------------

    def _task_spec(self) -> TaskSpec:
        if self.task not in TASKS:
            raise ConfigMismatchError(
                f"unknown task {self.task!r}; expected one of {sorted(TASKS)}"
            )
        spec = TASKS[self.task]
        if self.head_size is not None and self.head_size != spec.head_size:
            raise ConfigMismatchError(
                f"task {self.task} requires head size {spec.head_size}, "
                f"got {self.head_size}"
            )
        if self.epochs < 1:
            raise ConfigMismatchError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigMismatchError(f"learning rate must be > 0, got {self.learning_rate}")
        return spec

    def _device(self) -> torch.device:
        if self.device is not None:
            return torch.device(self.device)
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")

    def _encode_targets(self, y, spec: TaskSpec) -> torch.Tensor:
        if spec.kind == "classification":
            index = {c: i for i, c in enumerate(spec.classes)}
            try:
                codes = [index[str(v)] for v in y]
            except KeyError as exc:
                raise ValueError(f"label {exc} not in classes for {spec.name}") from exc
            return torch.tensor(codes, dtype=torch.long)
        return torch.tensor([float(v) for v in y], dtype=torch.float32)

    # -- training ----------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        spec = self._task_spec()
        if len(X) < 2:
            raise InsufficientDataError(f"need at least 2 training samples, got {len(X)}")
        if (X_val is None) != (y_val is None):
            raise ValueError("provide X_val and y_val together")
        if X_val is None:
            X_val, y_val = X, y  # fall back: validate on train

        torch.manual_seed(self.seed)
        device = self._device()
        model = _AttributeNet(spec.head_size).to(device)
        if self.pretrain is not None:
            load_backbone_checkpoint(model.backbone, self.pretrain)

        targets = self._encode_targets(y, spec)
        val_targets = self._encode_targets(y_val, spec)
        if spec.kind == "regression":
            mean = float(targets.mean())
            std = float(targets.std(unbiased=False))
            self.target_stats_ = (mean, max(std, 1e-6))
            targets = (targets - self.target_stats_[0]) / self.target_stats_[1]
        else:
            self.target_stats_ = None

        train_ds = _FaceDataset(X, targets, build_train_transform(self.image_size, self.augmentation))
        val_ds = _FaceDataset(X_val, val_targets, build_eval_transform(self.image_size))
        loader = DataLoader(
            train_ds, batch_size=self.batch_size, shuffle=True,
            generator=torch.Generator().manual_seed(self.seed), drop_last=False,
        )
        val_loader = DataLoader(val_ds, batch_size=self.batch_size, shuffle=False)

        criterion = nn.CrossEntropyLoss() if spec.kind == "classification" else nn.MSELoss()
        optimizer = torch.optim.SGD(
            model.parameters(), lr=self.learning_rate,
            momentum=self.momentum, weight_decay=self.weight_decay,
        )

        self.classes_ = spec.classes
        self.baseline_val_metric_ = self._validate(model, val_loader, spec, device)
        self.val_history_ = []
        self.loss_history_ = []
        best_state, best_metric = None, -np.inf
        for _epoch in range(1, self.epochs + 1):
            model.train()
            epoch_loss, seen = 0.0, 0
            for xb, yb in loader:
                xb, yb = xb.to(device), yb.to(device)
                optimizer.zero_grad()
                out = model(xb)
                if spec.kind == "regression":
                    loss = criterion(out.squeeze(1), yb)
                else:
                    loss = criterion(out, yb)
                loss.backward()
                optimizer.step()
                epoch_loss += float(loss.detach()) * len(xb)
                seen += len(xb)
            self.loss_history_.append(epoch_loss / max(seen, 1))
            # Refresh BatchNorm running stats against the current weights
            # before validating. Early in training the defaults lag the fast
            # moving activations badly enough that eval-mode outputs (and the
            # checkpoint choice made from them) are meaningless without this.
            torch.optim.swa_utils.update_bn(loader, model, device=device)
            metric = self._validate(model, val_loader, spec, device)
            self.val_history_.append(metric)
            # Strict > keeps the earliest epoch on ties; a diverged (non-finite)
            # epoch is never a candidate.
            if math.isfinite(metric) and (best_state is None or metric > best_metric):
                best_state, best_metric = copy.deepcopy(model.state_dict()), metric
        self.best_epoch_ = select_checkpoint(self.val_history_)
        self.best_val_metric_ = self.val_history_[self.best_epoch_ - 1]
        model.load_state_dict(best_state)
        self.model_ = model.to(device).eval()
        return self

    def _validate(self, model, loader, spec: TaskSpec, device) -> float:
        """Val metric, higher-is-better: accuracy, or -MAE in original units."""
        model.eval()
        correct, total, abs_err = 0, 0, 0.0
        with torch.no_grad():
            for xb, yb in loader:
                out = model(xb.to(device)).cpu()
                if spec.kind == "classification":
                    correct += int((out.argmax(dim=1) == yb).sum())
                    total += len(yb)
                else:
                    pred = out.squeeze(1)
                    if self.target_stats_ is not None:
                        pred = pred * self.target_stats_[1] + self.target_stats_[0]
                    abs_err += float((pred - yb).abs().sum())
                    total += len(yb)
        if total == 0:
            raise EmptyPartitionError("validation loader yielded no samples")
        return correct / total if spec.kind == "classification" else -abs_err / total

    # -- inference ---------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("predictor is not fitted; call fit or load first")

    def _forward(self, X) -> torch.Tensor:
        self._check_fitted()
        spec = self._task_spec()
        ds = _FaceDataset(X, torch.zeros(len(X)), build_eval_transform(self.image_size))
        loader = DataLoader(ds, batch_size=self.batch_size, shuffle=False)
        device = next(self.model_.parameters()).device
        outs = []
        self.model_.eval()
        with torch.no_grad():
            for xb, _ in loader:
                outs.append(self.model_(xb.to(device)).cpu())
        return torch.cat(outs) if outs else torch.zeros((0, spec.head_size))

    def predict(self, X):
        spec = self._task_spec()
        out = self._forward(X)
        if spec.kind == "regression":
            pred = out.squeeze(1)
            if self.target_stats_ is not None:
                pred = pred * self.target_stats_[1] + self.target_stats_[0]
            return pred.numpy().astype(float)
        codes = out.argmax(dim=1).numpy()
        return np.array([self.classes_[c] for c in codes])

    def predict_proba(self, X) -> np.ndarray:
        spec = self._task_spec()
        if spec.kind != "classification":
            raise ValueError(f"predict_proba is undefined for {self.task}")
        out = self._forward(X)
        return torch.softmax(out, dim=1).numpy()

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Atomic checkpoint write: temp file in the target dir, then rename."""
        self._check_fitted()
        payload = {
            "format": "maskprivacy-attribute-v1",
            "task": self.task,
            "params": self.get_params(),
            "state_dict": self.model_.state_dict(),
            "classes": list(self.classes_) if self.classes_ else None,
            "target_stats": self.target_stats_,
            "best_epoch": self.best_epoch_,
            "best_val_metric": self.best_val_metric_,
            "baseline_val_metric": self.baseline_val_metric_,
            "val_history": self.val_history_,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                torch.save(payload, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "AttributePredictor":
        path = Path(path)
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise CorruptCheckpointError(f"cannot load {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != "maskprivacy-attribute-v1":
            raise CorruptCheckpointError(f"{path} is not an attribute checkpoint")
        est = cls(**payload["params"])
        spec = est._task_spec()
        model = _AttributeNet(spec.head_size)
        try:
            model.load_state_dict(payload["state_dict"])
        except Exception as exc:
            raise CorruptCheckpointError(f"{path}: state dict mismatch: {exc}") from exc
        est.model_ = model.eval()
        est.classes_ = tuple(payload["classes"]) if payload["classes"] else None
        est.target_stats_ = payload["target_stats"]
        est.best_epoch_ = payload["best_epoch"]
        est.best_val_metric_ = payload["best_val_metric"]
        est.baseline_val_metric_ = payload["baseline_val_metric"]
        est.val_history_ = payload["val_history"]
        return est


def load_backbone_checkpoint(backbone: nn.Module, path) -> None:
    """Load a contrastive-pretraining backbone checkpoint into a trunk."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CorruptCheckpointError(f"cannot load {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != "maskprivacy-backbone-v1":
        raise CorruptCheckpointError(f"{path} is not a backbone checkpoint")
    try:
        backbone.load_state_dict(payload["state_dict"])
    except Exception as exc:
        raise CorruptCheckpointError(f"{path}: backbone mismatch: {exc}") from exc


def targets_for_task(labels: Sequence[AttributeLabel], task: str) -> list:
    """Ground-truth target vector for a task from attribute labels."""
    spec = TASKS[task]
    if spec.kind == "regression":
        return [float(l.age_years) for l in labels]
    if spec.attribute == "age_bin":
        return [age_bin_name(l.age_years) for l in labels]
    return [getattr(l, spec.attribute) for l in labels]


def predict_records(
    predictor: AttributePredictor,
    X,
    labels: Sequence[AttributeLabel],
) -> List[PredictionRecord]:
    """Run inference and pair predictions with ground truth and attributes."""
    spec = predictor._task_spec()
    truths = targets_for_task(labels, predictor.task)
    preds = predictor.predict(X)
    scores = predictor.predict_proba(X) if spec.kind == "classification" else None
    out = []
    for i, label in enumerate(labels):
        out.append(PredictionRecord(
            image_id=label.image_id,
            task=predictor.task,
            true_value=truths[i],
            predicted=float(preds[i]) if spec.kind == "regression" else str(preds[i]),
            scores=tuple(float(s) for s in scores[i]) if scores is not None else None,
            attributes={
                "sex": label.sex, "race": label.race,
                "age_bin": label.age_bin, "age_years": label.age_years,
            },
        ))
    return out
