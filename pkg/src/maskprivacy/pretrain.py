"""Momentum-contrast pretraining for the attribute backbone.

A query encoder is trained with InfoNCE against a momentum-averaged key
encoder and a fixed-size queue of past keys; both encoders carry a two-layer
projection head that is discarded when the backbone is exported. Single-
process implementation: the batch-shuffling trick used to decouple batch
norm across devices is unnecessary here and omitted.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from PIL import Image
from sklearn.base import BaseEstimator
from torch import nn
from torch.utils.data import DataLoader, Dataset
from torchvision import transforms

from .errors import ConfigMismatchError, InsufficientDataError
from .models import (
    FEATURE_DIM,
    IMAGENET_MEAN,
    IMAGENET_STD,
    _FaceDataset,
    build_backbone,
    build_eval_transform,
)


class _ProjectionHead(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(FEATURE_DIM, FEATURE_DIM), nn.ReLU(), nn.Linear(FEATURE_DIM, dim)
        )

    def forward(self, x):
        return self.net(x)


class _Encoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.backbone = build_backbone()
        self.projector = _ProjectionHead(dim)

    def forward(self, x):
        return self.projector(self.backbone(x))


class _TwoViewDataset(Dataset):
    def __init__(self, images, transform):
        self.images = list(images)
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
        return self.transform(pil), self.transform(pil)


def build_contrastive_transform(image_size: int):
    blur_kernel = max(image_size // 20, 1)
    if blur_kernel % 2 == 0:
        blur_kernel += 1
    return transforms.Compose([
        transforms.RandomResizedCrop(image_size, scale=(0.2, 1.0)),
        transforms.RandomApply([transforms.ColorJitter(0.4, 0.4, 0.4, 0.1)], p=0.8),
        transforms.RandomGrayscale(p=0.2),
        transforms.RandomApply([transforms.GaussianBlur(blur_kernel, (0.1, 2.0))], p=0.5),
        transforms.RandomHorizontalFlip(0.5),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])


class ContrastivePretrainer(BaseEstimator):
    """Self-supervised backbone trainer.

    fit(X) expects a sequence of RGB arrays or image paths and needs no
    labels. loss_history_[0] is the untrained (epoch 0) contrastive loss;
    one entry per epoch follows. save_backbone exports the query trunk in
    the format AttributePredictor(pretrain=...) consumes.
    """

    def __init__(
        self,
        epochs: int = 3038,
        batch_size: int = 128,
        learning_rate: float = 0.03,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        queue_size: int = 4096,
        ema_momentum: float = 0.999,
        temperature: float = 0.2,
        projection_dim: int = 128,
        image_size: int = 224,
        seed: int = 0,
        device: Optional[str] = None,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.queue_size = queue_size
        self.ema_momentum = ema_momentum
        self.temperature = temperature
        self.projection_dim = projection_dim
        self.image_size = image_size
        self.seed = seed
        self.device = device

    def _device(self) -> torch.device:
        if self.device is not None:
            return torch.device(self.device)
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")

    def _validate_config(self):
        if self.epochs < 1:
            raise ConfigMismatchError(f"epochs must be >= 1, got {self.epochs}")
        if self.queue_size % self.batch_size != 0:
            raise ConfigMismatchError(
                f"queue_size {self.queue_size} must be a multiple of "
                f"batch_size {self.batch_size} so full batches tile the queue"
            )
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigMismatchError(f"ema_momentum must be in [0, 1), got {self.ema_momentum}")
        if self.temperature <= 0:
            raise ConfigMismatchError(f"temperature must be > 0, got {self.temperature}")

    @torch.no_grad()
    def _momentum_update(self, q: nn.Module, k: nn.Module):
        for pq, pk in zip(q.parameters(), k.parameters()):
            pk.mul_(self.ema_momentum).add_(pq, alpha=1.0 - self.ema_momentum)

    def _contrastive_logits(self, query, key, queue):
        query = nn.functional.normalize(query, dim=1)
        key = nn.functional.normalize(key, dim=1)
        l_pos = torch.einsum("nc,nc->n", query, key).unsqueeze(-1)
        l_neg = torch.einsum("nc,ck->nk", query, queue)
        logits = torch.cat([l_pos, l_neg], dim=1) / self.temperature
        labels = torch.zeros(logits.shape[0], dtype=torch.long, device=logits.device)
        return logits, labels, key

    def fit(self, X, y=None):
        self._validate_config()
        if len(X) < self.batch_size:
            raise InsufficientDataError(
                f"need at least one full batch ({self.batch_size}), got {len(X)} images"
            )
        torch.manual_seed(self.seed)
        device = self._device()
        encoder_q = _Encoder(self.projection_dim).to(device)
        encoder_k = _Encoder(self.projection_dim).to(device)
        encoder_k.load_state_dict(encoder_q.state_dict())
        for p in encoder_k.parameters():
            p.requires_grad_(False)

        queue = nn.functional.normalize(
            torch.randn(self.projection_dim, self.queue_size, device=device), dim=0
        )
        ptr = 0

        ds = _TwoViewDataset(X, build_contrastive_transform(self.image_size))
        loader = DataLoader(
            ds, batch_size=self.batch_size, shuffle=True, drop_last=True,
            generator=torch.Generator().manual_seed(self.seed),
        )
        criterion = nn.CrossEntropyLoss()
        optimizer = torch.optim.SGD(
            encoder_q.parameters(), lr=self.learning_rate,
            momentum=self.momentum, weight_decay=self.weight_decay,
        )

        # Untrained baseline loss; queue is left untouched.
        encoder_q.eval(), encoder_k.eval()
        with torch.no_grad():
            total, seen = 0.0, 0
            for v1, v2 in loader:
                logits, labels, _ = self._contrastive_logits(
                    encoder_q(v1.to(device)), encoder_k(v2.to(device)), queue
                )
                total += float(criterion(logits, labels)) * len(v1)
                seen += len(v1)
        self.loss_history_: List[float] = [total / max(seen, 1)]

        for _epoch in range(1, self.epochs + 1):
            encoder_q.train(), encoder_k.train()
            total, seen = 0.0, 0
            for v1, v2 in loader:
                v1, v2 = v1.to(device), v2.to(device)
                with torch.no_grad():
                    self._momentum_update(encoder_q, encoder_k)
                    key = encoder_k(v2)
                logits, labels, key = self._contrastive_logits(encoder_q(v1), key, queue)
                loss = criterion(logits, labels)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                with torch.no_grad():
                    n = key.shape[0]
                    queue[:, ptr:ptr + n] = key.t()
                    ptr = (ptr + n) % self.queue_size
                total += float(loss.detach()) * len(v1)
                seen += len(v1)
            self.loss_history_.append(total / max(seen, 1))

        self.encoder_ = encoder_q.eval()
        self.backbone_ = encoder_q.backbone
        return self

    def encode(self, X, batch_size: Optional[int] = None) -> np.ndarray:
        """Backbone features (N, 2048) for downstream probes."""
        if not hasattr(self, "backbone_"):
            raise RuntimeError("pretrainer is not fitted")
        ds = _FaceDataset(X, torch.zeros(len(X)), build_eval_transform(self.image_size))
        loader = DataLoader(ds, batch_size=batch_size or self.batch_size, shuffle=False)
        device = next(self.backbone_.parameters()).device
        outs = []
        self.backbone_.eval()
        with torch.no_grad():
            for xb, _ in loader:
                outs.append(self.backbone_(xb.to(device)).cpu())
        return torch.cat(outs).numpy()

    def save_backbone(self, path) -> None:
        """Atomic export of the query-encoder trunk (projection head dropped)."""
        if not hasattr(self, "backbone_"):
            raise RuntimeError("pretrainer is not fitted")
        payload = {
            "format": "maskprivacy-backbone-v1",
            "state_dict": self.backbone_.state_dict(),
            "params": self.get_params(),
            "loss_history": self.loss_history_,
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
