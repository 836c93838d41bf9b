import numpy as np
import pytest
import torch

from maskprivacy.errors import (
    ConfigMismatchError,
    CorruptCheckpointError,
    InsufficientDataError,
)
from maskprivacy.models import AttributePredictor, build_backbone, load_backbone_checkpoint
from maskprivacy.pretrain import ContrastivePretrainer, build_contrastive_transform
from maskprivacy.synthetic import generate_face

IMG = 64


def face_pool(n, seed=0):
    rng = np.random.default_rng(seed)
    races = ("white", "black", "asian", "indian", "other")
    return [
        generate_face(int(rng.integers(1, 80)), ("male", "female")[i % 2],
                      races[i % 5], size=IMG, rng=rng)
        for i in range(n)
    ]


def small_pretrainer(**overrides):
    params = dict(epochs=2, batch_size=128, queue_size=256, image_size=IMG,
                  seed=7, device="cpu")
    params.update(overrides)
    return ContrastivePretrainer(**params)


@pytest.fixture(scope="module")
def fitted_pretrainer():
    pre = small_pretrainer()
    pre.fit(face_pool(256, seed=2))
    return pre


class TestConfigValidation:
    def test_queue_must_tile_by_batch(self):
        pre = small_pretrainer(queue_size=100, batch_size=64)
        with pytest.raises(ConfigMismatchError):
            pre.fit(face_pool(64))

    def test_bad_temperature(self):
        with pytest.raises(ConfigMismatchError):
            small_pretrainer(temperature=0.0).fit(face_pool(128))

    def test_bad_ema(self):
        with pytest.raises(ConfigMismatchError):
            small_pretrainer(ema_momentum=1.0).fit(face_pool(128))

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            small_pretrainer().fit(face_pool(64))  # below one full batch of 128


class TestTransform:
    def test_two_views_differ(self):
        tf = build_contrastive_transform(IMG)
        from PIL import Image

        torch.manual_seed(0)
        pil = Image.fromarray(face_pool(1)[0])
        v1, v2 = tf(pil), tf(pil)
        assert v1.shape == (3, IMG, IMG)
        assert not torch.equal(v1, v2)


class TestFit:
    def test_loss_history(self, fitted_pretrainer):
        h = fitted_pretrainer.loss_history_
        assert len(h) == 3  # untrained baseline + 2 epochs
        assert all(np.isfinite(v) and v > 0 for v in h)

    def test_backbone_exposed(self, fitted_pretrainer):
        out = fitted_pretrainer.backbone_(torch.zeros(1, 3, IMG, IMG))
        assert out.shape == (1, 2048)

    def test_encode(self, fitted_pretrainer):
        feats = fitted_pretrainer.encode(face_pool(4, seed=9))
        assert feats.shape == (4, 2048)

    def test_deterministic_same_seed(self, fitted_pretrainer):
        rerun = small_pretrainer()
        rerun.fit(face_pool(256, seed=2))
        assert rerun.loss_history_ == pytest.approx(
            fitted_pretrainer.loss_history_, abs=1e-4
        )


class TestBackboneExport:
    def test_round_trip_into_predictor(self, fitted_pretrainer, tmp_path):
        path = tmp_path / "backbone.pt"
        fitted_pretrainer.save_backbone(path)
        trunk = build_backbone()
        load_backbone_checkpoint(trunk, path)
        want = fitted_pretrainer.backbone_.state_dict()
        got = trunk.state_dict()
        assert set(want) == set(got)
        for key in want:
            assert torch.equal(want[key], got[key])

    def test_predictor_consumes_backbone(self, fitted_pretrainer, tmp_path):
        path = tmp_path / "backbone.pt"
        fitted_pretrainer.save_backbone(path)
        faces = face_pool(16, seed=5)
        y = ["male" if i % 2 == 0 else "female" for i in range(16)]
        est = AttributePredictor(task="sex_cls", epochs=1, batch_size=8,
                                 image_size=IMG, pretrain=str(path),
                                 augmentation="none", device="cpu")
        est.fit(faces[:12], y[:12], X_val=faces[12:], y_val=y[12:])
        assert len(est.val_history_) == 1

    def test_corrupt_backbone(self, tmp_path):
        path = tmp_path / "bad.pt"
        path.write_bytes(b"nonsense")
        with pytest.raises(CorruptCheckpointError):
            load_backbone_checkpoint(build_backbone(), path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "model.pt"
        torch.save({"format": "maskprivacy-attribute-v1"}, path)
        with pytest.raises(CorruptCheckpointError):
            load_backbone_checkpoint(build_backbone(), path)

    def test_unfitted_export_rejected(self, tmp_path):
        with pytest.raises(RuntimeError):
            small_pretrainer().save_backbone(tmp_path / "x.pt")
