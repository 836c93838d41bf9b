import json
from pathlib import Path

import pytest

from maskprivacy.errors import StageError
from maskprivacy.pipeline import RunConfig, parse_color, run_pipeline, validate_config
from maskprivacy.synthetic import generate_dataset

TRAIN_CFG = {
    "tasks": ["sex_cls", "age_reg"],
    "epochs": 1,
    "batch_size": 8,
    "image_size": 48,
    "augmentation": "none",
}


def make_config(input_dir, outputs_dir, **over) -> RunConfig:
    raw = {
        "input_dir": str(input_dir),
        "outputs_dir": str(outputs_dir),
        "seed": 0,
        "mask": {"coverage": "medium"},
        "train": dict(TRAIN_CFG),
    }
    raw.update(over)
    return RunConfig.from_dict(raw)


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            RunConfig.from_dict({"input_dirs": "x"})

    def test_from_yaml_rejects_non_mapping(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- just\n- a list\n")
        with pytest.raises(ValueError, match="mapping"):
            RunConfig.from_yaml(p)

    def test_from_yaml_empty_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("")
        cfg = RunConfig.from_yaml(p)
        assert cfg.input_dir == ""

    def test_default_tasks(self):
        cfg = RunConfig.from_dict({})
        assert cfg.tasks() == ("sex_cls", "race_cls", "age_cls", "age_reg")

    def test_mask_spec_parses_color_string(self):
        cfg = RunConfig.from_dict({"mask": {"color": "#0A141E"}})
        assert cfg.mask_spec().color == (10, 20, 30)

    @pytest.mark.parametrize("text,expected", [
        ("A0B0C0", (160, 176, 192)),
        ("#ffffff", (255, 255, 255)),
        ("1,2,3", (1, 2, 3)),
        (" 10, 20, 30 ", (10, 20, 30)),
    ])
    def test_parse_color(self, text, expected):
        assert parse_color(text) == expected

    @pytest.mark.parametrize("text", ["12345", "GGGGGG", "1,2", "1,2,3,4"])
    def test_parse_color_rejects(self, text):
        with pytest.raises(ValueError):
            parse_color(text)


class TestValidateConfig:
    def test_clean_config_no_diagnostics(self, tmp_path):
        assert validate_config(make_config(tmp_path, tmp_path / "out")) == []

    def test_missing_dirs(self):
        fields = [d.field for d in validate_config(RunConfig())]
        assert "input_dir" in fields
        assert "outputs_dir" in fields

    def test_nonexistent_input_dir(self, tmp_path):
        cfg = make_config(tmp_path / "nope", tmp_path / "out")
        diags = validate_config(cfg)
        assert any(d.field == "input_dir" and "not a directory" in d.message
                   for d in diags)

    @pytest.mark.parametrize("override,field", [
        ({"mask": {"coverage": "total"}}, "mask"),
        ({"split": {"kind": "stratified"}}, "split.kind"),
        ({"train": {**TRAIN_CFG, "tasks": ["hair_cls"]}}, "train.tasks"),
        ({"train": {**TRAIN_CFG, "augmentation": "mixup"}}, "train.augmentation"),
        ({"train": {**TRAIN_CFG, "epochs": 0}}, "train.epochs"),
        ({"pvi": {"survey": "/definitely/not/here.csv"}}, "pvi.survey"),
    ])
    def test_bad_values_flagged(self, tmp_path, override, field):
        cfg = make_config(tmp_path, tmp_path / "out", **override)
        assert field in [d.field for d in validate_config(cfg)]

    def test_diagnostic_str_names_field(self, tmp_path):
        cfg = make_config(tmp_path / "nope", tmp_path / "out")
        text = str(validate_config(cfg)[0])
        assert text.startswith("input_dir:")
        assert "(" in text  # remedy included


class TestStageErrors:
    def test_invalid_config_fails_as_config_stage(self, tmp_path):
        cfg = make_config(tmp_path / "nope", tmp_path / "out")
        with pytest.raises(StageError) as exc_info:
            run_pipeline(cfg)
        assert exc_info.value.stage == "config"

    def test_empty_input_fails_in_mask_stage(self, tmp_path):
        src = tmp_path / "empty"
        src.mkdir()
        with pytest.raises(StageError) as exc_info:
            run_pipeline(make_config(src, tmp_path / "out"))
        assert exc_info.value.stage == "mask"

    def test_too_few_images_fails_in_split_stage(self, tmp_path):
        src = tmp_path / "five"
        generate_dataset(src, count=5, seed=3, size=90)
        with pytest.raises(StageError) as exc_info:
            run_pipeline(make_config(src, tmp_path / "out"))
        assert exc_info.value.stage == "split"
        assert "at least 10" in str(exc_info.value.cause)

    def test_partial_manifest_written_on_failure(self, tmp_path):
        src = tmp_path / "five"
        generate_dataset(src, count=5, seed=3, size=90)
        out = tmp_path / "out"
        with pytest.raises(StageError):
            run_pipeline(make_config(src, out))
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["stages"]["mask"]["status"] == "ok"
        assert "split" not in manifest["stages"]


@pytest.fixture(scope="module")
def run_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    faces = root / "faces"
    generate_dataset(faces, count=40, seed=7, size=90)
    out = root / "out"
    manifest = run_pipeline(make_config(faces, out))
    return faces, out, manifest


EXPECTED_STAGES = {
    "mask", "split",
    "train:sex_cls", "predict:sex_cls", "analyze:sex_cls",
    "train:age_reg", "predict:age_reg", "analyze:age_reg",
    "pvi",
}


class TestFullRun:
    def test_all_stages_ran(self, run_env):
        _, _, manifest = run_env
        assert set(manifest.stages) == EXPECTED_STAGES
        assert all(rec.status == "ok" for rec in manifest.stages.values())

    def test_expected_files_exist(self, run_env):
        _, out, _ = run_env
        for rel in [
            "run_manifest.json", "split.tsv", "masked/manifest.tsv",
            "masked/summary.json", "models/sex_cls.pt", "models/age_reg.pt",
            "predictions/sex_cls.csv", "predictions/age_reg.csv",
            "analysis/sex_cls.json", "analysis/age_reg.json", "pvi.json",
        ]:
            assert (out / rel).is_file(), rel

    def test_mask_stage_masked_everything(self, run_env):
        _, _, manifest = run_env
        assert manifest.stages["mask"].info["ok"] == 40

    def test_analysis_reports_are_valid(self, run_env):
        _, out, _ = run_env
        cls_report = json.loads((out / "analysis/sex_cls.json").read_text())
        assert cls_report["task"] == "sex_cls"
        assert 0.0 <= cls_report["metrics"]["accuracy"] <= 1.0
        assert "confusion" in cls_report
        reg_report = json.loads((out / "analysis/age_reg.json").read_text())
        assert reg_report["metrics"]["mae"] >= 0.0
        assert "confusion" not in reg_report

    def test_pvi_uses_available_classification_heads(self, run_env):
        _, out, _ = run_env
        report = json.loads((out / "pvi.json").read_text())
        # only sex_cls among the configured tasks feeds predictability
        assert set(report["weights"]) == {"sex"}
        assert report["weights"]["sex"] == pytest.approx(1.0)
        pvi = report["modalities"]["masked_face"]["pvi"]
        assert 0.0 <= pvi <= 1.0

    def test_every_output_file_is_listed(self, run_env):
        _, out, manifest = run_env
        listed = set()
        for rec in manifest.stages.values():
            listed.update(rec.outputs)
        on_disk = {
            str(p.relative_to(out))
            for p in out.rglob("*") if p.is_file()
        }
        assert on_disk - listed == {"run_manifest.json"}

    def test_rerun_skips_every_stage(self, run_env):
        faces, out, _ = run_env
        manifest = run_pipeline(make_config(faces, out))
        assert {rec.status for rec in manifest.stages.values()} == {"skipped"}

    def test_analyze_change_reruns_only_downstream(self, run_env):
        faces, out, _ = run_env
        cfg = make_config(faces, out, analyze={"group_attrs": ["sex"]})
        manifest = run_pipeline(cfg)
        status = {name: rec.status for name, rec in manifest.stages.items()}
        assert status["mask"] == "skipped"
        assert status["split"] == "skipped"
        assert status["train:sex_cls"] == "skipped"
        assert status["predict:sex_cls"] == "skipped"
        assert status["analyze:sex_cls"] == "ok"
        assert status["analyze:age_reg"] == "ok"
        assert status["pvi"] == "ok"
        report = json.loads((out / "analysis/sex_cls.json").read_text())
        assert set(report["subgroups"]) == {"sex"}

    def test_deleted_output_triggers_rerun(self, run_env):
        faces, out, _ = run_env
        (out / "pvi.json").unlink()
        manifest = run_pipeline(make_config(faces, out))
        assert manifest.stages["pvi"].status == "ok"
        assert manifest.stages["mask"].status == "skipped"


def test_pretrained_pipeline(tmp_path):
    faces = tmp_path / "faces"
    generate_dataset(faces, count=40, seed=11, size=90)
    cfg = make_config(
        faces, tmp_path / "out",
        train={"tasks": ["sex_cls"], "epochs": 1, "batch_size": 8,
               "image_size": 48, "augmentation": "none"},
        pretrain={"enabled": True, "epochs": 1, "batch_size": 8,
                  "queue_size": 16, "image_size": 48},
    )
    manifest = run_pipeline(cfg)
    assert manifest.stages["pretrain"].status == "ok"
    assert (tmp_path / "out" / "models" / "backbone.pt").is_file()
    losses = manifest.stages["pretrain"].info["loss_history"]
    assert len(losses) == 2  # untrained baseline + one epoch
