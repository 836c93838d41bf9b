import json

import pytest
from click.testing import CliRunner

from maskprivacy.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli-demo")
    CliRunner().invoke(
        main, ["demo-data", str(d), "--count", "14", "--seed", "2", "--size", "90"],
        catch_exceptions=False,
    )
    return d


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "maskprivacy" in result.output


def test_demo_data(runner, tmp_path):
    result = runner.invoke(main, ["demo-data", str(tmp_path), "--count", "3"])
    assert result.exit_code == 0
    assert len(list((tmp_path / "images").glob("*.png"))) == 3
    assert (tmp_path / "survey.csv").is_file()


def test_mask_synth(runner, demo_dir, tmp_path):
    out = tmp_path / "masked"
    result = runner.invoke(main, [
        "mask-synth", str(demo_dir / "images"), str(out),
        "--coverage", "medium", "--shape", "round", "--color", "0A141E",
        "--opacity", "0.8",
    ])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["ok"] == 14
    assert (out / "manifest.tsv").is_file()


def test_mask_synth_bad_color(runner, demo_dir, tmp_path):
    result = runner.invoke(main, [
        "mask-synth", str(demo_dir / "images"), str(tmp_path / "x"),
        "--color", "ZZZZZZ",
    ])
    assert result.exit_code != 0


def test_split_command(runner, demo_dir, tmp_path):
    manifest = tmp_path / "split.tsv"
    result = runner.invoke(main, [
        "split", str(demo_dir / "images"), str(manifest), "--seed", "5",
    ])
    assert result.exit_code == 0, result.output
    meta = json.loads(result.output)
    assert meta["counts"] == {"train": 9, "val": 2, "test": 3}
    assert manifest.is_file()


def test_split_too_few(runner, tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    (src / "20_0_0_1.png").write_bytes(b"x")
    result = runner.invoke(main, ["split", str(src), str(tmp_path / "s.tsv")])
    assert result.exit_code != 0
    assert "at least 10" in result.stderr


def test_analyze_mwu(runner, tmp_path):
    a = tmp_path / "a.txt"
    b = tmp_path / "b.txt"
    a.write_text("2 3 3 2 3")
    b.write_text("1,2,1,2,2")
    result = runner.invoke(main, ["analyze", "--mwu", str(a), str(b)])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["normal"]["statistic"] == 22.0
    assert out["exact"]["p_value"] == pytest.approx(10 / 252)


def test_analyze_requires_arguments(runner):
    result = runner.invoke(main, ["analyze"])
    assert result.exit_code != 0


def test_pvi_with_explicit_weights(runner, tmp_path):
    out = tmp_path / "pvi.json"
    result = runner.invoke(main, [
        "pvi",
        "--weights", "age=0.3765,race=0.3353,sex=0.2882",
        "--pred", "masked_sota:age=0.701,race=0.9123,sex=0.9823",
        "-o", str(out),
    ])
    assert result.exit_code == 0, result.output
    echoed = json.loads(result.output)
    assert echoed["masked_sota"] == pytest.approx(0.8529, abs=1e-4)
    report = json.loads(out.read_text())
    assert "reference" in report


def test_pvi_with_survey(runner, demo_dir):
    result = runner.invoke(main, [
        "pvi", "--survey", str(demo_dir / "survey.csv"),
        "--pred", "m:age=0.5,race=0.5,sex=0.5",
    ])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["m"] == pytest.approx(0.5)


def test_pvi_baseline_reduction(runner):
    result = runner.invoke(main, [
        "pvi",
        "--pred", "face:age=0.9,race=0.9,sex=0.9",
        "--pred", "masked:age=0.6,race=0.6,sex=0.6",
        "--baseline", "face",
    ])
    assert result.exit_code == 0, result.output
    out = json.loads(result.output)
    assert out["reductions_vs_face"]["masked"] == pytest.approx(100 * (0.9 - 0.6) / 0.9)


def test_run_check_reports_diagnostics(runner, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("input_dir: /nonexistent/path\noutputs_dir: out\n")
    result = runner.invoke(main, ["run", str(cfg), "--check"])
    assert result.exit_code == 1
    assert "input_dir" in result.stderr


def test_run_rejects_unknown_keys(runner, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("input_dirs: x\noutputs_dir: out\n")
    result = runner.invoke(main, ["run", str(cfg)])
    assert result.exit_code != 0
    assert "unknown config key" in result.stderr


def test_run_names_failed_stage(runner, tmp_path):
    src = tmp_path / "empty"
    src.mkdir()
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"input_dir: {src}\noutputs_dir: {tmp_path / 'out'}\n")
    result = runner.invoke(main, ["run", str(cfg)])
    assert result.exit_code != 0
    assert "stage 'mask' failed" in result.stderr


def test_train_predict_round_trip(runner, demo_dir, tmp_path):
    masked = tmp_path / "masked"
    assert runner.invoke(
        main, ["mask-synth", str(demo_dir / "images"), str(masked)]
    ).exit_code == 0
    split_tsv = tmp_path / "split.tsv"
    assert runner.invoke(
        main, ["split", str(masked), str(split_tsv), "--seed", "1"]
    ).exit_code == 0
    model = tmp_path / "sex.pt"
    result = runner.invoke(main, [
        "train", str(masked), str(model), "--task", "sex_cls",
        "--split", str(split_tsv), "--epochs", "1", "--batch-size", "8",
        "--image-size", "48", "--augmentation", "none",
    ])
    assert result.exit_code == 0, result.output
    info = json.loads(result.output)
    assert info["best_epoch"] == 1
    records_csv = tmp_path / "records.csv"
    result = runner.invoke(main, [
        "predict", str(masked), str(model), str(records_csv),
        "--split", str(split_tsv), "--partition", "test",
    ])
    assert result.exit_code == 0, result.output
    assert records_csv.is_file()
    out_json = tmp_path / "analysis.json"
    result = runner.invoke(main, [
        "analyze", str(records_csv), str(out_json),
        "--task", "sex_cls", "--labels-from", str(split_tsv),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(out_json.read_text())
    assert report["task"] == "sex_cls"
    assert "accuracy" in report["metrics"]
