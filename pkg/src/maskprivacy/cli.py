"""Command-line surface: maskprivacy <subcommand>.

Subcommands mirror the pipeline stages so each step can run standalone;
`run` drives the whole sequence from a YAML config with stage skipping.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .datasets import make_random_split, make_uniform_split, read_manifest, scan_labels, write_manifest
from .errors import MaskPrivacyError, StageError
from .masking import MaskSpec, mask_dataset
from .pipeline import RunConfig, parse_color, run_pipeline, validate_config


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(version=__version__, prog_name="maskprivacy")
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose: bool):
    """Masked-face synthesis, attribute models, and privacy scoring."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--check", is_flag=True, help="Validate the config and exit.")
def run(config_path: str, check: bool):
    """Run the full pipeline described by a YAML config."""
    try:
        config = RunConfig.from_yaml(config_path)
    except (ValueError, OSError, yaml.YAMLError) as exc:
        _fail(f"bad config: {exc}")
    diags = validate_config(config)
    if check:
        if diags:
            for d in diags:
                click.echo(str(d), err=True)
            sys.exit(1)
        click.echo("config ok")
        return
    try:
        manifest = run_pipeline(config)
    except StageError as exc:
        _fail(f"stage '{exc.stage}' failed: {exc.cause}")
    click.echo(f"run complete: {manifest.path}")
    for name, rec in manifest.stages.items():
        click.echo(f"  {name}: {rec.status} ({rec.seconds:.1f}s)")


@main.command("mask-synth")
@click.argument("input_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--coverage", type=click.Choice(["medium", "high"]), default="high",
              show_default=True)
@click.option("--shape", type=click.Choice(["pointed", "round"]), default="pointed",
              show_default=True)
@click.option("--color", default="B2BEB5", show_default=True,
              help="Mask color as RRGGBB hex or r,g,b.")
@click.option("--opacity", type=float, default=1.0, show_default=True)
@click.option("--parallelism", type=int, default=1, show_default=True)
def mask_synth(input_dir, output_dir, coverage, shape, color, opacity, parallelism):
    """Render synthetic masks onto every image in INPUT_DIR."""
    try:
        spec = MaskSpec(coverage=coverage, shape=shape,
                        color=parse_color(color), opacity=opacity)
        summary = mask_dataset(input_dir, output_dir, spec, parallelism=parallelism)
    except (MaskPrivacyError, ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(summary.to_dict(), indent=2))
    if summary.ok_count == 0:
        sys.exit(1)


@main.command()
@click.argument("input_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_manifest", type=click.Path(dir_okay=False))
@click.option("--kind", type=click.Choice(["random", "uniform"]), default="random",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--balance-on", default="sex,race", show_default=True,
              help="Comma-separated attributes for uniform splits.")
@click.option("--test-quota", type=int, default=None,
              help="Per-stratum test count for uniform splits.")
def split(input_dir, out_manifest, kind, seed, balance_on, test_quota):
    """Assign images in INPUT_DIR to train/val/test and write a manifest."""
    labels, skipped = scan_labels(input_dir)
    if skipped:
        click.echo(f"skipped {len(skipped)} unparseable filenames", err=True)
    try:
        if kind == "uniform":
            manifest = make_uniform_split(
                labels, seed, balance_on=tuple(balance_on.split(",")),
                test_quota=test_quota,
            )
        else:
            manifest = make_random_split(labels, seed)
        write_manifest(manifest, out_manifest)
    except MaskPrivacyError as exc:
        _fail(str(exc))
    click.echo(json.dumps(manifest.metadata, indent=2, sort_keys=True))


def _partition_data(data_dir: Path, manifest_path: str | None, partition: str):
    """Paths plus labels for one partition (whole directory when no manifest)."""
    from .datasets import labels_for_partition

    if manifest_path:
        manifest = read_manifest(manifest_path)
        labels = labels_for_partition(manifest, partition)
    else:
        labels, _ = scan_labels(data_dir)
    paths, kept = [], []
    for label in labels:
        hits = [p for p in data_dir.glob(label.image_id + ".*")
                if p.suffix.lower() in (".jpg", ".jpeg", ".png")]
        if hits:
            paths.append(str(hits[0]))
            kept.append(label)
    return paths, kept


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.option("--task", type=click.Choice(["sex_cls", "race_cls", "age_cls", "age_reg"]),
              required=True)
@click.option("--split", "split_manifest", type=click.Path(exists=True, dir_okay=False),
              help="Split manifest; trains on 'train', validates on 'val'.")
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--augmentation", type=click.Choice(["none", "basic", "randaugment_default"]),
              default="basic", show_default=True)
@click.option("--image-size", type=int, default=224, show_default=True)
@click.option("--pretrain", type=click.Path(exists=True, dir_okay=False),
              help="Backbone checkpoint from `maskprivacy pretrain`.")
@click.option("--seed", type=int, default=0, show_default=True)
def train(data_dir, model_path, task, split_manifest, epochs, batch_size,
          learning_rate, augmentation, image_size, pretrain, seed):
    """Train one attribute model and save its best checkpoint."""
    from .models import AttributePredictor, targets_for_task

    data_dir = Path(data_dir)
    X_train, l_train = _partition_data(data_dir, split_manifest, "train")
    if split_manifest:
        X_val, l_val = _partition_data(data_dir, split_manifest, "val")
    else:
        X_val, l_val = X_train, l_train
    try:
        est = AttributePredictor(
            task=task, epochs=epochs, batch_size=batch_size,
            learning_rate=learning_rate, augmentation=augmentation,
            image_size=image_size, pretrain=pretrain, seed=seed,
        )
        est.fit(X_train, targets_for_task(l_train, task),
                X_val=X_val, y_val=targets_for_task(l_val, task))
        est.save(model_path)
    except MaskPrivacyError as exc:
        _fail(str(exc))
    click.echo(json.dumps({
        "task": task, "best_epoch": est.best_epoch_,
        "best_val_metric": est.best_val_metric_,
        "baseline_val_metric": est.baseline_val_metric_,
        "model": str(model_path),
    }, indent=2))


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("backbone_path", type=click.Path(dir_okay=False))
@click.option("--split", "split_manifest", type=click.Path(exists=True, dir_okay=False),
              help="Optional split manifest; pretrains on its 'train' partition.")
@click.option("--epochs", type=int, default=2, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--queue-size", type=int, default=4096, show_default=True)
@click.option("--learning-rate", type=float, default=0.03, show_default=True)
@click.option("--image-size", type=int, default=224, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def pretrain(data_dir, backbone_path, split_manifest, epochs, batch_size,
             queue_size, learning_rate, image_size, seed):
    """Contrastively pretrain a backbone on unlabeled images."""
    from .pretrain import ContrastivePretrainer

    paths, _ = _partition_data(Path(data_dir), split_manifest, "train")
    try:
        pre = ContrastivePretrainer(
            epochs=epochs, batch_size=batch_size, queue_size=queue_size,
            learning_rate=learning_rate, image_size=image_size, seed=seed,
        )
        pre.fit(paths)
        pre.save_backbone(backbone_path)
    except MaskPrivacyError as exc:
        _fail(str(exc))
    click.echo(json.dumps({
        "backbone": str(backbone_path),
        "images": len(paths),
        "loss_history": pre.loss_history_,
    }, indent=2))


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_csv", type=click.Path(dir_okay=False))
@click.option("--split", "split_manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--partition", default="test", show_default=True)
def predict(data_dir, model_path, out_csv, split_manifest, partition):
    """Write prediction records for a partition (or a whole directory)."""
    from .models import AttributePredictor, predict_records
    from .records import write_records_csv

    paths, labels = _partition_data(Path(data_dir), split_manifest, partition)
    if not paths:
        _fail("no images to predict")
    try:
        est = AttributePredictor.load(model_path)
        records = predict_records(est, paths, labels)
        write_records_csv(records, out_csv)
    except MaskPrivacyError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(records)} records to {out_csv}")


def _read_sample(path: str):
    text = Path(path).read_text().replace(",", " ")
    return [float(tok) for tok in text.split()]


@main.command()
@click.argument("records_csv", type=click.Path(exists=True, dir_okay=False), required=False)
@click.argument("out_json", type=click.Path(dir_okay=False), required=False)
@click.option("--task", default="", help="Task name stored in the records.")
@click.option("--labels-from", type=click.Path(exists=True),
              help="Directory or split manifest supplying grouping attributes.")
@click.option("--group-attrs", default="sex,race,age_bin", show_default=True)
@click.option("--plots", type=click.Path(file_okay=False),
              help="Also write confusion/subgroup plots into this directory.")
@click.option("--mwu", nargs=2, type=click.Path(exists=True, dir_okay=False),
              help="Two numeric sample files; runs the rank test instead.")
def analyze(records_csv, out_json, task, labels_from, group_attrs, plots, mwu):
    """Bias analysis of prediction records, or a standalone rank test (--mwu)."""
    from .records import attach_attributes, read_records_csv
    from .stats import analyze_task, mann_whitney_u, mann_whitney_u_exact

    if mwu:
        a, b = (_read_sample(p) for p in mwu)
        try:
            result = mann_whitney_u(a, b)
            out = {"normal": result.to_dict()}
            if len(a) + len(b) <= 20:
                out["exact"] = mann_whitney_u_exact(a, b).to_dict()
        except MaskPrivacyError as exc:
            _fail(str(exc))
        click.echo(json.dumps(out, indent=2))
        return
    if not records_csv or not out_json:
        _fail("RECORDS_CSV and OUT_JSON are required unless --mwu is given")
    records = read_records_csv(records_csv, task=task)
    if labels_from:
        source = Path(labels_from)
        if source.is_dir():
            labels = {l.image_id: l for l in scan_labels(source)[0]}
        else:
            labels = read_manifest(source).labels
        records = attach_attributes(records, labels)
    else:
        # No label source: derive attributes from the record ids themselves.
        from .datasets import parse_label

        derived = {}
        for r in records:
            try:
                derived[r.image_id] = parse_label(r.image_id + ".jpg")
            except MaskPrivacyError:
                pass
        records = attach_attributes(records, derived)
    try:
        report = analyze_task(records, group_attrs=tuple(group_attrs.split(",")))
    except (MaskPrivacyError, ValueError) as exc:
        _fail(str(exc))
    Path(out_json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if plots:
        _write_plots(report, Path(plots))
    click.echo(json.dumps(report["metrics"], indent=2))


def _write_plots(report: dict, plot_dir: Path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _fail("matplotlib is required for --plots (pip install maskprivacy[plots])")
    plot_dir.mkdir(parents=True, exist_ok=True)
    task = report.get("task", "task")
    if "confusion" in report:
        fig, ax = plt.subplots(figsize=(5, 4))
        mat = report["confusion"]["matrix"]
        classes = report["confusion"]["classes"]
        im = ax.imshow(mat, cmap="Blues")
        ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
        ax.set_yticks(range(len(classes)), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.colorbar(im)
        fig.tight_layout()
        fig.savefig(plot_dir / f"{task}_confusion.png", dpi=120)
        plt.close(fig)
    for attr, sub in report.get("subgroups", {}).items():
        groups = sub["groups"]
        if not groups:
            continue
        metric = "accuracy" if "accuracy" in next(iter(groups.values())) else "mae"
        fig, ax = plt.subplots(figsize=(5, 3))
        names = list(groups)
        ax.bar(names, [groups[g][metric] for g in names])
        ax.set_ylabel(metric)
        ax.set_title(f"{task}: {metric} by {attr}")
        fig.tight_layout()
        fig.savefig(plot_dir / f"{task}_{attr}_{metric}.png", dpi=120)
        plt.close(fig)


def _parse_kv(text: str) -> dict:
    out = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {part!r}")
        out[key.strip()] = float(value)
    return out


@main.command()
@click.option("--survey", type=click.Path(exists=True, dir_okay=False),
              help="Survey CSV; importance weights computed from rankings.")
@click.option("--weights", default=None,
              help="Explicit weights, e.g. age=0.3765,race=0.3353,sex=0.2882.")
@click.option("--pred", "preds", multiple=True, required=True,
              help="Modality predictability: name:age=0.70,race=0.91,sex=0.98. Repeatable.")
@click.option("--baseline", default=None, help="Modality to compute reductions against.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
def pvi(survey, weights, preds, baseline, output):
    """Compute privacy vulnerability indices for one or more modalities."""
    from .privacy import ImportanceWeights, build_pvi_report, compute_rii, read_survey_csv, write_pvi_report
    from .privacy import REFERENCE_IMPORTANCE

    try:
        if survey and weights:
            _fail("give either --survey or --weights, not both")
        if survey:
            w = compute_rii(read_survey_csv(survey))
        elif weights:
            w = ImportanceWeights(values=_parse_kv(weights), scheme="explicit")
        else:
            w = ImportanceWeights(values=dict(REFERENCE_IMPORTANCE), scheme="reference")
        modalities = {}
        for spec in preds:
            name, _, kv = spec.partition(":")
            if not _:
                raise ValueError(f"expected name:key=value,..., got {spec!r}")
            modalities[name.strip()] = _parse_kv(kv)
        report = build_pvi_report(w, modalities, baseline=baseline)
    except (MaskPrivacyError, ValueError) as exc:
        _fail(str(exc))
    if output:
        write_pvi_report(report, output)
    click.echo(json.dumps(
        {m: r["pvi"] for m, r in report["modalities"].items()}
        | ({k: v for k, v in report.items() if k.startswith("reductions_vs_")}),
        indent=2,
    ))


@main.command("demo-data")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=200, show_default=True,
              help="Image edge length in pixels.")
@click.option("--survey/--no-survey", default=True, show_default=True,
              help="Also write survey.csv with 60 synthetic responses.")
def demo_data(out_dir, count, seed, size, survey):
    """Generate synthetic face fixtures (and a survey) for smoke runs."""
    from .privacy import write_survey_csv
    from .synthetic import generate_dataset, generate_survey

    out_dir = Path(out_dir)
    labels = generate_dataset(out_dir / "images", count=count, seed=seed, size=size)
    message = {"images": len(labels), "dir": str(out_dir / "images")}
    if survey:
        responses = generate_survey(60, seed=seed)
        write_survey_csv(responses, out_dir / "survey.csv")
        message["survey"] = str(out_dir / "survey.csv")
    click.echo(json.dumps(message, indent=2))


if __name__ == "__main__":
    main()
