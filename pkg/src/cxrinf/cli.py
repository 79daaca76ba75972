"""Command-line entry point wiring the toolkit into reproducible commands.

Configuration comes from one declarative JSON file (versioned schema) plus
flag overrides; flags win. ``CXRINF_DATA_DIR`` sets the root for relative
paths. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .dataset import FoldPlan, ingest_source, make_folds, CatalogStore
from .imageops import read_png_gray, write_png_rgb8
from .infermap import ProbMask, detection_sidecar, render_infection_map, write_outputs
from .losses import LossParams
from .manifest import build_manifest, write_manifest
from .metrics import METRIC_NAMES, ConfusionMatrix, compute_metrics, format_percent
from .segmodel import ModelConfig, build_classifier, build_segmentation_model, load_checkpoint
from .synth import load_corpus, write_corpus
from .trainer import (
    TrainConfig,
    predict,
    run_cross_validation,
    train_classifier,
    train_segmentation,
)

CONFIG_SCHEMA_VERSION = 1


def data_dir() -> Path:
    return Path(os.environ.get("CXRINF_DATA_DIR", "."))


def resolve(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_dir() / p


def load_config_file(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    schema = cfg.get("schema", CONFIG_SCHEMA_VERSION)
    if schema != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema {schema!r}")
    return cfg


def model_config_from(cfg: dict, overrides: dict) -> ModelConfig:
    merged = {**cfg.get("model", {}), **{k: v for k, v in overrides.items() if v is not None}}
    return ModelConfig(**merged)


def train_config_from(cfg: dict, overrides: dict, classifier=False) -> TrainConfig:
    base = (TrainConfig.classifier_defaults() if classifier
            else TrainConfig.segmentation_defaults()).as_dict()
    merged = {**base, **cfg.get("train", {}),
              **{k: v for k, v in overrides.items() if v is not None}}
    loss = merged.get("loss")
    if isinstance(loss, dict):
        merged["loss"] = LossParams(**loss)
    return TrainConfig(**merged)


def emit_manifest(command, params, seeds, inputs, outputs, out_dir=None):
    manifest = build_manifest(command, params, seeds, inputs, outputs)
    if out_dir is not None:
        path = Path(out_dir) / "run_manifest.json"
    else:
        path = data_dir() / "manifests" / f"{command}.json"
    return write_manifest(path, manifest)


model_options = [
    click.option("--decoder", type=click.Choice(["unet", "unetpp", "dla"]), default=None),
    click.option("--encoder",
                 type=click.Choice(["densenet121", "chexnet", "inceptionv3", "resnet50"]),
                 default=None),
    click.option("--scale", type=click.Choice(["paper", "desk"]), default=None),
    click.option("--input-size", "input_size", type=int, default=None),
    click.option("--frozen/--no-frozen", "encoder_frozen", default=None),
    click.option("--pretrained", type=str, default=None),
]

train_options = [
    click.option("--epochs", type=int, default=None),
    click.option("--lr", "learning_rate", type=float, default=None),
    click.option("--batch-size", "batch_size", type=int, default=None),
    click.option("--seed", type=int, default=None),
]


def add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@click.group()
@click.version_option(version=__version__)
def cli():
    """Chest X-ray infection mapping toolkit."""


@cli.command("synth-corpus")
@click.option("--out", required=True, type=str)
@click.option("--n-covid", "n_covid", type=int, default=8)
@click.option("--n-control", "n_control", type=int, default=8)
@click.option("--size", type=int, default=64)
@click.option("--seed", type=int, default=7)
def synth_corpus_cmd(out, n_covid, n_control, size, seed):
    """Generate the synthetic disk-on-noise corpus."""
    out = resolve(out)
    info = write_corpus(out, n_covid, n_control, size=size, seed=seed)
    emit_manifest("synth-corpus", info, {"seed": seed}, [], [out], out_dir=out)
    click.echo(f"wrote {info['count']} samples to {out}")


@cli.command("ingest")
@click.option("--path", "src_path", required=True, type=str)
@click.option("--label", required=True, type=click.Choice(["covid", "control"]))
@click.option("--source", "source_tag", required=True, type=str)
@click.option("--store", required=True, type=str)
@click.option("--size", type=int, default=224, help="normalized image size")
def ingest_cmd(src_path, label, source_tag, store, size):
    """Ingest a directory of radiographs into a catalog store."""
    src = resolve(src_path)
    store_dir = resolve(store)
    result = ingest_source(src, label, source_tag, store=CatalogStore(store_dir),
                           normalize_size=size)
    for err in result.errors:
        click.echo(f"error: {err.path}: {err.reason}", err=True)
    for group in result.duplicate_groups:
        click.echo(f"duplicate content: {', '.join(group)}", err=True)
    emit_manifest("ingest",
                  {"label": label, "source": source_tag, "size": size,
                   "ingested": len(result.images), "errors": len(result.errors)},
                  {}, [src], [store_dir], out_dir=store_dir)
    click.echo(f"ingested {len(result.images)} images ({len(result.errors)} errors)")


@cli.command("folds")
@click.option("--catalog", required=True, type=str, help="catalog.jsonl path")
@click.option("--k", type=int, default=5)
@click.option("--ratio", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=str)
def folds_cmd(catalog, k, ratio, seed, out):
    """Plan stratified cross-validation folds from a catalog."""
    catalog_path = resolve(catalog)
    rows = [json.loads(line) for line in catalog_path.read_text().splitlines() if line.strip()]
    plan = make_folds([(r["id"], r["label"]) for r in rows], k=k, ratio=ratio, seed=seed)
    out_path = resolve(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(plan.to_json(indent=2))
    emit_manifest("folds", {"k": k, "ratio": plan.ratio}, {"seed": seed},
                  [catalog_path], [out_path])
    click.echo(f"planned {k} folds over {len(rows)} samples -> {out_path}")


@cli.command("train-seg")
@click.option("--corpus", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--config", "config_file", type=str, default=None)
@add_options(model_options)
@add_options(train_options)
def train_seg_cmd(corpus, out, config_file, **overrides):
    """Train one segmentation model on a corpus."""
    cfg = load_config_file(config_file and resolve(config_file))
    model_keys = ("decoder", "encoder", "scale", "input_size", "encoder_frozen", "pretrained")
    model_config = model_config_from(cfg, {k: overrides[k] for k in model_keys})
    train_config = train_config_from(
        cfg, {k: overrides[k] for k in ("epochs", "learning_rate", "batch_size", "seed")}
    )
    corpus_dir = resolve(corpus)
    samples = load_corpus(corpus_dir)
    out_dir = resolve(out)
    handle = build_segmentation_model(model_config, seed=train_config.seed)
    record = train_segmentation(handle, samples, train_config, out_dir=out_dir)
    emit_manifest("train-seg", record.config, {"seed": train_config.seed},
                  [corpus_dir], [out_dir], out_dir=out_dir)
    click.echo(f"final loss {record.loss_history[-1]:.6f}; checkpoint {record.checkpoint_path}")


@cli.command("train-cls")
@click.option("--corpus", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--config", "config_file", type=str, default=None)
@click.option("--encoder",
              type=click.Choice(["densenet121", "chexnet", "inceptionv3", "resnet50"]),
              default="densenet121")
@click.option("--scale", type=click.Choice(["paper", "desk"]), default="desk")
@click.option("--input-size", "input_size", type=int, default=None)
@click.option("--pretrained", type=str, default=None)
@add_options(train_options)
def train_cls_cmd(corpus, out, config_file, encoder, scale, input_size, pretrained, **overrides):
    """Fine-tune the 2-way classifier on a corpus."""
    cfg = load_config_file(config_file and resolve(config_file))
    train_config = train_config_from(cfg, overrides, classifier=True)
    corpus_dir = resolve(corpus)
    samples = [img for img, _ in load_corpus(corpus_dir)]
    out_dir = resolve(out)
    handle = build_classifier(encoder, pretrained=pretrained, scale=scale,
                              input_size=input_size, seed=train_config.seed)
    record = train_classifier(handle, samples, train_config, out_dir=out_dir)
    emit_manifest("train-cls", record.config, {"seed": train_config.seed},
                  [corpus_dir], [out_dir], out_dir=out_dir)
    click.echo(f"final loss {record.loss_history[-1]:.6f}; checkpoint {record.checkpoint_path}")


@cli.command("cv")
@click.option("--corpus", required=True, type=str)
@click.option("--folds", "folds_file", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--config", "config_file", type=str, default=None)
@add_options(model_options)
@add_options(train_options)
def cv_cmd(corpus, folds_file, out, config_file, **overrides):
    """Cross-validate a configuration; dump per-fold test predictions."""
    cfg = load_config_file(config_file and resolve(config_file))
    model_keys = ("decoder", "encoder", "scale", "input_size", "encoder_frozen", "pretrained")
    model_config = model_config_from(cfg, {k: overrides[k] for k in model_keys})
    train_config = train_config_from(
        cfg, {k: overrides[k] for k in ("epochs", "learning_rate", "batch_size", "seed")}
    )
    corpus_dir = resolve(corpus)
    plan = FoldPlan.from_json(resolve(folds_file).read_text())
    samples = {img.id: (img, mask) for img, mask in load_corpus(corpus_dir)}
    out_dir = resolve(out)
    records, predictions = run_cross_validation(plan, model_config, train_config, samples,
                                                out_dir=out_dir, build_seed=train_config.seed)
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    from .imageops import write_png_gray16

    index = []
    for image_id, prob in sorted(predictions.items()):
        path = pred_dir / f"{image_id}_prob.png"
        write_png_gray16(path, prob.pixels)
        index.append({"id": image_id, "path": str(path.relative_to(out_dir))})
    (out_dir / "predictions.json").write_text(json.dumps(index, indent=2))
    emit_manifest("cv", records[0].config, {"seed": train_config.seed},
                  [corpus_dir, resolve(folds_file)], [out_dir], out_dir=out_dir)
    click.echo(f"{plan.k} folds trained; {len(index)} predictions in {pred_dir}")


@cli.command("infer")
@click.option("--checkpoint", required=True, type=str)
@click.option("--image", "image_path", required=True, type=str)
@click.option("--out", required=True, type=str)
def infer_cmd(checkpoint, image_path, out):
    """Predict a probability mask for one image."""
    handle = load_checkpoint(resolve(checkpoint))
    pixels = read_png_gray(resolve(image_path))
    out_dir = resolve(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_id = Path(image_path).stem
    prob = predict(handle, pixels)
    prob.image_id = image_id
    from .imageops import write_png_gray16

    prob_path = out_dir / f"{image_id}_prob.png"
    write_png_gray16(prob_path, prob.pixels)
    side = detection_sidecar(prob)
    (out_dir / f"{image_id}_detect.json").write_text(json.dumps(side, indent=2, sort_keys=True))
    emit_manifest("infer", {"checkpoint": str(checkpoint), "image": str(image_path)},
                  {}, [resolve(checkpoint), resolve(image_path)], [out_dir], out_dir=out_dir)
    click.echo(f"max prob {side['max_prob']:.4f}; wrote {prob_path}")


@cli.command("render-map")
@click.option("--image", "image_path", required=True, type=str)
@click.option("--prob", "prob_path", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--tau-vis", "tau_vis", type=float, default=0.01)
def render_map_cmd(image_path, prob_path, out, tau_vis):
    """Render the jet/HSV infection map for an (image, probability) pair."""
    gray = read_png_gray(resolve(image_path))
    prob = ProbMask(image_id=Path(image_path).stem, pixels=read_png_gray(resolve(prob_path)))
    out_dir = resolve(out)
    paths = write_outputs(out_dir, gray, prob, tau_vis=tau_vis)
    emit_manifest("render-map", {"tau_vis": tau_vis}, {},
                  [resolve(image_path), resolve(prob_path)], list(paths.values()),
                  out_dir=out_dir)
    click.echo(f"wrote {paths['infmap']}")


@cli.command("detect")
@click.option("--prob", "prob_path", required=True, type=str)
@click.option("--threshold", type=float, default=0.5)
@click.option("--min-area", "min_area", type=int, default=1)
@click.option("--out", type=str, default=None)
def detect_cmd(prob_path, threshold, min_area, out):
    """Apply the any-pixel detection rule to a probability mask."""
    prob = ProbMask(image_id=Path(prob_path).stem, pixels=read_png_gray(resolve(prob_path)))
    side = detection_sidecar(prob, threshold, min_area)
    out_dir = None
    if out is not None:
        out_dir = resolve(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{prob.image_id}_detect.json").write_text(
            json.dumps(side, indent=2, sort_keys=True)
        )
    emit_manifest("detect", {"threshold": threshold, "min_area": min_area}, {},
                  [resolve(prob_path)], [out_dir] if out_dir else [], out_dir=out_dir)
    click.echo("positive" if side["detected"] else "negative")


@cli.command("eval")
@click.option("--confusion", required=True, type=str,
              help="counts as tn=..,fp=..,fn=..,tp=..")
@click.option("--level", type=click.Choice(["sample", "pixel"]), default="sample")
@click.option("--out", type=str, default=None)
def eval_cmd(confusion, level, out):
    """Compute the metric suite from confusion-matrix counts."""
    try:
        counts = dict(part.split("=") for part in confusion.split(","))
        cm = ConfusionMatrix(**{k.strip(): int(v) for k, v in counts.items()})
    except (ValueError, TypeError) as e:
        raise ValueError(f"bad --confusion value {confusion!r}: {e}") from e
    report = compute_metrics(cm, level=level)
    row = "  ".join(
        f"{name} {format_percent(report.metric(name))}%" for name in METRIC_NAMES
    )
    click.echo(row)
    ci = "  ".join(f"{name} ±{report.ci[name]:.4f}" for name in METRIC_NAMES
                   if report.ci.get(name) is not None)
    click.echo(f"95% CI: {ci}")
    out_dir = None
    if out is not None:
        out_dir = resolve(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(report.to_json(indent=2, sort_keys=True))
    emit_manifest("eval", {"confusion": cm.as_dict(), "level": level}, {}, [],
                  [out_dir] if out_dir else [], out_dir=out_dir)


@cli.command("gradcam")
@click.option("--checkpoint", required=True, type=str)
@click.option("--image", "image_path", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--layer", type=str, default=None)
@click.option("--class-index", "class_index", type=int, default=1)
@click.option("--tau-vis", "tau_vis", type=float, default=0.01)
def gradcam_cmd(checkpoint, image_path, out, layer, class_index, tau_vis):
    """Render a Grad-CAM activation map through the infection-map compositor."""
    from .gradcam import grad_cam

    handle = load_checkpoint(resolve(checkpoint))
    gray = read_png_gray(resolve(image_path))
    act = grad_cam(handle, gray, class_index=class_index, layer=layer)
    image_id = Path(image_path).stem
    imap = render_infection_map(gray, act.values, tau_vis=tau_vis)
    out_dir = resolve(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"{image_id}_gradcam.png"
    write_png_rgb8(png, imap.rgb)
    emit_manifest("gradcam",
                  {"layer": act.source_layer, "class_index": class_index},
                  {}, [resolve(checkpoint), resolve(image_path)], [png], out_dir=out_dir)
    click.echo(f"wrote {png}")


@cli.command("compare-maps")
@click.option("--activation", "act_path", required=True, type=str)
@click.option("--prob", "prob_path", required=True, type=str)
@click.option("--gt", "gt_path", required=True, type=str)
@click.option("--out", type=str, default=None)
def compare_maps_cmd(act_path, prob_path, gt_path, out):
    """Overlap statistics: activation map vs infection map against GT."""
    from .gradcam import ActivationMap, compare_explanations

    act = ActivationMap(image_id=Path(act_path).stem, class_index=1,
                        values=read_png_gray(resolve(act_path)), source_layer="file")
    prob = read_png_gray(resolve(prob_path))
    gt = (read_png_gray(resolve(gt_path)) >= 0.5).astype(np.uint8)
    stats = compare_explanations(act, prob, gt)
    click.echo(json.dumps(stats, indent=2, sort_keys=True))
    out_dir = None
    if out is not None:
        out_dir = resolve(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
    emit_manifest("compare-maps", {}, {},
                  [resolve(act_path), resolve(prob_path), resolve(gt_path)],
                  [out_dir] if out_dir else [], out_dir=out_dir)


@cli.command("annotate-serve")
@click.option("--campaign", required=True, type=str)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8008)
@click.option("--ui", "ui_dir", type=str, default=None)
def annotate_serve_cmd(campaign, host, port, ui_dir):
    """Serve the annotation task queue over HTTP."""
    from .annotate import CampaignStore, serve

    store = CampaignStore.open(resolve(campaign))
    click.echo(f"serving campaign {campaign} on http://{host}:{port}")
    serve(store, host=host, port=port, ui_dir=ui_dir)


@cli.command("annotate-export")
@click.option("--campaign", required=True, type=str)
@click.option("--out", required=True, type=str)
def annotate_export_cmd(campaign, out):
    """Export collaborative ground truth and the provenance manifest."""
    from .annotate import CampaignStore

    store = CampaignStore.open(resolve(campaign))
    out_dir = resolve(out)
    manifest = store.export_ground_truth(out_dir)
    emit_manifest("annotate-export", {"campaign": str(campaign)},
                  {}, [], [out_dir], out_dir=out_dir)
    click.echo(f"exported {len(manifest['masks'])} masks "
               f"({len(manifest['pending'])} pending) to {out_dir}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except (ValueError, FileNotFoundError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        click.echo(f"runtime failure: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
