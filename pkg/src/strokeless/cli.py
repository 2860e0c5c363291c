"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, checkpoint, divergence),
2 usage error.
"""

from __future__ import annotations

import json
from dataclasses import fields as dataclass_fields
from pathlib import Path

import click
import numpy as np

from . import dataset as ds
from .core import (
    DEFAULT_STROKE_TAU,
    load_image_png,
    load_mask_png,
    load_polygons_json,
    rasterize_polygons,
    save_image_png,
    save_mask_png,
    validate_polygon,
)
from .errors import StrokelessError
from .evaluation import evaluate
from .losses import LossHyperParams
from .networks import erase_arrays
from .training import ABLATIONS, TrainConfig, checkpoint_forward_fn, load_checkpoint, run_training

_DOMAIN_ERRORS = (StrokelessError, ValueError, OSError)


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@click.group()
def main():
    """Scene text removal: datasets, training, evaluation, inference, service."""


@main.command("dataset-synth")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--count", required=True, type=int)
@click.option("--size", default=256, show_default=True, type=int)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--json", "as_json", is_flag=True, help="print a machine-readable summary")
def dataset_synth(out_dir: Path, count: int, size: int, seed: int, as_json: bool):
    """Generate a synthetic paired dataset with exact stroke ground truth."""
    try:
        samples = ds.synth_generate(ds.SynthSpec(count=count, size=size, seed=seed))
        ds.write_dataset(samples, out_dir, tau=DEFAULT_STROKE_TAU, seed=seed)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps({"out": str(out_dir), "count": len(samples)}))
    else:
        click.echo(f"wrote {len(samples)} samples to {out_dir}")


@main.command("dataset-build")
@click.option("--pairs", "pairs_dir", required=True, type=click.Path(path_type=Path))
@click.option("--tau", default=DEFAULT_STROKE_TAU, show_default=True, type=float)
@click.option("--json", "as_json", is_flag=True)
def dataset_build(pairs_dir: Path, tau: float, as_json: bool):
    """Derive stroke masks from aligned text/clean/region_masks pairs."""
    try:
        records = ds.build_from_pairs(pairs_dir, tau=tau)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps({"pairs": str(pairs_dir), "samples": records}))
    else:
        for r in records:
            click.echo(
                f"{r['id']}: {r['stroke_pixels']} stroke pixels"
                + (f", {r['clipped_pixels']} clipped" if r["clipped_pixels"] else "")
            )
        click.echo(f"built {len(records)} samples under {pairs_dir}")


@main.command("split")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(path_type=Path))
@click.option("--train-frac", default=0.75, show_default=True, type=float)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--json", "as_json", is_flag=True)
def split(manifest_path: Path, train_frac: float, seed: int, as_json: bool):
    """Randomly reassign train/test splits in a dataset manifest."""
    root = manifest_path.parent if manifest_path.name == "manifest.json" else manifest_path
    try:
        manifest = ds.assign_splits(root, train_frac, seed)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    n_train = sum(1 for e in manifest["samples"] if e["split"] == "train")
    n_test = len(manifest["samples"]) - n_train
    if as_json:
        click.echo(json.dumps({"train": n_train, "test": n_test, "seed": seed}))
    else:
        click.echo(f"split {n_train} train / {n_test} test (seed {seed})")


def _merge_train_config(config_file: Path | None, overrides: dict) -> TrainConfig:
    data: dict = {}
    if config_file is not None:
        data = json.loads(Path(config_file).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object of key-value pairs")
    loss_keys = {f.name for f in dataclass_fields(LossHyperParams)}
    loss = dict(data.pop("loss", {}))
    for key in list(data):
        if key in loss_keys:
            loss[key] = data.pop(key)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if loss:
        data["loss"] = loss
    return TrainConfig.from_dict(data)


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--epochs", required=True, type=int)
@click.option("--ablation", default=None, type=click.Choice(sorted(ABLATIONS)))
@click.option("--out", "out_dir", default="train_out", show_default=True,
              type=click.Path(path_type=Path))
@click.option("--config", "config_file", default=None, type=click.Path(path_type=Path),
              help="flat JSON config; command-line flags override its keys")
@click.option("--batch", default=None, type=int, help="batch size [default: 16]")
@click.option("--lr", default=None, type=float, help="learning rate [default: 1e-4]")
@click.option("--size", default=None, type=int, help="training image size [default: 256]")
@click.option("--seed", default=None, type=int)
@click.option("--units", default=None, type=int, help="cascade units [default: 2]")
@click.option("--base-channels", default=None, type=int)
@click.option("--levels", default=None, type=int)
@click.option("--disc-base-channels", default=None, type=int)
@click.option("--disc-layers", default=None, type=int)
@click.option("--split", "split_name", default="train", show_default=True,
              type=click.Choice(["train", "test", "all"]))
@click.option("--json", "as_json", is_flag=True)
def train(data_dir, epochs, ablation, out_dir, config_file, batch, lr, size, seed, units,
          base_channels, levels, disc_base_channels, disc_layers, split_name, as_json):
    """Train on a dataset directory; writes metrics.jsonl and checkpoints."""
    overrides = {
        "epochs": epochs,
        "ablation": ablation,
        "batch_size": batch,
        "lr": lr,
        "image_size": size,
        "seed": seed,
        "cascade_units": units,
        "base_channels": base_channels,
        "levels": levels,
        "disc_base_channels": disc_base_channels,
        "disc_layers": disc_layers,
    }
    try:
        cfg = _merge_train_config(config_file, overrides)
        samples = ds.load_dataset(data_dir, None if split_name == "all" else split_name)
        state = run_training(cfg, samples, out_dir)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    ckpt = Path(out_dir) / "checkpoint"
    if as_json:
        click.echo(json.dumps({"steps": state.step, "epochs": state.epoch, "ckpt": str(ckpt)}))
    else:
        click.echo(f"trained {state.step} steps ({state.epoch} epochs); checkpoint at {ckpt}")


@main.command("eval")
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--ckpt", envvar="STROKELESS_CKPT", required=True,
              type=click.Path(path_type=Path))
@click.option("--detections", "detections_file", default=None, type=click.Path(path_type=Path),
              help="JSON {image_id: [box, ...]} from an external text detector")
@click.option("--split", "split_name", default="all", show_default=True,
              type=click.Choice(["train", "test", "all"]))
@click.option("--composite", is_flag=True, help="paste output back inside the region mask")
@click.option("--json", "as_json", is_flag=True)
def eval_cmd(data_dir, ckpt, detections_file, split_name, composite, as_json):
    """Evaluate a checkpoint over a dataset."""
    try:
        samples = ds.load_dataset(data_dir, None if split_name == "all" else split_name)
        forward = checkpoint_forward_fn(ckpt)
        detections = None
        if detections_file is not None:
            detections = json.loads(Path(detections_file).read_text())
        report = evaluate(forward, samples, composite=composite, detections=detections)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    click.echo(report.to_json() if as_json else report.format_table())


@main.command("infer")
@click.option("--ckpt", envvar="STROKELESS_CKPT", required=True,
              type=click.Path(path_type=Path))
@click.option("--image", "image_path", required=True, type=click.Path(path_type=Path))
@click.option("--mask", "mask_path", default=None, type=click.Path(path_type=Path))
@click.option("--polygons", "polygons_path", default=None, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--composite", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
def infer(ckpt, image_path, mask_path, polygons_path, out_path, composite, as_json):
    """Erase text in one image; writes the output PNG plus <out>.stroke.png."""
    if (mask_path is None) == (polygons_path is None):
        raise click.UsageError("exactly one of --mask or --polygons is required")
    try:
        image = load_image_png(image_path)
        h, w = image.shape[:2]
        if mask_path is not None:
            region = (load_mask_png(mask_path) > 0.5).astype(np.float32)
            if region.shape != (h, w):
                raise ValueError(f"mask is {region.shape}, image is {(h, w)}")
        else:
            polygons = load_polygons_json(polygons_path)
            for poly in polygons:
                validate_polygon(poly, w, h)
            region = rasterize_polygons(polygons, h, w)
        state = load_checkpoint(ckpt)
        outputs = erase_arrays(state.cascade, image, region, composite=composite)
        save_image_png(out_path, outputs["erased"])
        stroke_keys = sorted(k for k in outputs if k.startswith("stroke_"))
        stroke_path = None
        if stroke_keys:
            stroke_path = out_path.with_suffix(".stroke.png")
            save_mask_png(stroke_path, outputs[stroke_keys[-1]])
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps({
            "out": str(out_path),
            "stroke": str(stroke_path) if stroke_path else None,
        }))
    else:
        click.echo(f"wrote {out_path}" + (f" and {stroke_path}" if stroke_path else ""))


@main.command("serve")
@click.option("--ckpt", envvar="STROKELESS_CKPT", default=None,
              type=click.Path(path_type=Path),
              help="checkpoint directory; without one the service answers 503")
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--static", "static_dir", default=None, type=click.Path(path_type=Path),
              help="UI build directory to serve at /")
def serve(ckpt, port, host, static_dir):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(ckpt, static_dir=static_dir)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
