"""Unified command line: dataset generation, training, evaluation,
single-shot inference, and the HTTP service.

Every subcommand accepts ``--config`` (a JSON file whose keys become option
defaults) and ``--seed``. Inference commands are deterministic; their
``--seed`` is accepted for interface uniformity and recorded in outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .color import LabColor
from .errors import MakeupLabError
from .evaluate import (
    eval_color_accuracy,
    eval_style_transfer,
    kmeans_shades,
    load_triplets,
)
from .imgio import load_png, save_png
from .losses import LossWeights
from .models import ArchSpec
from .session import InferenceSession, SessionConfig
from .synth import generate_dataset, generate_triplets, load_manifest, load_samples
from .train import TrainConfig, train


def _apply_config(ctx: click.Context, param, value):
    """--config JSON keys become defaults for the remaining options."""
    if value:
        overrides = json.loads(Path(value).read_text())
        ctx.default_map = {**(ctx.default_map or {}), **overrides}
    return value


def _common(fn):
    fn = click.option(
        "--config", type=click.Path(exists=True, dir_okay=False),
        callback=_apply_config, is_eager=True, expose_value=False,
        help="JSON file with option defaults for this subcommand.",
    )(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    return fn


def _parse_lab(text: str) -> LabColor:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter("expected 'L,a,b'")
    return LabColor(*parts)


@click.group()
def main():
    """Color-controllable makeup synthesis toolkit."""


@main.command("synth-data")
@_common
@click.option("--n", type=int, required=True, help="Number of crops or triplets.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--kind", type=click.Choice(["crops", "triplets"]), default="crops",
              show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--region", type=click.Choice(["lips", "eyeshadow"]), default="lips",
              show_default=True)
@click.option("--split-ratio", type=float, default=0.9, show_default=True)
def synth_data_cmd(seed, n, out_dir, kind, size, region, split_ratio):
    """Generate a synthetic crop dataset or style-transfer triplets."""
    if kind == "crops":
        path = generate_dataset(n, seed, out_dir, split_ratio=split_ratio,
                                size=size, region=region)
    else:
        path = generate_triplets(n, seed, out_dir, size=size, region=region)
    click.echo(str(path))


@main.command("train")
@_common
@click.option("--manifest", "manifests", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--region", type=click.Choice(["lips", "eyes", "joint"]), default="lips",
              show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--critic-steps", type=int, default=1, show_default=True)
@click.option("--crop-size", type=int, default=64, show_default=True)
@click.option("--lr-d", type=float, default=1e-3, show_default=True)
@click.option("--lr-g", type=float, default=3e-3, show_default=True)
@click.option("--lambda-gp", type=float, default=10.0, show_default=True)
@click.option("--lambda-color", type=float, default=10.0, show_default=True)
@click.option("--lambda-bg", type=float, default=5.0, show_default=True)
@click.option("--lambda-cycle", type=float, default=200.0, show_default=True)
@click.option("--color-space", type=click.Choice(["lab", "rgb"]), default="lab",
              show_default=True)
@click.option("--no-bg-loss", is_flag=True, default=False,
              help="Ablation: drop the background consistency terms.")
@click.option("--base-width", type=int, default=16, show_default=True)
@click.option("--checkpoint-every", type=int, default=0, show_default=True)
def train_cmd(seed, manifests, out_dir, region, epochs, batch_size, critic_steps,
              crop_size, lr_d, lr_g, lambda_gp, lambda_color, lambda_bg,
              lambda_cycle, color_space, no_bg_loss, base_width, checkpoint_every):
    """Train a model on generated crops."""
    config = TrainConfig(
        manifests=tuple(manifests),
        out_dir=out_dir,
        region=region,
        crop_size=crop_size,
        epochs=epochs,
        batch_size=batch_size,
        critic_steps=critic_steps,
        lr_d=lr_d,
        lr_g=lr_g,
        weights=LossWeights(gp=lambda_gp, color=lambda_color, bg=lambda_bg,
                            cycle=lambda_cycle),
        seed=seed,
        checkpoint_every=checkpoint_every,
        color_space=color_space,
        use_bg_loss=not no_bg_loss,
        arch=ArchSpec(base_width=base_width),
    )
    ckpt, log = train(config)
    click.echo(str(ckpt))
    click.echo(str(log))


def _session_for(checkpoint: str, region: str, catalog: str | None = None) -> InferenceSession:
    return InferenceSession(SessionConfig(checkpoints={region: checkpoint},
                                          catalog_path=catalog))


@main.command("eval-color")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--k", type=int, default=10, show_default=True,
              help="Representative shade count (50 mirrors the full protocol).")
@click.option("--region", default="lips", show_default=True)
def eval_color_cmd(seed, checkpoint, manifest, out_path, k, region):
    """Color-accuracy protocol on the test split of a crop dataset."""
    session = _session_for(checkpoint, region)
    train_samples = load_samples(manifest, split="train")
    test_rows = [r for r in load_manifest(manifest)["samples"] if r["split"] == "test"]
    test_samples = load_samples(manifest, split="test")
    pool = [s.gt_makeup for s in train_samples]
    shades = kmeans_shades(pool, k, seed)
    report = eval_color_accuracy(
        lambda image, target: session.synthesize(image, target, region),
        test_samples,
        shades,
        ids=[r["id"] for r in test_rows],
    )
    report.save(out_path)
    click.echo(report.summary())


@main.command("eval-transfer")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--triplets", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--region", default="lips", show_default=True)
def eval_transfer_cmd(seed, checkpoint, triplets, out_path, region):
    """Style-transfer protocol on generated triplets."""
    session = _session_for(checkpoint, region)
    records = load_triplets(triplets)
    report = eval_style_transfer(
        lambda source, reference: session.transfer(source, reference, region)[0],
        records,
    )
    report.save(out_path)
    click.echo(report.summary())


@main.command("estimate")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--image", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the estimate as JSON here (stdout otherwise).")
@click.option("--region", default="lips", show_default=True)
def estimate_cmd(seed, checkpoint, image, out_path, region):
    """Estimate the makeup color of a crop."""
    session = _session_for(checkpoint, region)
    color = session.estimate_color(load_png(image), region)
    payload = json.dumps({"L": round(color.L, 4), "a": round(color.a, 4),
                          "b": round(color.b, 4)})
    if out_path:
        Path(out_path).write_text(payload + "\n")
    click.echo(payload)


@main.command("synthesize")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--image", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--target", required=True, help="Target color as 'L,a,b'.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--region", default="lips", show_default=True)
def synthesize_cmd(seed, checkpoint, image, target, out_path, region):
    """Synthesize the crop with the target makeup color."""
    session = _session_for(checkpoint, region)
    out = session.synthesize(load_png(image), _parse_lab(target), region)
    save_png(out, out_path)
    click.echo(out_path)


@main.command("transfer")
@_common
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--source", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--color-out", type=click.Path(dir_okay=False), default=None,
              help="Also write the estimated reference color as JSON.")
@click.option("--region", default="lips", show_default=True)
def transfer_cmd(seed, checkpoint, source, reference, out_path, color_out, region):
    """Transfer the reference crop's makeup color onto the source crop."""
    session = _session_for(checkpoint, region)
    out, estimated = session.transfer(load_png(source), load_png(reference), region)
    save_png(out, out_path)
    payload = json.dumps({"L": round(estimated.L, 4), "a": round(estimated.a, 4),
                          "b": round(estimated.b, 4)})
    if color_out:
        Path(color_out).write_text(payload + "\n")
    click.echo(payload)


@main.command("serve")
@_common
@click.option("--checkpoint", "checkpoints", multiple=True, required=True,
              help="region=path pairs; bare paths load as the lips model.")
@click.option("--catalog", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--max-upload-bytes", type=int, default=4 * 1024 * 1024, show_default=True)
def serve_cmd(seed, checkpoints, catalog, host, port, max_upload_bytes):
    """Run the HTTP inference service."""
    from .service import serve

    mapping = {}
    for item in checkpoints:
        region, _, path = item.rpartition("=")
        mapping[region or "lips"] = path
    session = InferenceSession(SessionConfig(
        checkpoints=mapping, catalog_path=catalog,
        max_upload_bytes=max_upload_bytes,
    ))
    serve(session, host=host, port=port)


def run():
    try:
        main(standalone_mode=True)
    except MakeupLabError as e:
        raise click.ClickException(str(e))


if __name__ == "__main__":
    main()
