"""Reference desk-scale pipeline: dataset, three training runs, and the
evaluation protocols behind the end-to-end acceptance checks.

Every stage is deterministic and cached under the artifacts root, so rerunning
is idempotent: a stage is skipped when its output already exists. Running this
script ahead of `pytest` pre-builds everything the acceptance suite needs.

    python scripts/acceptance_pipeline.py [--root artifacts/acceptance]
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_ROOT = REPO_ROOT / "artifacts" / "acceptance"

from makeuplab.evaluate import eval_color_accuracy, eval_style_transfer, kmeans_shades, load_triplets
from makeuplab.losses import LossWeights
from makeuplab.models import ArchSpec
from makeuplab.session import InferenceSession, SessionConfig
from makeuplab.synth import generate_dataset, generate_triplets, load_samples
from makeuplab.train import TrainConfig, train

DATA_SEED = 20260810
DATA_N = 2000
TRIPLET_SEED = 777
TRIPLET_N = 100
CROP_SIZE = 64
TRAIN_SEED = 41
EPOCHS = 40
SHADE_K = 10
SHADE_SEED = 0

# Desk-scale optimization settings shared by the three ablation runs. The
# lambdas are the package defaults; the generator rate is calibrated for the
# tiny-crop regime (at 3e-3 the first full-rate updates saturate the residual
# branch and the run degenerates).
RUN_KWARGS = dict(
    crop_size=CROP_SIZE,
    epochs=EPOCHS,
    batch_size=16,
    critic_steps=1,
    lr_d=1e-3,
    lr_g=3e-4,
    weights=LossWeights(),
    seed=TRAIN_SEED,
    critic_warmup_epochs=2,
    arch=ArchSpec(),
)

RUNS = {
    "full": dict(color_space="lab", use_bg_loss=True),
    "no_bg": dict(color_space="lab", use_bg_loss=False),
    "rgb": dict(color_space="rgb", use_bg_loss=False),
}


def build_dataset(root: Path) -> Path:
    manifest = root / "data" / "manifest.json"
    if not manifest.exists():
        t0 = time.time()
        generate_dataset(DATA_N, DATA_SEED, root / "data", split_ratio=0.9, size=CROP_SIZE)
        print(f"[data] generated {DATA_N} crops in {time.time() - t0:.0f}s", flush=True)
    return manifest


def build_triplets(root: Path) -> Path:
    manifest = root / "triplets" / "triplets.json"
    if not manifest.exists():
        t0 = time.time()
        generate_triplets(TRIPLET_N, TRIPLET_SEED, root / "triplets", size=CROP_SIZE)
        print(f"[triplets] generated {TRIPLET_N} in {time.time() - t0:.0f}s", flush=True)
    return manifest


def build_run(root: Path, name: str, manifest: Path) -> Path:
    ckpt = root / name / "checkpoint_final.pt"
    if not ckpt.exists():
        t0 = time.time()
        config = TrainConfig(
            manifests=(str(manifest),),
            out_dir=str(root / name),
            **RUN_KWARGS,
            **RUNS[name],
        )
        train(config)
        print(f"[{name}] trained {EPOCHS} epochs in {time.time() - t0:.0f}s", flush=True)
    return ckpt


def session_for(ckpt: Path) -> InferenceSession:
    return InferenceSession(SessionConfig(checkpoints={"lips": str(ckpt)}))


def evaluate_runs(root: Path, manifest: Path, triplet_manifest: Path,
                  checkpoints: dict[str, Path]) -> dict:
    out_path = root / "metrics.json"
    if out_path.exists():
        return json.loads(out_path.read_text())

    train_samples = load_samples(manifest, split="train")
    test_samples = load_samples(manifest, split="test")
    shades = kmeans_shades([s.gt_makeup for s in train_samples], SHADE_K, SHADE_SEED)
    triplets = load_triplets(triplet_manifest)

    metrics: dict = {"shades": [list(c.as_tuple()) for c in shades.centroids]}
    for name, ckpt in checkpoints.items():
        t0 = time.time()
        sess = session_for(ckpt)
        color_rep = eval_color_accuracy(
            lambda im, t: sess.synthesize(im, t), test_samples, shades
        )
        transfer_rep = eval_style_transfer(
            lambda s, r: sess.transfer(s, r)[0], triplets
        )
        metrics[name] = {
            "lips_de_mean": color_rep.aggregates["lips_de_mean"],
            "skin_de_mean": color_rep.aggregates["skin_de_mean"],
            "l1_mean": transfer_rep.aggregates["l1_mean"],
            "one_minus_mssim_mean": transfer_rep.aggregates["one_minus_mssim_mean"],
        }
        color_rep.save(root / name / "color_report.json")
        transfer_rep.save(root / name / "transfer_report.json")
        print(f"[{name}] evaluated in {time.time() - t0:.0f}s: {metrics[name]}", flush=True)

    out_path.write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    return metrics


def build_all(root: Path = DEFAULT_ROOT) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    manifest = build_dataset(root)
    triplet_manifest = build_triplets(root)
    checkpoints = {name: build_run(root, name, manifest) for name in RUNS}
    metrics = evaluate_runs(root, manifest, triplet_manifest, checkpoints)
    return {
        "manifest": manifest,
        "triplets": triplet_manifest,
        "checkpoints": checkpoints,
        "metrics": metrics,
    }


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", type=Path, default=DEFAULT_ROOT)
    args = parser.parse_args()
    result = build_all(args.root)
    print(json.dumps(result["metrics"], indent=1, sort_keys=True))
