import json

import numpy as np
import pytest
import torch
from scipy.stats import chisquare

from makeuplab.errors import (
    ConfigurationError,
    DatasetQualityError,
    TrainingDivergedError,
)
from makeuplab.losses import LossWeights, make_batch
from makeuplab.models import ArchSpec, init_params, load_checkpoint
from makeuplab.synth import load_manifest
from makeuplab.train import (
    TrainConfig,
    load_train_data,
    load_train_log,
    sample_target_colors,
    train,
    train_step,
)


def small_config(tiny_dataset, tmp_path, **overrides):
    base = dict(
        manifests=(str(tiny_dataset),),
        out_dir=str(tmp_path / "run"),
        epochs=1,
        batch_size=8,
        seed=5,
        critic_warmup_epochs=0,
        arch=ArchSpec(base_width=8, res_blocks=1),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def loaded_data(tiny_dataset):
    cfg = TrainConfig(manifests=(str(tiny_dataset),), out_dir="unused")
    return load_train_data(cfg)


def make_opts(params, config):
    opt_d = torch.optim.Adam(params.discriminator.parameters(), lr=config.lr_d,
                             betas=(config.beta1, config.beta2))
    opt_g = torch.optim.Adam(params.generator.parameters(), lr=config.lr_g,
                             betas=(config.beta1, config.beta2))
    return opt_d, opt_g


def first_batch(data, n=6):
    targets = sample_target_colors(data.pool, n, 0, 0)
    return make_batch(data.images[:n], data.makeup[:n], data.skin[:n], targets)


# ---------------------------------------------------------------------------
# Target sampling

def test_single_color_pool():
    pool = np.array([[50.0, 10.0, 10.0]])
    got = sample_target_colors(pool, 7, epoch_index=0, seed=1)
    assert np.array_equal(got, np.repeat(pool, 7, axis=0))


def test_target_assignment_deterministic():
    pool = np.random.default_rng(0).uniform(0, 100, (12, 3))
    a = sample_target_colors(pool, 20, epoch_index=3, seed=9)
    b = sample_target_colors(pool, 20, epoch_index=3, seed=9)
    assert np.array_equal(a, b)
    c = sample_target_colors(pool, 20, epoch_index=4, seed=9)
    assert not np.array_equal(a, c)


def test_target_distribution_uniform_chi2():
    pool = np.arange(30).reshape(10, 3).astype(float)
    counts = np.zeros(10)
    for epoch in range(100):
        draws = sample_target_colors(pool, 50, epoch, seed=2)
        idx = draws[:, 0] // 3  # first pool column encodes the row index
        for i in idx.astype(int):
            counts[i] += 1
    _, p = chisquare(counts)
    assert p > 0.001, f"chi-square p={p}, counts={counts}"


def test_empty_pool_rejected():
    with pytest.raises(ConfigurationError):
        sample_target_colors(np.empty((0, 3)), 5, 0, 0)


# ---------------------------------------------------------------------------
# Data loading

def test_load_train_data_split_only(tiny_dataset, loaded_data):
    manifest = load_manifest(tiny_dataset)
    train_ids = {r["id"] for r in manifest["samples"] if r["split"] == "train"}
    test_ids = {r["id"] for r in manifest["samples"] if r["split"] == "test"}
    assert set(loaded_data.ids) <= train_ids
    assert not (set(loaded_data.ids) & test_ids)
    assert len(loaded_data.ids) + len(loaded_data.skipped) == len(train_ids)


def test_region_mismatch_rejected(tiny_dataset, tmp_path):
    cfg = small_config(tiny_dataset, tmp_path, region="eyes")
    with pytest.raises(Exception):
        load_train_data(cfg)


def test_too_many_weak_failures(tmp_path, tiny_dataset):
    # corrupt the manifest so every mask rasterizes empty: landmarks collapse
    manifest = load_manifest(tiny_dataset)
    bad = json.loads(json.dumps(manifest))
    for row in bad["samples"]:
        row["spec"]["axes"] = [0.01, 0.01]
        row["spec"]["center"] = [32.0, 32.0]
    bad_path = tmp_path / "bad_manifest.json"
    bad_path.write_text(json.dumps(bad))
    import shutil

    for sub in ("images", "masks"):
        shutil.copytree(tiny_dataset.parent / sub, tmp_path / sub)
    cfg = TrainConfig(manifests=(str(bad_path),), out_dir=str(tmp_path / "r"))
    with pytest.raises(DatasetQualityError):
        load_train_data(cfg)


# ---------------------------------------------------------------------------
# train_step

def test_zero_learning_rates_keep_params_bit_exact(tiny_dataset, tmp_path, loaded_data):
    cfg = small_config(tiny_dataset, tmp_path, lr_d=0.0, lr_g=0.0)
    params = init_params(cfg.arch, cfg.seed)
    before = {
        k: v.clone() for k, v in {
            **params.generator.state_dict(),
            **{"d_" + k: v for k, v in params.discriminator.state_dict().items()},
        }.items()
    }
    batch = first_batch(loaded_data)
    rng = torch.Generator().manual_seed(0)
    train_step(batch, params, make_opts(params, cfg), cfg, rng)
    after = {
        **params.generator.state_dict(),
        **{"d_" + k: v for k, v in params.discriminator.state_dict().items()},
    }
    for key, tensor in before.items():
        assert torch.equal(tensor, after[key]), key


def test_one_step_deterministic(tiny_dataset, tmp_path, loaded_data):
    cfg = small_config(tiny_dataset, tmp_path)
    outs = []
    for _ in range(2):
        params = init_params(cfg.arch, cfg.seed)
        batch = first_batch(loaded_data)
        rng = torch.Generator().manual_seed(0)
        _, _, record = train_step(batch, params, make_opts(params, cfg), cfg, rng)
        outs.append((record, [p.detach().clone() for p in params.generator.parameters()]))
    assert outs[0][0]["g_total"] == outs[1][0]["g_total"]
    for a, b in zip(outs[0][1], outs[1][1]):
        assert torch.equal(a, b)


def test_smoke_descent_of_generator_color_loss(tiny_dataset, tmp_path, loaded_data):
    """On a frozen toy batch, repeated steps reduce the generator color
    objective below its starting value."""
    cfg = small_config(tiny_dataset, tmp_path, lr_g=3e-4)
    params = init_params(cfg.arch, cfg.seed)
    opts = make_opts(params, cfg)
    batch = first_batch(loaded_data, n=8)
    rng = torch.Generator().manual_seed(0)
    records = []
    for _ in range(200):
        _, _, record = train_step(batch, params, opts, cfg, rng)
        records.append(record["g_color"])
    assert min(records[-20:]) < records[0]


def test_nan_loss_aborts_with_diagnostic(tiny_dataset, tmp_path, loaded_data):
    cfg = small_config(tiny_dataset, tmp_path)
    params = init_params(cfg.arch, cfg.seed)
    with torch.no_grad():
        next(params.discriminator.parameters()).fill_(float("nan"))
    batch = first_batch(loaded_data)
    rng = torch.Generator().manual_seed(0)
    with pytest.raises(TrainingDivergedError) as err:
        train_step(batch, params, make_opts(params, cfg), cfg, rng)
    assert err.value.record["step"] == 0


# ---------------------------------------------------------------------------
# train()

def test_one_epoch_run_writes_loadable_checkpoint(tiny_dataset, tmp_path):
    cfg = small_config(tiny_dataset, tmp_path)
    ckpt, log_path = train(cfg)
    params = load_checkpoint(ckpt)
    assert params.step > 0
    records = load_train_log(log_path)
    assert records[0]["type"] == "config"
    assert any(r["type"] == "step" for r in records)


def test_full_run_deterministic(tiny_dataset, tmp_path):
    logs = []
    for name in ("a", "b"):
        cfg = small_config(tiny_dataset, tmp_path / name, epochs=2)
        _, log_path = train(cfg)
        steps = [r for r in load_train_log(log_path) if r["type"] == "step"]
        logs.append([(r["d_total"], r["g_total"]) for r in steps])
    assert logs[0] == logs[1]


def test_loss_recomposition_in_log(tiny_dataset, tmp_path):
    cfg = small_config(tiny_dataset, tmp_path, epochs=1)
    _, log_path = train(cfg)
    w = cfg.weights
    for r in load_train_log(log_path):
        if r["type"] != "step" or r.get("warmup"):
            continue
        d_recomposed = r["d_adv"] + r["d_color"] + r["d_bg"]
        assert abs(d_recomposed - r["d_total"]) <= 1e-6 * max(1.0, abs(r["d_total"]))
        g_recomposed = (r["g_adv"] + w.color * r["g_color"] + w.bg * r["g_bg"]
                        + w.cycle * r["g_cycle"])
        assert abs(g_recomposed - r["g_total"]) <= 1e-6 * max(1.0, abs(r["g_total"]))


def test_no_test_split_leak_into_pool(tiny_dataset, tmp_path):
    cfg = small_config(tiny_dataset, tmp_path)
    _, log_path = train(cfg)
    header = load_train_log(log_path)[0]
    manifest = load_manifest(tiny_dataset)
    test_ids = {r["id"] for r in manifest["samples"] if r["split"] == "test"}
    assert not (set(header["train_ids"]) & test_ids)
    assert not (set(header["skipped_ids"]) & test_ids)


def test_joint_region_mixes_manifests(tmp_path):
    from makeuplab.synth import generate_dataset

    lips = generate_dataset(8, 21, tmp_path / "lips", size=64, region="lips")
    eyes = generate_dataset(8, 22, tmp_path / "eyes", size=64, region="eyeshadow")
    cfg = TrainConfig(
        manifests=(str(lips), str(eyes)),
        out_dir=str(tmp_path / "joint"),
        region="joint",
        epochs=1,
        batch_size=4,
        seed=1,
        critic_warmup_epochs=0,
        arch=ArchSpec(base_width=8, res_blocks=1),
    )
    data = load_train_data(cfg)
    assert len(data.ids) > 0
    ckpt, _ = train(cfg, data=data)
    assert ckpt.exists()


def test_invalid_configs_rejected(tiny_dataset, tmp_path):
    with pytest.raises(ConfigurationError):
        small_config(tiny_dataset, tmp_path, batch_size=0).validate()
    with pytest.raises(ConfigurationError):
        small_config(tiny_dataset, tmp_path, region="nose").validate()
    with pytest.raises(ConfigurationError):
        small_config(tiny_dataset, tmp_path, color_space="xyz").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(manifests=(), out_dir="x").validate()
