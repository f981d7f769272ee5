import numpy as np
import pytest
import torch

from makeuplab.synth import generate_dataset, render_crop, sample_spec

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def lip_sample():
    """One representative rendered lip crop."""
    return render_crop(sample_spec(np.random.default_rng(42)))


@pytest.fixture(scope="session")
def flat_sample():
    """A noise-free crop: no shading, speckle, or background noise."""
    import dataclasses

    spec = sample_spec(np.random.default_rng(7), background_noise=0.0,
                       shading=0.0, speckle=0.0)
    spec = dataclasses.replace(spec, seed=1234)
    return render_crop(spec)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small on-disk dataset shared by training/eval/service tests."""
    out = tmp_path_factory.mktemp("tinydata")
    manifest = generate_dataset(30, 1301, out, split_ratio=0.8)
    return manifest
