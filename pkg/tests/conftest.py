import pytest
import torch

from physvid import data
from physvid.config import ModelConfig, get_preset


@pytest.fixture(scope="session")
def toy():
    return get_preset("toy")


@pytest.fixture(scope="session")
def toy_model(toy):
    return toy[0]


@pytest.fixture(scope="session")
def toy_diff(toy):
    return toy[1]


@pytest.fixture(scope="session")
def toy_train(toy):
    return toy[2]


# every dimension <= 4 so central finite differences stay cheap
@pytest.fixture(scope="session")
def mini_model():
    return ModelConfig(
        latent_channels=2,
        latent_frames=2,
        latent_height=2,
        latent_width=2,
        text_len=2,
        text_dim=3,
        phys_tokens=2,
        phys_dim=3,
        hidden_dim=4,
        predictor_layers=1,
        predictor_heads=2,
        gen_spatial_blocks=1,
        gen_temporal_blocks=1,
        gen_heads=2,
        timestep_embed_dim=4,
    )


@pytest.fixture(scope="session")
def small_dataset(toy_model):
    return list(data.stream_samples(range(8), toy_model))


def finite_diff_max_rel_err(params, loss_fn, h=1e-5, max_entries_per_tensor=64):
    """Max relative error between autograd and central finite differences.

    Parameters must be float64 leaves; loss_fn re-evaluates the scalar loss.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, grad in zip(params, grads):
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        n = flat.numel()
        stride = max(1, n // max_entries_per_tensor)
        for i in range(0, n, stride):
            orig = flat[i].item()
            flat[i] = orig + h
            lp = loss_fn().item()
            flat[i] = orig - h
            lm = loss_fn().item()
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = gflat[i].item()
            denom = max(abs(num), abs(ana), 1e-6)
            worst = max(worst, abs(num - ana) / denom)
    return worst
