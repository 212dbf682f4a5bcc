import os

import pytest
import torch

from physvid import data, inference
from physvid.diffusion import make_schedule
from physvid.generator import Generator
from physvid.inference import GenerationRequest, dry_run, generate, read_video, write_video
from physvid.predictor import PhysicsPredictor


@pytest.fixture(scope="module")
def models(toy_model):
    with torch.random.fork_rng():
        torch.manual_seed(0)
        return PhysicsPredictor(toy_model), Generator(toy_model)


@pytest.fixture(scope="module")
def sched(toy_diff):
    return make_schedule(toy_diff)


def test_generate_deterministic(toy_model, models, sched):
    req = GenerationRequest(prompt="a ball drops", num_steps=5, seed=3)
    a = generate(req, *models, sched, toy_model)
    b = generate(req, *models, sched, toy_model)
    assert torch.equal(a.frames, b.frames)
    assert torch.equal(a.latents_final, b.latents_final)


def test_generate_physics_on_off_identical_at_zero_gates(toy_model, models, sched):
    # freshly initialized gates are 0, so conditioning must be a strict no-op
    on = generate(GenerationRequest("a ball", 5, 7, physics="on"), *models, sched, toy_model)
    off = generate(GenerationRequest("a ball", 5, 7, physics="off"), *models, sched, toy_model)
    assert torch.equal(on.frames, off.frames)


def test_generate_pixel_bounds(toy_model, models, sched):
    video = generate(GenerationRequest("anything", 3, 0), *models, sched, toy_model)
    assert video.frames.dtype == torch.uint8
    assert int(video.frames.min()) >= 0 and int(video.frames.max()) <= 255


def test_generate_physics_norm_series(toy_model, models, sched):
    video = generate(GenerationRequest("x", 4, 1), *models, sched, toy_model)
    assert len(video.per_step_physics_norm) == 4
    assert all(n > 0 and n == n for n in video.per_step_physics_norm)


def test_generate_validates_request(toy_model, models, sched):
    with pytest.raises(ValueError, match="num_steps"):
        generate(GenerationRequest("x", 500, 0), *models, sched, toy_model)
    with pytest.raises(ValueError, match="physics"):
        generate(GenerationRequest("x", 3, 0, physics="maybe"), *models, sched, toy_model)


def test_physics_off_never_calls_predictor(toy_model, models, sched, monkeypatch):
    predictor, gen = models
    calls = {"n": 0}
    orig = PhysicsPredictor.forward

    def counting(self, *a, **k):
        calls["n"] += 1
        return orig(self, *a, **k)

    monkeypatch.setattr(PhysicsPredictor, "forward", counting)
    generate(GenerationRequest("x", 4, 2, physics="off"), predictor, gen, sched, toy_model)
    assert calls["n"] == 0
    generate(GenerationRequest("x", 4, 2, physics="on"), predictor, gen, sched, toy_model)
    assert calls["n"] == 4


def test_dry_run_shapes(toy_model, toy_diff):
    diag = dry_run("ball drops onto the floor", toy_model, toy_diff)
    assert diag["physics_shape"] == [64, 32]
    assert diag["eps_hat_shape"] == [12, 8, 8, 8]
    assert diag["all_finite"] is True
    assert diag["wall_time_s"] > 0
    assert diag["timestep"] == toy_diff.num_timesteps - 1


def test_dry_run_needs_no_checkpoint(tmp_path, toy_model, toy_diff, monkeypatch):
    monkeypatch.chdir(tmp_path)  # empty directory: no checkpoint anywhere
    diag = dry_run("prompt", toy_model, toy_diff)
    assert diag["all_finite"] is True
    assert list(tmp_path.iterdir()) == []  # and it wrote nothing


def test_write_read_video_round_trip(tmp_path, toy_model, models, sched):
    video = generate(GenerationRequest("x", 3, 5), *models, sched, toy_model)
    out = str(tmp_path / "vid")
    write_video(video, out)
    files = sorted(os.listdir(out))
    assert len(files) == toy_model.latent_frames
    assert all(f.endswith(".ppm") for f in files)
    back = read_video(out)
    assert torch.equal(back, video.frames)


def test_static_latent_decodes_to_identical_frames(tmp_path, toy_model):
    # per-frame decoding: constant-over-frames latent yields identical files
    z = torch.randn(12, 1, 8, 8).expand(12, 8, 8, 8).contiguous()
    pixels = data.toy_vae_decode(z, toy_model)
    frames = torch.floor(torch.clamp((pixels + 1.0) * 127.5, 0.0, 255.0) + 0.5).to(torch.uint8)
    video = inference.GeneratedVideo(frames=frames, latents_final=z)
    out = str(tmp_path / "static")
    write_video(video, out)
    blobs = {open(os.path.join(out, f), "rb").read() for f in os.listdir(out)}
    assert len(blobs) == 1
