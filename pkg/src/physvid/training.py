"""Joint optimization of the denoiser and physics predictor.

One AdamW update per step over the trainable partition only. All per-step
randomness (batch indices, timesteps, noise) is derived from (seed, step), so
a resumed run reproduces an uninterrupted one bitwise.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass

import torch

from .config import DiffusionConfig, ModelConfig, TrainConfig, config_fingerprint
from .data import TrainingSample
from .diffusion import NoiseSchedule, make_schedule, timestep_embedding
from .generator import Generator, apply_freeze
from .predictor import PhysicsPredictor


class CheckpointError(IOError):
    """Raised for malformed checkpoint files."""


@dataclass
class LossReport:
    step: int
    diffusion_loss: float
    physics_loss: float
    total_loss: float
    grad_norm_trainable: float
    gate_values: list[float]


@dataclass
class TrainState:
    predictor: PhysicsPredictor
    generator: Generator
    optimizer: torch.optim.AdamW
    freeze_mask: dict[str, bool]
    step: int
    seed: int


def joint_loss(
    eps: torch.Tensor,
    eps_hat: torch.Tensor,
    p_hat: torch.Tensor,
    p_gt: torch.Tensor,
    lam: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """total = MSE(eps_hat, eps) + lambda * MSE(p_hat, p_gt), mean reduction."""
    if eps.shape != eps_hat.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != eps_hat shape {tuple(eps_hat.shape)}")
    if p_hat.shape != p_gt.shape:
        raise ValueError(f"p_hat shape {tuple(p_hat.shape)} != p_gt shape {tuple(p_gt.shape)}")
    diffusion = ((eps_hat - eps) ** 2).mean()
    physics = ((p_hat - p_gt) ** 2).mean()
    return diffusion + lam * physics, diffusion, physics


def init_state(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    freeze_policy: str = "spatial-frozen",
) -> TrainState:
    with torch.random.fork_rng():
        torch.manual_seed(train_cfg.seed)
        predictor = PhysicsPredictor(model_cfg)
        generator = Generator(model_cfg)
    mask = apply_freeze(generator, freeze_policy)
    params = [p for p in predictor.parameters()] + [
        p for p in generator.parameters() if p.requires_grad
    ]
    optimizer = torch.optim.AdamW(
        params,
        lr=train_cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=train_cfg.weight_decay,
    )
    return TrainState(predictor, generator, optimizer, mask, 0, train_cfg.seed)


def _step_generator(seed: int, step: int, stream: int = 0) -> torch.Generator:
    # distinct streams keep batch selection decoupled from noise/timestep draws
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + step * 7 + stream) % (2**63))
    return g


def _batch_tensors(samples: list[TrainingSample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    z0 = torch.stack([s.z0 for s in samples])
    c_text = torch.stack([s.c_text for s in samples])
    p_gt = torch.stack([s.p_gt for s in samples])
    return z0, c_text, p_gt


def _check_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise RuntimeError(f"non-finite {name} at training step; aborting")


def train_step(
    batch: list[TrainingSample],
    state: TrainState,
    sched: NoiseSchedule,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> LossReport:
    """One joint AdamW update; randomness is a pure function of (seed, step)."""
    g = _step_generator(state.seed, state.step)
    z0, c_text, p_gt = _batch_tensors(batch)
    B = z0.shape[0]
    T = sched.num_timesteps
    t_idx = torch.randint(0, T, (B,), generator=g)
    eps = torch.randn(z0.shape, generator=g)
    ab = sched.alpha_bars[t_idx].float().view(B, 1, 1, 1, 1)
    z_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
    t_emb = torch.stack(
        [timestep_embedding(int(t), model_cfg.timestep_embed_dim) for t in t_idx]
    )
    p_hat = state.predictor(z_t, c_text, t_emb)
    p_into_gen = p_hat.detach() if train_cfg.detach_physics else p_hat
    eps_hat = state.generator(z_t, t_emb, c_text, p_into_gen)
    total, diffusion, physics = joint_loss(eps, eps_hat, p_hat, p_gt, train_cfg.lambda_phys)
    _check_finite("diffusion_loss", diffusion)
    _check_finite("physics_loss", physics)

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    grad_sq = 0.0
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None:
                grad_sq += float((p.grad.double() ** 2).sum())
    state.optimizer.step()
    state.step += 1
    return LossReport(
        step=state.step,
        diffusion_loss=float(diffusion.detach()),
        physics_loss=float(physics.detach()),
        total_loss=float(total.detach()),
        grad_norm_trainable=grad_sq**0.5,
        gate_values=state.generator.gate_values(),
    )


def train_predictor_only(
    dataset: list[TrainingSample],
    state: TrainState,
    sched: NoiseSchedule,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    steps: int,
) -> list[LossReport]:
    """Physics-regression-only objective on clean latents (t = 0); generator untouched."""
    opt = torch.optim.AdamW(
        state.predictor.parameters(),
        lr=train_cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=train_cfg.weight_decay,
    )
    t_emb_row = timestep_embedding(0, model_cfg.timestep_embed_dim)
    reports = []
    for step in range(steps):
        g = _step_generator(train_cfg.seed, step, stream=2)
        idx = torch.randint(0, len(dataset), (train_cfg.batch_size,), generator=g)
        batch = [dataset[int(i)] for i in idx]
        z0, c_text, p_gt = _batch_tensors(batch)
        eps = torch.randn(z0.shape, generator=g)
        ab = sched.alpha_bars[0].float()
        z_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
        t_emb = t_emb_row.expand(z0.shape[0], -1)
        p_hat = state.predictor(z_t, c_text, t_emb)
        loss = ((p_hat - p_gt) ** 2).mean()
        _check_finite("physics_loss", loss)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        reports.append(
            LossReport(step + 1, 0.0, float(loss.detach()), float(loss.detach()), 0.0, state.generator.gate_values())
        )
    return reports


def train_loop(
    dataset: list[TrainingSample],
    state: TrainState,
    model_cfg: ModelConfig,
    diff_cfg: DiffusionConfig,
    train_cfg: TrainConfig,
    out_dir: str,
    max_steps: int | None = None,
    log_path: str | None = None,
) -> list[LossReport]:
    """Run to max_steps with periodic logging and atomic checkpoints.

    Appends one JSON record per logged step to losses.jsonl under out_dir and
    leaves checkpoint.pvgk at the final step.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    sched = make_schedule(diff_cfg)
    max_steps = train_cfg.max_steps if max_steps is None else max_steps
    os.makedirs(out_dir, exist_ok=True)
    log_path = log_path or os.path.join(out_dir, "losses.jsonl")
    reports = []
    mode = "a" if state.step > 0 else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        while state.step < max_steps:
            g = _step_generator(state.seed, state.step, stream=1)
            idx = torch.randint(0, len(dataset), (train_cfg.batch_size,), generator=g)
            batch = [dataset[int(i)] for i in idx]
            report = train_step(batch, state, sched, model_cfg, train_cfg)
            reports.append(report)
            if report.step % train_cfg.log_every == 0:
                log.write(json.dumps(asdict(report)) + "\n")
                log.flush()
            if train_cfg.checkpoint_every and report.step % train_cfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, "checkpoint.pvgk"), state, model_cfg)
    save_checkpoint(os.path.join(out_dir, "checkpoint.pvgk"), state, model_cfg)
    return reports


# --- checkpoint files -----------------------------------------------------------

CKPT_MAGIC = b"PVGK"
CKPT_VERSION = 1


def save_checkpoint(path: str, state: TrainState, model_cfg: ModelConfig) -> None:
    """Atomic (write-then-rename) checkpoint with magic, version, and fingerprint."""
    import io

    payload_buf = io.BytesIO()
    torch.save(
        {
            "step": state.step,
            "seed": state.seed,
            "freeze_mask": state.freeze_mask,
            "predictor": state.predictor.state_dict(),
            "generator": state.generator.state_dict(),
            "optimizer": state.optimizer.state_dict(),
        },
        payload_buf,
    )
    payload = payload_buf.getvalue()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", CKPT_VERSION))
            fh.write(config_fingerprint(model_cfg).encode("ascii"))
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str, model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    import io

    with open(path, "rb") as fh:
        header = fh.read(4)
        if header != CKPT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {header!r}, expected {CKPT_MAGIC!r}")
        ver_bytes = fh.read(4)
        if len(ver_bytes) != 4:
            raise CheckpointError("truncated checkpoint header")
        (version,) = struct.unpack("<I", ver_bytes)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        fp = fh.read(16).decode("ascii")
        want = config_fingerprint(model_cfg)
        if fp != want:
            raise CheckpointError(f"config fingerprint mismatch: checkpoint {fp}, config {want}")
        (n,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read(n)
        if len(payload) != n:
            raise CheckpointError(f"truncated checkpoint: expected {n} payload bytes, got {len(payload)}")
    blob = torch.load(io.BytesIO(payload), weights_only=False)

    with torch.random.fork_rng():
        torch.manual_seed(blob["seed"])
        predictor = PhysicsPredictor(model_cfg)
        generator = Generator(model_cfg)
    predictor.load_state_dict(blob["predictor"])
    generator.load_state_dict(blob["generator"])
    # restore the freeze partition before building the optimizer so param order matches
    mask = blob["freeze_mask"]
    for name, params in generator.param_groups().items():
        for p in params:
            p.requires_grad_(mask[name])
    opt_params = list(predictor.parameters()) + [
        p for p in generator.parameters() if p.requires_grad
    ]
    optimizer = torch.optim.AdamW(
        opt_params,
        lr=train_cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=train_cfg.weight_decay,
    )
    optimizer.load_state_dict(blob["optimizer"])
    return TrainState(predictor, generator, optimizer, mask, blob["step"], blob["seed"])
