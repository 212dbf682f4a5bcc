"""Streaming production of (latent, text, physics) training triples.

Videos are procedurally generated bouncing/sliding discs; the heavyweight
pretrained extractors are replaced by deterministic toy stand-ins:

* codec: exactly invertible orthonormal 2x2-patch linear map (factor-2
  spatial downsample, 3 -> 12 latent channels),
* text: hashed pseudo-random unit vectors per whitespace token,
* physics targets: per-cell motion/appearance statistics over a
  spatiotemporal grid, standardized by constants frozen at build time.

Everything is a pure function of (seed, config); no video frames ever touch
disk in the streaming path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
import torch

from .config import ModelConfig, config_fingerprint

SPATIAL_FACTOR = 2  # toy codec downsample; 3 * 2 * 2 = 12 latent channels

CLIP_KINDS = ("bounce", "slide", "collide", "static")

# Per-feature standardization constants frozen from a 256-clip calibration run
# over all four kinds (tools/calibrate_physics_stats.py regenerates them).
PHYS_FEATURE_MEAN = np.array([-0.8960024118, 0.0, 0.0820039883, 0.0, 0.0])
PHYS_FEATURE_STD = np.array([0.2136680037, 0.0821238458, 0.1239663139, 0.1840720475, 0.1469297856])


@dataclass(frozen=True)
class SceneParams:
    positions: tuple  # (x, y) per disc, px
    velocities: tuple  # (vx, vy) per disc, px/frame
    radii: tuple
    gravity: float  # px/frame^2, +y is down


@dataclass(frozen=True)
class VideoClip:
    frames: torch.Tensor  # [3, F, H, W] in [-1, 1]
    prompt: str
    scene_params: SceneParams
    seed: int
    kind: str


@dataclass(frozen=True)
class TrainingSample:
    z0: torch.Tensor
    c_text: torch.Tensor
    p_gt: torch.Tensor
    prompt: str
    sample_id: str


class ShardError(IOError):
    """Raised for malformed shard files (magic, version, fingerprint, truncation)."""


# --- synthetic clips ------------------------------------------------------------


def pixel_dims(cfg: ModelConfig) -> tuple[int, int, int]:
    """(F_px, H_px, W_px) for the toy codec; no temporal compression."""
    return (
        cfg.latent_frames,
        cfg.latent_height * SPATIAL_FACTOR,
        cfg.latent_width * SPATIAL_FACTOR,
    )


def _render_disc(canvas: np.ndarray, cx: float, cy: float, r: float, color: np.ndarray) -> None:
    H, W = canvas.shape[1:]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    coverage = np.clip(r + 0.5 - dist, 0.0, 1.0)  # 1-px anti-aliased edge
    canvas += coverage[None] * color[:, None, None]


def synth_clip(seed: int, kind: str, cfg: ModelConfig) -> VideoClip:
    """Deterministic clip of 1-2 anti-aliased discs under constant gravity."""
    if kind not in CLIP_KINDS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {CLIP_KINDS}")
    F, H, W = pixel_dims(cfg)
    rng = np.random.default_rng(
        int.from_bytes(hashlib.sha256(f"{kind}:{seed}".encode()).digest()[:8], "little")
    )

    n_discs = 2 if kind == "collide" else 1
    radii, pos, vel = [], [], []
    for i in range(n_discs):
        r = float(rng.uniform(0.12, 0.18) * min(H, W))
        radii.append(r)
    if kind == "static":
        pos = [(rng.uniform(0.3, 0.7) * W, rng.uniform(0.3, 0.7) * H)]
        vel = [(0.0, 0.0)]
        gravity = 0.0
    elif kind == "slide":
        pos = [(rng.uniform(0.25, 0.4) * W, rng.uniform(0.35, 0.65) * H)]
        vel = [(rng.uniform(0.04, 0.08) * W, 0.0)]
        gravity = 0.0
    elif kind == "bounce":
        pos = [(rng.uniform(0.35, 0.65) * W, rng.uniform(0.2, 0.35) * H)]
        vel = [(0.0, rng.uniform(0.0, 0.02) * H)]
        gravity = float(rng.uniform(0.01, 0.025) * H)
    else:  # collide
        y = rng.uniform(0.4, 0.6) * H
        pos = [(0.22 * W, y), (0.78 * W, y)]
        sp = rng.uniform(0.04, 0.07) * W
        vel = [(sp, 0.0), (-sp, 0.0)]
        gravity = 0.0

    colors = np.array([[1.6, 1.2, 0.6], [0.6, 1.2, 1.6]])[:n_discs]
    frames = np.empty((3, F, H, W), dtype=np.float64)
    p = [list(xy) for xy in pos]
    v = [list(uv) for uv in vel]
    for t in range(F):
        canvas = np.full((3, H, W), -1.0)
        for i in range(n_discs):
            _render_disc(canvas, p[i][0], p[i][1], radii[i], colors[i])
        frames[:, t] = np.clip(canvas, -1.0, 1.0)
        # exact constant-acceleration kinematics between bounces
        for i in range(n_discs):
            p[i][0] += v[i][0]
            p[i][1] += v[i][1] + 0.5 * gravity
            v[i][1] += gravity
            for axis, lim in ((0, W), (1, H)):
                if p[i][axis] < radii[i]:
                    p[i][axis] = 2 * radii[i] - p[i][axis]
                    v[i][axis] = -v[i][axis]
                elif p[i][axis] > lim - radii[i]:
                    p[i][axis] = 2 * (lim - radii[i]) - p[i][axis]
                    v[i][axis] = -v[i][axis]
        if n_discs == 2:
            dx = p[1][0] - p[0][0]
            dy = p[1][1] - p[0][1]
            if math.hypot(dx, dy) < radii[0] + radii[1]:
                v[0], v[1] = v[1], v[0]  # equal-mass head-on elastic exchange

    prompt = _prompt_for(kind, pos, vel, gravity)
    return VideoClip(
        frames=torch.from_numpy(frames).float(),
        prompt=prompt,
        scene_params=SceneParams(
            positions=tuple(tuple(xy) for xy in pos),
            velocities=tuple(tuple(uv) for uv in vel),
            radii=tuple(radii),
            gravity=gravity,
        ),
        seed=seed,
        kind=kind,
    )


def _prompt_for(kind: str, pos, vel, gravity: float) -> str:
    if kind == "static":
        return "a ball resting motionless in the scene"
    if kind == "slide":
        return f"a ball sliding {'right' if vel[0][0] > 0 else 'left'} at constant speed"
    if kind == "bounce":
        return f"a ball falling under gravity {gravity:.3f} and bouncing off the floor"
    return "two balls moving toward each other and colliding elastically"


# --- toy codec ------------------------------------------------------------------


def _codec_matrix() -> np.ndarray:
    # fixed orthonormal 12x12 map, same on every run
    rng = np.random.default_rng(20240901)
    q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    return q


_CODEC_Q = _codec_matrix()


def toy_vae_encode(frames: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """[3, F, H_px, W_px] -> [12, F, H_px/2, W_px/2] through the orthonormal patch map."""
    if cfg.latent_channels != 3 * SPATIAL_FACTOR**2:
        raise ValueError("toy codec requires latent_channels == 12")
    C, F, H, W = frames.shape
    if H % SPATIAL_FACTOR or W % SPATIAL_FACTOR:
        raise ValueError(f"pixel dims ({H}, {W}) not divisible by {SPATIAL_FACTOR}")
    p = SPATIAL_FACTOR
    x = frames.permute(1, 2, 3, 0)  # F H W C
    x = x.reshape(F, H // p, p, W // p, p, C).permute(0, 1, 3, 2, 4, 5)
    x = x.reshape(F, H // p, W // p, p * p * C)
    q = torch.from_numpy(_CODEC_Q).to(x.dtype)
    z = x @ q.T
    return z.permute(3, 0, 1, 2).contiguous()


def toy_vae_decode(z: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Inverse of toy_vae_encode (transpose of the orthonormal map)."""
    Cl, F, Hl, Wl = z.shape
    p = SPATIAL_FACTOR
    q = torch.from_numpy(_CODEC_Q).to(z.dtype)
    x = z.permute(1, 2, 3, 0) @ q  # F Hl Wl 12
    x = x.reshape(F, Hl, Wl, p, p, 3).permute(0, 1, 3, 2, 4, 5)
    x = x.reshape(F, Hl * p, Wl * p, 3)
    return x.permute(3, 0, 1, 2).contiguous()


# --- toy text embedder ----------------------------------------------------------


def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def toy_text_embed(prompt: str, cfg: ModelConfig) -> torch.Tensor:
    """Whitespace tokens -> deterministic unit vectors; zero-padded to [L, Dt]."""
    out = np.zeros((cfg.text_len, cfg.text_dim), dtype=np.float64)
    for i, tok in enumerate(prompt.split()[: cfg.text_len]):
        out[i] = _token_vector(tok, cfg.text_dim)
    return torch.from_numpy(out).float()


# --- toy physics extractor ------------------------------------------------------

N_RAW_FEATURES = 5  # mean intensity, mean temporal diff, mean |grad|, centroid shift x, y


def grid_factorization(n_tokens: int) -> tuple[int, int]:
    """(temporal cells, spatial cells per side) with nt * ns * ns == n_tokens.

    Picks nt nearest the cube root among divisors leaving a perfect square
    (64 -> 4x4x4; 2048 -> 8 temporal x 16x16 spatial).
    """
    best = None
    for nt in range(1, n_tokens + 1):
        if n_tokens % nt:
            continue
        ns = math.isqrt(n_tokens // nt)
        if ns * ns != n_tokens // nt:
            continue
        score = abs(math.log(nt) - math.log(n_tokens) / 3)
        if best is None or score < best[0]:
            best = (score, nt, ns)
    if best is None:
        raise ValueError(f"phys_tokens={n_tokens} admits no nt x ns x ns grid")
    return best[1], best[2]


def toy_physics_extract(frames: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Per-cell motion/appearance statistics over an N-cell grid -> [N, Dp]."""
    f = frames.numpy().astype(np.float64)
    C, F, H, W = f.shape
    if F < 2:
        raise ValueError(f"need at least 2 frames, got {F}")
    nt, ns = grid_factorization(cfg.phys_tokens)
    if F % nt or H % ns or W % ns:
        raise ValueError(f"frames {F}x{H}x{W} not divisible by grid {nt}x{ns}x{ns}")
    g = f.mean(axis=0)  # grayscale [F, H, W]
    gy, gx = np.gradient(g, axis=(1, 2))
    grad_mag = np.sqrt(gx**2 + gy**2)
    tdiff = np.diff(g, axis=0)  # [F-1, H, W]

    ft, fh, fw = F // nt, H // ns, W // ns
    feats = np.zeros((cfg.phys_tokens, cfg.phys_dim), dtype=np.float64)
    ys, xs = np.mgrid[0:fh, 0:fw].astype(np.float64)
    idx = 0
    for ti in range(nt):
        tsl = slice(ti * ft, (ti + 1) * ft)
        for yi in range(ns):
            for xi in range(ns):
                cell = g[tsl, yi * fh : (yi + 1) * fh, xi * fw : (xi + 1) * fw]
                raw = np.zeros(N_RAW_FEATURES)
                raw[0] = cell.mean()
                # within-cell diffs only, so time reversal negates this cleanly
                dcell = tdiff[tsl.start : tsl.stop - 1, yi * fh : (yi + 1) * fh, xi * fw : (xi + 1) * fw]
                raw[1] = dcell.mean() if dcell.size else 0.0
                raw[2] = grad_mag[tsl, yi * fh : (yi + 1) * fh, xi * fw : (xi + 1) * fw].mean()
                first, last = cell[0] + 1.0, cell[-1] + 1.0  # weights >= 0 (background is -1)
                if first.sum() > 1e-9 and last.sum() > 1e-9:
                    raw[3] = (last * xs).sum() / last.sum() - (first * xs).sum() / first.sum()
                    raw[4] = (last * ys).sum() / last.sum() - (first * ys).sum() / first.sum()
                k = min(N_RAW_FEATURES, cfg.phys_dim)
                feats[idx, :k] = (raw[:k] - PHYS_FEATURE_MEAN[:k]) / PHYS_FEATURE_STD[:k]
                idx += 1
    return torch.from_numpy(feats).float()


# --- streaming pipeline ---------------------------------------------------------


def kind_for_seed(seed: int) -> str:
    return CLIP_KINDS[seed % len(CLIP_KINDS)]


def make_sample(seed: int, cfg: ModelConfig, kind: str | None = None) -> TrainingSample:
    kind = kind_for_seed(seed) if kind is None else kind
    clip = synth_clip(seed, kind, cfg)
    return TrainingSample(
        z0=toy_vae_encode(clip.frames, cfg),
        c_text=toy_text_embed(clip.prompt, cfg),
        p_gt=toy_physics_extract(clip.frames, cfg),
        prompt=clip.prompt,
        sample_id=f"{kind}-{seed:08d}",
    )


def stream_samples(seeds: Iterable[int], cfg: ModelConfig) -> Iterator[TrainingSample]:
    """Lazily synthesize, encode, embed, and extract per seed; O(1) memory."""
    for seed in seeds:
        try:
            yield make_sample(seed, cfg)
        except Exception as exc:
            raise RuntimeError(f"sample {kind_for_seed(seed)}-{seed:08d} failed: {exc}") from exc


# --- shard files ----------------------------------------------------------------

SHARD_MAGIC = b"PVGC"
SHARD_VERSION = 1


def _write_tensor(fh, t: torch.Tensor) -> None:
    arr = np.ascontiguousarray(t.detach().numpy().astype("<f4"))
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ShardError(f"truncated shard file: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_tensor(fh) -> torch.Tensor:
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return torch.from_numpy(data.copy())


def write_shard(samples: Iterable[TrainingSample], path: str, cfg: ModelConfig) -> int:
    fp = config_fingerprint(cfg).encode("ascii")
    count = 0
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<I", SHARD_VERSION))
        fh.write(fp)
        count_pos = fh.tell()
        fh.write(struct.pack("<Q", 0))
        for s in samples:
            sid = s.sample_id.encode("utf-8")
            fh.write(struct.pack("<I", len(sid)))
            fh.write(sid)
            for t in (s.z0, s.c_text, s.p_gt):
                _write_tensor(fh, t)
            pb = s.prompt.encode("utf-8")
            fh.write(struct.pack("<I", len(pb)))
            fh.write(pb)
            count += 1
        fh.seek(count_pos)
        fh.write(struct.pack("<Q", count))
    return count


def read_shard(path: str, cfg: ModelConfig) -> Iterator[TrainingSample]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != SHARD_MAGIC:
            raise ShardError(f"bad shard magic {magic!r}, expected {SHARD_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != SHARD_VERSION:
            raise ShardError(f"unsupported shard version {version}, expected {SHARD_VERSION}")
        fp = _read_exact(fh, 16).decode("ascii")
        want = config_fingerprint(cfg)
        if fp != want:
            raise ShardError(f"config fingerprint mismatch: shard {fp}, config {want}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        for _ in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(fh, 4))
            sid = _read_exact(fh, id_len).decode("utf-8")
            z0 = _read_tensor(fh)
            c_text = _read_tensor(fh)
            p_gt = _read_tensor(fh)
            (p_len,) = struct.unpack("<I", _read_exact(fh, 4))
            prompt = _read_exact(fh, p_len).decode("utf-8")
            yield TrainingSample(z0=z0, c_text=c_text, p_gt=p_gt, prompt=prompt, sample_id=sid)
