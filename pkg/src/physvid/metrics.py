"""Video quality metrics: dense-flow temporal stability, representation-space
motion consistency, and temporal perceptual distance.

The flow estimator, frame embedder, and perceptual feature extractor are all
pluggable; the built-ins are deterministic hand-rolled references (coarse-to-
fine gradient flow, multi-scale histogram embedder, blurred-gradient feature
stack), so no learned weights are required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from scipy import ndimage

# built-in flow estimator knobs: 2 pyramid levels, 10 iterations, fixed smoothness
FLOW_PYRAMID_LEVELS = 2
FLOW_ITERATIONS = 10
FLOW_SMOOTHNESS = 0.5  # tuned for frames standardized to unit variance


@dataclass
class FlowField:
    u: np.ndarray  # px/frame, positive = rightward
    v: np.ndarray  # px/frame, positive = downward

    @property
    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u**2 + self.v**2)


@dataclass
class MetricReport:
    name: str
    flow_mean_magnitude: float | None = None
    flow_temporal_std: float | None = None
    embed_consistency: float | None = None
    tlpips_mean: float | None = None
    flow_series: list[float] = field(default_factory=list)
    embed_series: list[float] = field(default_factory=list)
    tlpips_series: list[float] = field(default_factory=list)
    error: str | None = None


def _to_gray(frame) -> np.ndarray:
    """Accepts [3, H, W] or [H, W], uint8 or float; returns float64 [H, W] in ~[0, 1]."""
    if isinstance(frame, torch.Tensor):
        frame = frame.detach().numpy()
    arr = np.asarray(frame, dtype=np.float64)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    if arr.max() > 1.5:  # uint8 range
        arr = arr / 255.0
    return arr


def _video_frames(video) -> list[np.ndarray]:
    """[3, F, H, W] tensor/array -> list of grayscale frames."""
    if isinstance(video, torch.Tensor):
        video = video.detach().numpy()
    video = np.asarray(video)
    if video.ndim != 4:
        raise ValueError(f"expected [C, F, H, W] video, got shape {video.shape}")
    return [_to_gray(video[:, t]) for t in range(video.shape[1])]


# --- dense flow -----------------------------------------------------------------


def _standardize(img: np.ndarray) -> np.ndarray:
    std = img.std()
    return (img - img.mean()) / (std if std > 1e-12 else 1.0)


def _hs_level(a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H, W = a.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    avg_kernel = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0
    alpha2 = FLOW_SMOOTHNESS**2
    for _ in range(FLOW_ITERATIONS):
        bw = ndimage.map_coordinates(b, [ys + v, xs + u], order=1, mode="nearest")
        Iy, Ix = np.gradient((a + bw) / 2.0)
        It = bw - a
        ua = ndimage.convolve(u, avg_kernel, mode="nearest")
        va = ndimage.convolve(v, avg_kernel, mode="nearest")
        num = Ix * ua + Iy * va + It - (Ix * u + Iy * v)
        den = alpha2 + Ix**2 + Iy**2
        u = ua - Ix * num / den
        v = va - Iy * num / den
    return u, v


def _downsample(img: np.ndarray) -> np.ndarray:
    H, W = img.shape
    return img[: H - H % 2, : W - W % 2].reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))


def estimate_flow(
    frame_a,
    frame_b,
    estimator: str | Callable = "gradient-iterative",
) -> FlowField:
    """Dense flow from frame_a to frame_b; plugin estimators return a FlowField."""
    a, b = _to_gray(frame_a), _to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if callable(estimator):
        return estimator(a, b)
    if estimator != "gradient-iterative":
        raise ValueError(f"unknown flow estimator {estimator!r}")
    # per-frame standardization: pure brightness/contrast changes carry no motion
    a = _standardize(a)
    b = _standardize(b)
    pyramid = [(a, b)]
    for _ in range(FLOW_PYRAMID_LEVELS - 1):
        pa, pb = pyramid[-1]
        pyramid.append((_downsample(pa), _downsample(pb)))
    u = np.zeros_like(pyramid[-1][0])
    v = np.zeros_like(pyramid[-1][0])
    for level, (pa, pb) in enumerate(reversed(pyramid)):
        if level > 0:
            u = np.repeat(np.repeat(u * 2.0, 2, axis=0), 2, axis=1)[: pa.shape[0], : pa.shape[1]]
            v = np.repeat(np.repeat(v * 2.0, 2, axis=0), 2, axis=1)[: pa.shape[0], : pa.shape[1]]
            if u.shape != pa.shape:
                uu = np.zeros_like(pa)
                vv = np.zeros_like(pa)
                uu[: u.shape[0], : u.shape[1]] = u
                vv[: v.shape[0], : v.shape[1]] = v
                u, v = uu, vv
        u, v = _hs_level(pa, pb, u, v)
    return FlowField(u=u, v=v)


def flow_consistency(video, estimator="gradient-iterative") -> tuple[float, float, list[float]]:
    """Per-pair spatial-mean flow magnitude; returns (mean, temporal std, series)."""
    frames = _video_frames(video)
    if len(frames) < 3:
        raise ValueError(f"flow_consistency needs >= 3 frames, got {len(frames)}")
    series = []
    for a, b in zip(frames[:-1], frames[1:]):
        flow = estimate_flow(a, b, estimator)
        series.append(float(flow.magnitude.mean()))
    arr = np.array(series)
    return float(arr.mean()), float(arr.std()), series


# --- embedding consistency ------------------------------------------------------


def histogram_embedder(frame) -> np.ndarray:
    """Built-in toy embedder: multi-scale intensity + gradient-magnitude histograms.

    Scales come from gaussian blurs (shift-equivariant), so global histograms are
    nearly invariant to translation but sensitive to content change.
    """
    g = _to_gray(frame)
    feats = []
    for sigma in (0.0, 1.0, 2.0):
        img = g if sigma == 0.0 else ndimage.gaussian_filter(g, sigma=sigma, mode="nearest")
        hist, _ = np.histogram(img, bins=16, range=(0.0, 1.0))
        gy, gx = np.gradient(img)
        ghist, _ = np.histogram(np.sqrt(gx**2 + gy**2), bins=16, range=(0.0, 0.5))
        feats.append(hist.astype(np.float64) / img.size)
        feats.append(ghist.astype(np.float64) / img.size)
    vec = np.concatenate(feats)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("zero-vector embedding")
    return vec / norm


def embed_consistency(video, embedder: Callable = histogram_embedder) -> tuple[float, list[float]]:
    """Mean cosine similarity between embeddings of consecutive frames."""
    if isinstance(video, torch.Tensor):
        video = video.detach().numpy()
    video = np.asarray(video)
    F = video.shape[1]
    if F < 2:
        raise ValueError(f"embed_consistency needs >= 2 frames, got {F}")
    embs = []
    for t in range(F):
        e = np.asarray(embedder(video[:, t]), dtype=np.float64)
        n = np.linalg.norm(e)
        if n == 0:
            raise ValueError(f"zero-vector embedding at frame {t}")
        embs.append(e / n)
    series = [float(np.dot(a, b)) for a, b in zip(embs[:-1], embs[1:])]
    mean = float(np.clip(np.mean(series), -1.0, 1.0))
    return mean, series


# --- temporal perceptual distance ----------------------------------------------


def gradient_feature_stack(frame) -> list[np.ndarray]:
    """Built-in extractor: gradient maps of gaussian-blurred frames at 3 scales."""
    g = _to_gray(frame)
    feats = []
    for sigma in (0.5, 1.0, 2.0):
        blurred = ndimage.gaussian_filter(g, sigma=sigma, mode="nearest")
        gy, gx = np.gradient(blurred)
        feats.append(gx)
        feats.append(gy)
    return feats


def t_lpips(video, feature_extractor: Callable = gradient_feature_stack) -> tuple[float, list[float]]:
    """Mean over consecutive pairs of the RMS distance between feature stacks."""
    if isinstance(video, torch.Tensor):
        video = video.detach().numpy()
    video = np.asarray(video)
    F = video.shape[1]
    if F < 2:
        raise ValueError(f"t_lpips needs >= 2 frames, got {F}")
    stacks = [feature_extractor(video[:, t]) for t in range(F)]
    series = []
    for a, b in zip(stacks[:-1], stacks[1:]):
        sq = sum(float(((fa - fb) ** 2).mean()) for fa, fb in zip(a, b)) / len(a)
        series.append(sq**0.5)
    return float(np.mean(series)), series


# --- corpus evaluation ----------------------------------------------------------

ALL_METRICS = ("flow", "embed", "tlpips")


def eval_video(name: str, video, metrics=ALL_METRICS) -> MetricReport:
    report = MetricReport(name=name)
    if "flow" in metrics:
        report.flow_mean_magnitude, report.flow_temporal_std, report.flow_series = flow_consistency(video)
    if "embed" in metrics:
        report.embed_consistency, report.embed_series = embed_consistency(video)
    if "tlpips" in metrics:
        report.tlpips_mean, report.tlpips_series = t_lpips(video)
    return report


def eval_corpus(videos: list[tuple[str, object]], metrics=ALL_METRICS) -> list[MetricReport]:
    """Per-video reports; failures are recorded in the row, not raised."""
    reports = []
    for name, video in videos:
        try:
            reports.append(eval_video(name, video, metrics))
        except Exception as exc:
            reports.append(MetricReport(name=name, error=str(exc)))
    return reports


def summarize(reports: list[MetricReport]) -> dict:
    """Corpus mean +/- std per metric over rows that produced a value."""
    out: dict = {"count": len(reports), "failures": sum(1 for r in reports if r.error)}
    for key in ("flow_mean_magnitude", "flow_temporal_std", "embed_consistency", "tlpips_mean"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if vals:
            out[f"{key}_mean"] = float(np.mean(vals))
            out[f"{key}_std"] = float(np.std(vals))
    return out
