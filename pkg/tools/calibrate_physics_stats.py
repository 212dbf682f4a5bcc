"""Regenerate the frozen standardization constants in physvid.data.

Runs the raw (un-standardized) physics extractor over 256 toy clips spanning
all four kinds and prints per-feature mean/std. Sign-carrying features
(temporal diff, centroid shifts) keep mean 0 so static-clip zeros and
time-reversal antisymmetry survive standardization.
"""

import numpy as np

from physvid import data
from physvid.config import get_preset


def main() -> None:
    cfg, _, _ = get_preset("toy")
    data.PHYS_FEATURE_MEAN = np.zeros(data.N_RAW_FEATURES)
    data.PHYS_FEATURE_STD = np.ones(data.N_RAW_FEATURES)
    feats = []
    for seed in range(256):
        clip = data.synth_clip(seed, data.kind_for_seed(seed), cfg)
        feats.append(data.toy_physics_extract(clip.frames, cfg).numpy()[:, : data.N_RAW_FEATURES])
    feats = np.concatenate(feats, axis=0)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    mean[[1, 3, 4]] = 0.0  # keep sign features centered at 0
    std = np.maximum(std, 1e-6)
    print("PHYS_FEATURE_MEAN = np.array(", [round(float(v), 10) for v in mean], ")")
    print("PHYS_FEATURE_STD = np.array(", [round(float(v), 10) for v in std], ")")


if __name__ == "__main__":
    main()
