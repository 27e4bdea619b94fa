"""Shared builders for model tests and the acceptance suite."""

import numpy as np
import torch

from fabrictouch.dataset import DOWNSAMPLED_SHAPE, PROPRIO_DIM, FabricClass, PropertyLabels
from fabrictouch.features import TrialFeatures
from fabrictouch.neural import FabricNet, ModelConfig
from fabrictouch.optflow import FEATURE_SHAPE
from fabrictouch.train import bandwidth_grid, modality_grid, noise_grid, property_configs


def random_batch(cfg: ModelConfig, b: int = 2, n: int = 6, seed: int = 0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    shapes = {
        "image": (1, *DOWNSAMPLED_SHAPE), "flow": FEATURE_SHAPE,
        "audio_internal": (cfg.n_bins,), "audio_external": (cfg.n_bins,), "proprio": (PROPRIO_DIM,),
    }
    batch = {}
    for m in cfg.modalities:
        x = torch.rand(b, n, *shapes[m], generator=g, dtype=dtype)
        if m.startswith("audio"):
            x = x * 1e-6  # realistic PSD magnitude
        batch[m] = x
    labels = {h: torch.randint(0, k, (b,), generator=g) for h, k in cfg.head_spec.items()}
    return batch, labels


def build(cfg: ModelConfig, seed: int = 0, dtype=torch.float64) -> FabricNet:
    torch.manual_seed(seed)
    return FabricNet(cfg).to(dtype)


def all_grid_configs(seq_len: int = 6) -> list[ModelConfig]:
    """Every distinct model configuration the ablation harness can build."""
    base = ModelConfig(seq_len=seq_len)
    configs = modality_grid(base) + bandwidth_grid(base) + noise_grid(base) + property_configs(base)
    seen, out = set(), []
    for c in configs:
        key = repr(c)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def toy_features(n_classes=3, trials_per_class=2, steps=40, tag="day1", seed=0, image=False):
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_classes):
        for k in range(trials_per_class):
            base = np.zeros(512, dtype=np.float32)
            base[40 + 60 * c: 60 + 60 * c] = 1e-6
            psd = base + rng.uniform(0, 2e-7, size=(steps, 512)).astype(np.float32) * (1 + np.sin(np.arange(steps) / 3))[:, None]
            out.append(TrialFeatures(
                f"t{c}-{tag}-{k}", FabricClass(c, "", PropertyLabels(c % 2, c % 5, c % 3)), tag,
                psd, psd.copy(), rng.normal(size=(steps, 18)).astype(np.float32),
                image=rng.random((steps, 60, 80)).astype(np.float32) if image else None))
    return out
