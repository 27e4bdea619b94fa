"""Post-hoc evaluation: property heads, noisy-audio protocol and latent export."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import PROPERTY_LEVELS, SEQUENCE_LENGTH, Trial
from .dsp import calibrate_noise_gain
from .errors import MissingHead
from .features import TrialFeatures, with_noise
from .neural.model import FabricNet
from .stats import WilcoxonResult, confusion_matrix, wilcoxon_signed_rank
from .synth import cafe_noise
from .train import SequenceSet, TrainResult, predict

CHANCE = {name: 1.0 / k for name, k in PROPERTY_LEVELS.items()}


def evaluate_confusion(model: FabricNet, data: SequenceSet, head: str = "fabric") -> np.ndarray:
    preds = predict(model, data)[head]
    return confusion_matrix(preds, data.labels(head), model.cfg.head_spec[head])


def evaluate_properties(model: FabricNet, training_fabrics: Sequence[TrialFeatures],
                        holdout: Sequence[TrialFeatures], seq_len: int = SEQUENCE_LENGTH) -> dict[str, dict[str, float]]:
    """Per-property accuracy on test trials of training fabrics and on holdout fabrics."""
    missing = [h for h in PROPERTY_LEVELS if h not in model.heads]
    if missing:
        raise MissingHead(f"model has no property heads: {missing}")
    out = {name: {"chance": CHANCE[name]} for name in PROPERTY_LEVELS}
    for group, trials in (("training", training_fabrics), ("holdout", holdout)):
        data = SequenceSet(trials, seq_len)
        preds = predict(model, data) if len(data) else {}
        for name in PROPERTY_LEVELS:
            out[name][group] = float(np.mean(preds[name] == data.labels(name))) if len(data) else float("nan")
    return out


# -- noise robustness -------------------------------------------------------


def noisy_trial(trial: Trial, seed: int, increase_db: float = 20.0, internal_attenuation: float = 0.3) -> Trial:
    """Mix cafe-like noise into a clean trial.

    The external microphone gets noise ``increase_db`` above its own clean
    level in 0.1-2 kHz; the internal microphone, shielded by the finger
    shell, gets the same noise scaled by ``internal_attenuation``.
    """
    rng = np.random.default_rng(seed)
    noise = cafe_noise(len(trial.audio_external), rng) * 1000.0
    g = calibrate_noise_gain(trial.audio_external, noise, increase_db)
    return with_noise(trial, noise, noise, g * internal_attenuation, g)


def paired_pvalues(results: Sequence[TrainResult], head: str = "fabric") -> list[WilcoxonResult | None]:
    """Wilcoxon test of each row's per-seed accuracies against the preceding row."""
    out: list[WilcoxonResult | None] = [None]
    for prev, cur in zip(results, results[1:]):
        try:
            out.append(wilcoxon_signed_rank(cur.accuracies(head), prev.accuracies(head)))
        except (ValueError, ArithmeticError):
            out.append(None)
    return out


# -- latent export ----------------------------------------------------------

LATENT_HEADER = ("trial_id", "fabric_id", "stretchiness", "roughness", "thickness")


@torch.no_grad()
def trial_latent(model: FabricNet, feats: TrialFeatures, seq_len: int = SEQUENCE_LENGTH) -> np.ndarray:
    """Mean concatenated encoder output over every step of one trial."""
    model.eval()
    data = SequenceSet([feats], seq_len)
    if not len(data):
        data = SequenceSet([feats], len(feats))
    dtype = next(model.parameters()).dtype
    total = np.zeros(model.cfg.feature_dim)
    count = 0
    for i in range(len(data)):
        x, _ = data.batch([i], model.cfg, dtype=dtype)
        z = model.encode(x)[0].double().numpy()
        total += z.sum(axis=0)
        count += len(z)
    return total / count


def export_latents(model: FabricNet, trials: Sequence[TrialFeatures], path: str | Path | None = None,
                   seq_len: int = SEQUENCE_LENGTH) -> list[list]:
    """One row per trial: id, fabric, property labels, mean latent vector. Optionally written as CSV."""
    rows = []
    for f in trials:
        props = f.fabric.properties.as_dict() if f.fabric.properties else {}
        z = trial_latent(model, f, seq_len)
        rows.append([f.trial_id, f.fabric.id, *(props.get(k, "") for k in PROPERTY_LEVELS), *z.tolist()])
    if path is not None:
        dim = model.cfg.feature_dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*LATENT_HEADER, *(f"z{i}" for i in range(dim))])
            for r in rows:
                w.writerow([*r[:5], *(repr(float(v)) for v in r[5:])])
    return rows
