import numpy as np
import pytest
import torch

from fabrictouch import synth
from fabrictouch.dataset import FabricClass, PropertyLabels
from fabrictouch.dsp import band_power, welch_psd
from fabrictouch.errors import MissingHead
from fabrictouch.evaluate import (
    evaluate_confusion, evaluate_properties, export_latents, noisy_trial, paired_pvalues, trial_latent,
)
from fabrictouch.neural import ModelConfig
from fabrictouch.train import SeedResult, SequenceSet, TrainResult, predict
from helpers import build, toy_features


def force_constant(model, head, cls):
    """Make ``head`` predict ``cls`` for every input."""
    out = model.heads[head]
    with torch.no_grad():
        out.weight.zero_()
        out.bias.zero_()
        out.bias[cls] = 1.0


def test_confusion_constant_prediction_fills_one_column():
    feats = toy_features(3, 2, 40)
    data = SequenceSet(feats, 20)
    model = build(ModelConfig(fabric_classes=3, seq_len=20), dtype=torch.float32)
    force_constant(model, "fabric", 2)
    cm = evaluate_confusion(model, data)
    assert cm.shape == (3, 3)
    assert np.array_equal(cm[:, 2], np.bincount(data.labels("fabric"), minlength=3))
    assert cm[:, :2].sum() == 0


def test_confusion_matches_predictions():
    feats = toy_features(3, 2, 40)
    data = SequenceSet(feats, 20)
    model = build(ModelConfig(fabric_classes=3, seq_len=20), seed=3, dtype=torch.float32)
    preds = predict(model, data)["fabric"]
    cm = evaluate_confusion(model, data)
    for t, p in zip(data.labels("fabric"), preds):
        cm[t, p] -= 1
    assert not cm.any()


def property_features(n=30):
    # labels cycle so every level of every property is equally represented
    feats = toy_features(1, n, 20)
    for i, f in enumerate(feats):
        f.fabric = FabricClass(0, "", PropertyLabels(i % 2, i % 5, i % 3))
    return feats


def test_constant_property_model_scores_chance():
    cfg = ModelConfig(fabric_classes=0, properties=True, seq_len=20)
    model = build(cfg, dtype=torch.float32)
    for head in ("stretchiness", "roughness", "thickness"):
        force_constant(model, head, 1)
    res = evaluate_properties(model, property_features(), property_features(), seq_len=20)
    for name, levels in (("stretchiness", 2), ("roughness", 5), ("thickness", 3)):
        assert res[name]["chance"] == pytest.approx(1 / levels)
        assert res[name]["training"] == pytest.approx(1 / levels)
        assert res[name]["holdout"] == pytest.approx(1 / levels)


def test_property_accuracy_matches_predictions():
    cfg = ModelConfig(fabric_classes=0, properties=True, seq_len=20)
    model = build(cfg, seed=5, dtype=torch.float32)
    feats = property_features()
    res = evaluate_properties(model, feats, [], seq_len=20)
    data = SequenceSet(feats, 20)
    preds = predict(model, data)
    for name in ("stretchiness", "roughness", "thickness"):
        assert res[name]["training"] == np.mean(preds[name] == data.labels(name))
        assert np.isnan(res[name]["holdout"])


def test_property_eval_requires_heads():
    model = build(ModelConfig(fabric_classes=3, seq_len=20), dtype=torch.float32)
    with pytest.raises(MissingHead):
        evaluate_properties(model, toy_features(), [])


def test_latent_export(tmp_path):
    cfg = ModelConfig(fabric_classes=3, use_proprio=True, seq_len=20)
    model = build(cfg, dtype=torch.float32)
    feats = toy_features(3, 1, 45)
    rows = export_latents(model, feats, tmp_path / "z.csv", seq_len=20)
    assert len(rows) == 3 and all(len(r) == 5 + cfg.feature_dim for r in rows)
    again = export_latents(model, feats, tmp_path / "z2.csv", seq_len=20)
    assert (tmp_path / "z.csv").read_bytes() == (tmp_path / "z2.csv").read_bytes()
    assert rows == again
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("trial_id,fabric_id,stretchiness")


def test_trial_latent_is_mean_over_full_sequences():
    cfg = ModelConfig(fabric_classes=3, seq_len=20)
    model = build(cfg, dtype=torch.float64)
    feats = toy_features(1, 1, 45)[0]
    z = trial_latent(model, feats, 20)
    data = SequenceSet([feats], 20)
    assert len(data) == 2  # the 5-step tail is dropped
    x, _ = data.batch([0, 1], cfg, dtype=torch.float64)
    with torch.no_grad():
        expected = model.encode(x).double().mean(dim=(0, 1)).numpy()
    np.testing.assert_allclose(z, expected, rtol=1e-12)


def test_noisy_trial_raises_external_band_by_20db(specs):
    clean = synth.generate_trial(specs[0], 60, 3, frame_shape=(60, 80))
    noisy = noisy_trial(clean, seed=11)

    def band(trial, stream):
        return band_power(welch_psd(trial.audio_windows(stream)), 100, 2000).mean()

    gain_db = 10 * np.log10(band(noisy, "external") / band(clean, "external"))
    # noise sits 20 dB above the clean level, so the sum is 20 dB + 10 log10(1 + 1/100)
    assert abs(gain_db - 10 * np.log10(101)) < 0.5
    assert band(noisy, "internal") > band(clean, "internal")
    assert np.array_equal(noisy.frames, clean.frames)
    assert np.array_equal(noisy_trial(clean, seed=11).audio_external, noisy.audio_external)


def test_paired_pvalues():
    def result(accs):
        return TrainResult(ModelConfig(fabric_classes=3), [SeedResult(i, {"fabric": a}, {}, [], None)
                                                           for i, a in enumerate(accs)])

    rows = [result([0.5, 0.6, 0.55, 0.52, 0.58]), result([0.9, 0.95, 0.92, 0.91, 0.97]),
            result([0.9, 0.95, 0.92, 0.91, 0.97])]
    p = paired_pvalues(rows)
    assert p[0] is None
    assert p[1].pvalue == pytest.approx(2 / 32)
    assert p[2] is None  # every difference is zero
