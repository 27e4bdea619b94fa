"""Walk through the full pipeline on a small synthetic dataset.

Generates well-separated fabric classes, extracts per-step features,
trains an audio-only attention model and prints its confusion matrix.
Runs in about a minute on one CPU core.

    python3 demos/synthetic_pipeline.py
"""

import numpy as np
import torch

from fabrictouch import synth
from fabrictouch.evaluate import evaluate_confusion
from fabrictouch.features import ExtractionParams, extract_features
from fabrictouch.neural import ModelConfig
from fabrictouch.train import SequenceSet, Splits, TrainConfig, train


def main():
    torch.set_num_threads(1)
    specs = synth.well_separated(4, seed=0)
    trials = list(synth.generate_dataset(specs, 200, train_trials=6, test_trials=2, seed=0, frame_shape=(60, 80)))
    print(f"{len(trials)} trials, {len(trials[0])} steps each")

    # PSDs and joints only; frames are not needed for an audio model
    feats = [extract_features(t, ExtractionParams(image=False)) for t in trials]
    data = Splits([f for f in feats if f.session_tag != "day3"], [f for f in feats if f.session_tag == "day3"])

    cfg = ModelConfig(fabric_classes=4, seq_len=100)
    result = train(cfg, data, seeds=[0, 1], tc=TrainConfig(lr=1e-3, epochs=6, seq_len=100))
    mean, sd = result.mean_sd()
    print(f"audio-only test accuracy: {100 * mean:.1f} +- {100 * sd:.1f} %")

    model = result.runs[0].state.build()
    cm = evaluate_confusion(model, SequenceSet(data.test, 100))
    print("confusion (rows = true class):")
    print(np.array2string(cm))


if __name__ == "__main__":
    main()
