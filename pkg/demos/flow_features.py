"""From two camera frames to the pooled flow feature.

Renders a synthetic fabric being dragged to the right, runs dense
Farneback flow with both backends, and follows one frame pair through
the magnitude filter and the 3x3 patch pool.

    python3 demos/flow_features.py
"""

import numpy as np

from fabrictouch import synth
from fabrictouch.optflow import KEEP_FRACTION, farneback_flow, patch_pool, percentile_filter


def main():
    base = synth.make_fabric_set(1, 0.0, seed=0)[0]
    spec = synth.SynthFabricSpec(
        base.fabric, base.audio,
        synth.FlowPattern(direction_deg=0.0, speed=3.0, grain=6.0, contrast=60.0, blob_gain=0.0),
        base.proprio)
    trial = synth.generate_trial(spec, 20, 1, frame_noise=0.5)

    # pick the pair with the fastest drag
    speeds = [np.abs(farneback_flow(a, b, backend="opencv")[0]).mean() for a, b in zip(trial.frames, trial.frames[1:])]
    t = int(np.argmax(speeds))
    prev, nxt = trial.frames[t], trial.frames[t + 1]
    for backend in ("numpy", "opencv"):
        flow = farneback_flow(prev, nxt, backend=backend)
        dx, dy = flow[:, 40:-40, 40:-40].mean(axis=(1, 2))
        print(f"{backend:>6}: mean interior flow ({dx:+.2f}, {dy:+.2f}) px")

    flow = farneback_flow(prev, nxt, backend="opencv")
    kept = percentile_filter(flow, KEEP_FRACTION)
    n_kept = int((np.hypot(*kept) > 0).sum())
    pooled = patch_pool(kept)
    print(f"filter keeps {n_kept} of {flow[0].size} vectors; pooled feature {pooled.shape}, "
          f"{int((np.abs(pooled).sum(axis=0) > 0).sum())} non-zero cells")


if __name__ == "__main__":
    main()
