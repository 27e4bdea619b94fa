import csv
import json

import cv2
import numpy as np
import pytest

from fabrictouch import synth
from fabrictouch.dataset import PROPRIO_DIM, load_trial, _write_wav
from fabrictouch.errors import LengthMismatch, MissingStream
from fabrictouch.ingest import ingest, read_raw_trial

CLOCK0 = 0.5       # internal recording starts at this clock time
EXT_LEAD = 480     # external recording starts 10 ms earlier
SLOPES = np.linspace(-1.0, 1.0, PROPRIO_DIM)


def joint_values(t):
    return 0.25 + np.outer(t, SLOPES)


@pytest.fixture(scope="module")
def source():
    spec = synth.well_separated(3, seed=0)[2]
    return synth.generate_trial(spec, 30, 5, frame_shape=(60, 80), session_tag="day2", trial_id="raw-1")


def write_raw(trial, root):
    (root / "frames").mkdir(parents=True)
    # two frames too early for a full window, then the real ones, then one past the joint log
    clock = np.concatenate([[CLOCK0 + 0.01, CLOCK0 + 0.03], CLOCK0 + trial.timestamps,
                            [CLOCK0 + trial.timestamps[-1] + 0.5]])
    frames = np.concatenate([trial.frames[:2], trial.frames, trial.frames[-1:]])
    for i, f in enumerate(frames):
        cv2.imwrite(str(root / "frames" / f"{i:05d}.png"), f)
    with open(root / "frame_times.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"])
        w.writerows([[repr(float(t))] for t in clock])
    _write_wav(root / "audio_internal.wav", trial.audio_internal)
    _write_wav(root / "audio_external.wav", np.concatenate([np.zeros(EXT_LEAD, np.int16), trial.audio_external]))
    (root / "audio_start.json").write_text(json.dumps({"internal": CLOCK0, "external": CLOCK0 - EXT_LEAD / 48000}))
    jt = np.arange(CLOCK0, CLOCK0 + trial.timestamps[-1] + 0.02, 0.01)  # 100 Hz
    with open(root / "joints.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *(f"j{k}" for k in range(PROPRIO_DIM))])
        for t, row in zip(jt, joint_values(jt)):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    (root / "meta.json").write_text(json.dumps({"trial_id": trial.trial_id, "session_tag": trial.session_tag,
                                                "fabric": trial.fabric.to_json()}))
    return root


def test_windows_and_joints_are_aligned(source, tmp_path):
    trial = read_raw_trial(write_raw(source, tmp_path / "raw"))
    assert len(trial) == len(source)  # the early frames and the late one are dropped
    assert np.array_equal(trial.frames, source.frames)
    assert np.array_equal(trial.audio_windows("internal"), source.audio_windows("internal"))
    assert np.array_equal(trial.audio_windows("external"), source.audio_windows("external"))
    assert np.array_equal(trial.window_ends[:, 1] - trial.window_ends[:, 0], np.full(len(trial), EXT_LEAD))
    np.testing.assert_allclose(trial.timestamps, source.timestamps, atol=1e-12)
    # linear joint signals are reproduced exactly by linear interpolation
    np.testing.assert_allclose(trial.proprio, joint_values(CLOCK0 + source.timestamps), atol=1e-12)
    assert trial.fabric == source.fabric and trial.session_tag == "day2"


def test_ingest_writes_canonical_layout(source, tmp_path):
    write_raw(source, tmp_path / "raw" / "session" / "a")
    written = ingest(tmp_path / "raw", tmp_path / "data")
    assert [p.name for p in written] == ["raw-1"]
    loaded = load_trial(written[0])
    assert np.array_equal(loaded.audio_windows("external"), source.audio_windows("external"))
    assert np.array_equal(loaded.frames, source.frames)


def test_missing_inputs(source, tmp_path):
    with pytest.raises(MissingStream):
        ingest(tmp_path / "empty", tmp_path / "out")
    root = write_raw(source, tmp_path / "raw")
    (root / "audio_external.wav").unlink()
    with pytest.raises(MissingStream):
        read_raw_trial(root)


def test_frame_time_count_mismatch(source, tmp_path):
    root = write_raw(source, tmp_path / "raw")
    lines = (root / "frame_times.csv").read_text().splitlines()
    (root / "frame_times.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(LengthMismatch):
        read_raw_trial(root)
