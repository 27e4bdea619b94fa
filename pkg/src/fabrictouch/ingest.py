"""Convert raw recordings into the canonical trial layout.

The raw layout this adapter reads is one directory per trial::

    meta.json          {"trial_id", "session_tag", "fabric": {"id", "name", "properties"}}
    frames/*.png       camera frames, in lexicographic order
    frame_times.csv    header ``timestamp``; one row per frame, seconds on the recording clock
    audio_internal.wav mono 48 kHz 16-bit PCM, one continuous stream
    audio_external.wav same format
    audio_start.json   optional {"internal": t0, "external": t0}, clock time of sample 0 (default 0)
    joints.csv         header ``timestamp`` + 18 joint columns, any rate

Each frame gets the 2048-sample audio window that ends at its timestamp in
both streams. Joint readings are linearly interpolated to the frame
times. Frames without a full audio window, or outside the joint
recording, are dropped.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import cv2
import numpy as np

from .aligner import end_sample
from .dataset import PROPRIO_DIM, WINDOW, FabricClass, Trial, _read_wav, write_trial
from .errors import LengthMismatch, MissingStream

log = logging.getLogger(__name__)


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise MissingStream(f"missing {path.name}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise LengthMismatch(f"{path.name} has no data rows")
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


def read_raw_trial(raw: str | Path) -> Trial:
    raw = Path(raw)
    if not (raw / "meta.json").exists():
        raise MissingStream(f"{raw}: missing meta.json")
    meta = json.loads((raw / "meta.json").read_text())
    frame_paths = sorted((raw / "frames").glob("*.png"))
    if not frame_paths:
        raise MissingStream(f"{raw}: no frames")
    _, times = _read_table(raw / "frame_times.csv")
    times = times[:, 0]
    if len(times) != len(frame_paths):
        raise LengthMismatch(f"{len(frame_paths)} frames but {len(times)} frame times")
    internal = _read_wav(raw / "audio_internal.wav")
    external = _read_wav(raw / "audio_external.wav")
    starts = {"internal": 0.0, "external": 0.0}
    if (raw / "audio_start.json").exists():
        starts.update(json.loads((raw / "audio_start.json").read_text()))
    header, joints = _read_table(raw / "joints.csv")
    if joints.shape[1] != PROPRIO_DIM + 1:
        raise LengthMismatch(f"joints.csv has {joints.shape[1] - 1} joint columns, expected {PROPRIO_DIM}")
    jt_col = header.index("timestamp") if "timestamp" in header else 0
    jt = joints[:, jt_col]
    jv = np.delete(joints, jt_col, axis=1)

    # per-frame ends; frames before a full window are dropped below rather than rejected
    end_i = np.array([end_sample(t, t0=float(starts["internal"])) for t in times], dtype=np.int64)
    end_e = np.array([end_sample(t, t0=float(starts["external"])) for t in times], dtype=np.int64)
    keep = ((end_i >= WINDOW) & (end_e >= WINDOW) & (end_i <= len(internal)) & (end_e <= len(external))
            & (times >= jt[0]) & (times <= jt[-1]))
    if not keep.any():
        raise LengthMismatch(f"{raw}: no frame has a full audio window and joint coverage")
    dropped = int((~keep).sum())
    if dropped:
        log.info("%s: dropped %d frames without full audio/joint coverage", raw.name, dropped)
    idx = np.flatnonzero(keep)

    frames = []
    for i in idx:
        img = cv2.imread(str(frame_paths[i]), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise MissingStream(f"cannot read {frame_paths[i].name}")
        frames.append(img if img.ndim == 2 else cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    t = times[idx]
    proprio = np.stack([np.interp(t, jt, jv[:, k]) for k in range(PROPRIO_DIM)], axis=1)
    return Trial(
        fabric=FabricClass.from_json(meta["fabric"]), session_tag=str(meta["session_tag"]),
        frames=np.stack(frames), audio_internal=internal, audio_external=external,
        window_ends=np.stack([end_i[idx], end_e[idx]], axis=1), proprio=proprio,
        timestamps=t - float(starts["internal"]), trial_id=str(meta.get("trial_id", raw.name)),
    )


def ingest(raw_root: str | Path, out_root: str | Path) -> list[Path]:
    """Convert every raw trial directory below ``raw_root``; returns the written trial directories."""
    raw_root, out_root = Path(raw_root), Path(out_root)
    sources = sorted(p.parent for p in raw_root.rglob("frame_times.csv"))
    if not sources:
        raise MissingStream(f"no raw trials (frame_times.csv) below {raw_root}")
    written = []
    for src in sources:
        trial = read_raw_trial(src)
        written.append(write_trial(trial, out_root / trial.trial_id))
    return written
