"""In-memory trial types and the canonical on-disk trial layout.

A trial directory looks like::

    meta.json            fabric id/name/properties, session tag, sample count
    frames/000000.png    one lossless frame per time step
    audio_internal.wav   mono, 48 kHz, 16-bit PCM
    audio_external.wav   mono, 48 kHz, 16-bit PCM
    proprio.csv          header + 18 joint columns + timestamp
    align.csv            frame, end_internal, end_external

Audio is stored as the full continuous stream; the per-frame windows are
``stream[end - 2048:end]`` with ``end`` taken from ``align.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import wave
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import cv2
import numpy as np

from .errors import CorruptAudio, InvalidTrial, LengthMismatch, MissingStream, OverlapError

log = logging.getLogger(__name__)

SAMPLE_RATE = 48_000
WINDOW = 2048
FRAME_PERIOD = 0.020
NATIVE_SHAPE = (308, 410)
DOWNSAMPLED_SHAPE = (60, 80)
N_JOINTS = 6
PROPRIO_DIM = 3 * N_JOINTS
SEQUENCE_LENGTH = 200
FORMAT_VERSION = 1

PROPRIO_COLUMNS = tuple(
    f"j{j}_{q}" for j in range(N_JOINTS) for q in ("angle", "velocity", "current")
)
PROPERTY_LEVELS = {"stretchiness": 2, "roughness": 5, "thickness": 3}
NO_FABRIC = 0
HOLDOUT_FABRICS = (1, 10, 21, 22, 23)


@dataclass(frozen=True)
class PropertyLabels:
    stretchiness: int
    roughness: int
    thickness: int

    def __post_init__(self):
        for name, levels in PROPERTY_LEVELS.items():
            value = getattr(self, name)
            if not 0 <= value < levels:
                raise ValueError(f"{name}={value} outside [0, {levels})")

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in PROPERTY_LEVELS}


@dataclass(frozen=True)
class FabricClass:
    id: int
    name: str = ""
    properties: PropertyLabels | None = None

    def __post_init__(self):
        if not 0 <= self.id <= 23:
            raise ValueError(f"fabric id {self.id} outside [0, 23]")

    @property
    def is_holdout(self) -> bool:
        return self.id >= 21

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "properties": None if self.properties is None else self.properties.as_dict(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FabricClass":
        props = d.get("properties")
        return cls(int(d["id"]), d.get("name", ""), None if props is None else PropertyLabels(**props))


@dataclass(frozen=True, eq=False)
class TimeSample:
    image: np.ndarray
    audio_internal: np.ndarray
    audio_external: np.ndarray
    proprio: np.ndarray
    timestamp: float
    label: FabricClass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trial:
    """One continuous recording of a single fabric.

    Arrays are stored column-wise; ``samples`` materialises per-step
    :class:`TimeSample` views on demand.
    """

    fabric: FabricClass
    session_tag: str
    frames: np.ndarray          # (T, H, W) or (T, H, W, 3), uint8
    audio_internal: np.ndarray  # full int16 stream
    audio_external: np.ndarray
    window_ends: np.ndarray     # (T, 2) end offsets into the two streams
    proprio: np.ndarray         # (T, 18) float64
    timestamps: np.ndarray      # (T,) float64 seconds since trial start
    trial_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", _freeze(np.asarray(self.frames, dtype=np.uint8)))
        object.__setattr__(self, "audio_internal", _freeze(np.asarray(self.audio_internal, dtype=np.int16)))
        object.__setattr__(self, "audio_external", _freeze(np.asarray(self.audio_external, dtype=np.int16)))
        object.__setattr__(self, "window_ends", _freeze(np.asarray(self.window_ends, dtype=np.int64)))
        object.__setattr__(self, "proprio", _freeze(np.asarray(self.proprio, dtype=np.float64)))
        object.__setattr__(self, "timestamps", _freeze(np.asarray(self.timestamps, dtype=np.float64)))
        validate_trial(self)

    def __len__(self) -> int:
        return len(self.timestamps)

    def audio_windows(self, stream: str) -> np.ndarray:
        """Return the (T, 2048) aligned windows of ``"internal"`` or ``"external"``."""
        col = {"internal": 0, "external": 1}[stream]
        audio = self.audio_internal if col == 0 else self.audio_external
        view = np.lib.stride_tricks.sliding_window_view(audio, WINDOW)
        return view[self.window_ends[:, col] - WINDOW]

    def sample(self, i: int) -> TimeSample:
        ei, ee = self.window_ends[i]
        return TimeSample(
            image=self.frames[i],
            audio_internal=self.audio_internal[ei - WINDOW:ei],
            audio_external=self.audio_external[ee - WINDOW:ee],
            proprio=self.proprio[i],
            timestamp=float(self.timestamps[i]),
            label=self.fabric,
        )

    @property
    def samples(self) -> list[TimeSample]:
        return [self.sample(i) for i in range(len(self))]


def validate_trial(trial: Trial) -> None:
    """Check per-sample invariants; raise a :class:`TrialError` subclass."""
    t = len(trial.timestamps)
    if trial.frames.shape[0] != t:
        raise LengthMismatch(f"{trial.frames.shape[0]} frames vs {t} timestamps")
    if trial.frames.ndim not in (3, 4) or trial.frames.shape[1:3] not in (NATIVE_SHAPE, DOWNSAMPLED_SHAPE):
        raise LengthMismatch(f"unexpected frame shape {trial.frames.shape[1:]}")
    if trial.frames.ndim == 4 and trial.frames.shape[3] != 3:
        raise LengthMismatch("colour frames must have 3 channels")
    if trial.proprio.shape != (t, PROPRIO_DIM):
        raise LengthMismatch(f"proprio shape {trial.proprio.shape}, expected ({t}, {PROPRIO_DIM})")
    if trial.window_ends.shape != (t, 2):
        raise LengthMismatch(f"alignment shape {trial.window_ends.shape}, expected ({t}, 2)")
    for col, audio in enumerate((trial.audio_internal, trial.audio_external)):
        ends = trial.window_ends[:, col]
        if t and (ends.min() < WINDOW or ends.max() > len(audio)):
            raise LengthMismatch("audio window falls outside the recorded stream")
    if t > 1:
        dt = np.diff(trial.timestamps)
        if np.any(dt <= 0):
            raise InvalidTrial("timestamps are not strictly increasing")
        med = float(np.median(dt))
        if not 0.5 * FRAME_PERIOD <= med <= 1.5 * FRAME_PERIOD:
            raise InvalidTrial(f"median frame spacing {med * 1e3:.1f} ms, expected ~20 ms")


@dataclass(frozen=True)
class SequenceBatch:
    """A contiguous, fixed-length slice ``[start, stop)`` of one trial."""

    trial: Trial
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def samples(self) -> list[TimeSample]:
        return [self.trial.sample(i) for i in range(self.start, self.stop)]


def partition_sequences(trial: Trial, n: int = SEQUENCE_LENGTH) -> list[SequenceBatch]:
    """Cut ``trial`` into ``len // n`` non-overlapping sequences; the remainder is dropped."""
    if n < 1:
        raise ValueError("sequence length must be positive")
    return [SequenceBatch(trial, k * n, (k + 1) * n) for k in range(len(trial) // n)]


# -- splits -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitPolicy:
    train_tags: frozenset[str]
    test_tags: frozenset[str]

    def __init__(self, train_tags: Iterable[str], test_tags: Iterable[str]):
        object.__setattr__(self, "train_tags", frozenset(train_tags))
        object.__setattr__(self, "test_tags", frozenset(test_tags))


class Split(NamedTuple):
    train: list
    test: list

    def sequence_counts(self, n: int = SEQUENCE_LENGTH) -> dict[str, int]:
        return {
            "train": sum(len(t) // n for t in self.train),
            "test": sum(len(t) // n for t in self.test),
            "classes": len({t.fabric.id for t in (*self.train, *self.test)}),
        }


def split_by_trial(trials: Sequence[Trial], policy: SplitPolicy) -> Split:
    """Assign whole trials to train/test by session tag.

    Trials whose tag is in neither set are left out.
    """
    overlap = policy.train_tags & policy.test_tags
    if overlap:
        raise OverlapError(f"session tags in both splits: {sorted(overlap)}")
    split = Split(
        [t for t in trials if t.session_tag in policy.train_tags],
        [t for t in trials if t.session_tag in policy.test_tags],
    )
    log.info("split sequence counts: %s", split.sequence_counts())
    return split


def validation_split(trials: Sequence[Trial], per_class: int = 2) -> Split:
    """Hold out the last ``per_class`` trials of every fabric (in input order)."""
    by_class: dict[int, list] = defaultdict(list)
    for t in trials:
        by_class[t.fabric.id].append(t)
    held = {id(t) for group in by_class.values() for t in group[len(group) - per_class:]} if per_class else set()
    return Split([t for t in trials if id(t) not in held], [t for t in trials if id(t) in held])


# -- canonical layout -------------------------------------------------------


def _write_wav(path: Path, samples: np.ndarray) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def _read_wav(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingStream(f"missing {path.name}")
    try:
        with wave.open(str(path), "rb") as w:
            if w.getframerate() != SAMPLE_RATE:
                raise CorruptAudio(f"{path.name}: sample rate {w.getframerate()}, expected {SAMPLE_RATE}")
            if w.getsampwidth() != 2:
                raise CorruptAudio(f"{path.name}: {8 * w.getsampwidth()}-bit samples, expected 16-bit")
            if w.getnchannels() != 1:
                raise CorruptAudio(f"{path.name}: {w.getnchannels()} channels, expected mono")
            data = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise CorruptAudio(f"{path.name}: {exc}") from exc
    return np.frombuffer(data, dtype="<i2").astype(np.int16)


def write_trial(trial: Trial, path: str | Path) -> Path:
    """Write ``trial`` in the canonical layout; returns the directory."""
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "trial_id": trial.trial_id,
        "fabric": trial.fabric.to_json(),
        "session_tag": trial.session_tag,
        "sample_count": len(trial),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for i, frame in enumerate(trial.frames):
        img = frame if frame.ndim == 2 else cv2.cvtColor(frame, cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(root / "frames" / f"{i:06d}.png"), img):
            raise OSError(f"failed to write frame {i}")
    _write_wav(root / "audio_internal.wav", trial.audio_internal)
    _write_wav(root / "audio_external.wav", trial.audio_external)
    with open(root / "proprio.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([*PROPRIO_COLUMNS, "timestamp"])
        for row, ts in zip(trial.proprio, trial.timestamps):
            w.writerow([repr(float(x)) for x in row] + [repr(float(ts))])
    with open(root / "align.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "end_internal", "end_external"])
        for i, (ei, ee) in enumerate(trial.window_ends):
            w.writerow([i, int(ei), int(ee)])
    return root


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise MissingStream(f"missing {path.name}")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise LengthMismatch(f"{path.name} is empty")
    return rows[0], rows[1:]


def load_trial(path: str | Path) -> Trial:
    """Load and validate a trial directory in the canonical layout."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise MissingStream(f"{root}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    frame_dir = root / "frames"
    frame_files = sorted(frame_dir.glob("*.png")) if frame_dir.is_dir() else []
    if not frame_files:
        raise MissingStream(f"{root}: no frames")

    header, rows = _read_csv(root / "proprio.csv")
    if len(header) != PROPRIO_DIM + 1 or any(len(r) != PROPRIO_DIM + 1 for r in rows):
        raise LengthMismatch(f"proprio.csv must have {PROPRIO_DIM} joint columns plus timestamp")
    table = np.array(rows, dtype=np.float64).reshape(len(rows), PROPRIO_DIM + 1)
    ts_col = header.index("timestamp") if "timestamp" in header else PROPRIO_DIM
    proprio = np.delete(table, ts_col, axis=1)
    timestamps = table[:, ts_col]

    _, arows = _read_csv(root / "align.csv")
    align = np.array(arows, dtype=np.int64).reshape(len(arows), -1)
    if align.shape[1] != 3:
        raise LengthMismatch("align.csv must have 3 columns")
    if not np.array_equal(align[:, 0], np.arange(len(align))):
        raise LengthMismatch("align.csv frame indices are not 0..T-1")

    t = len(frame_files)
    if len(rows) != t or len(align) != t:
        raise LengthMismatch(f"{t} frames, {len(rows)} proprio rows, {len(align)} align rows")
    if "sample_count" in meta and meta["sample_count"] != t:
        raise LengthMismatch(f"meta sample_count {meta['sample_count']} != {t} frames")

    frames = []
    for p in frame_files:
        img = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise InvalidTrial(f"unreadable frame {p.name}")
        if img.ndim == 3:
            img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
        frames.append(img)

    return Trial(
        fabric=FabricClass.from_json(meta["fabric"]),
        session_tag=meta["session_tag"],
        frames=np.stack(frames),
        audio_internal=_read_wav(root / "audio_internal.wav"),
        audio_external=_read_wav(root / "audio_external.wav"),
        window_ends=align[:, 1:],
        proprio=proprio,
        timestamps=timestamps,
        trial_id=meta.get("trial_id", root.name),
    )


def find_trials(root: str | Path) -> list[Path]:
    """Trial directories (those containing ``meta.json``) below ``root``, sorted."""
    return sorted(p.parent for p in Path(root).rglob("meta.json"))


def read_meta(path: str | Path) -> dict:
    return json.loads((Path(path) / "meta.json").read_text())
