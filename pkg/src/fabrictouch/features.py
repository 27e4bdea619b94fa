"""Per-trial feature extraction and the on-disk feature cache.

Cached arrays are flat little-endian float32 files with a JSON sidecar::

    psd_internal.f32   psd_internal.json   {"shape": [...], "bin_width": 46.875, "cutoff": 24000.0}
    flow.f32           flow.json           {"shape": [...], "keep_fraction": 0.001, ...}

Cache directories are named by a hash of the trial files and the extraction
parameters, so a changed input or setting never hits a stale entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .dataset import DOWNSAMPLED_SHAPE, FabricClass, Trial
from .dsp import BIN_WIDTH, SAMPLE_RATE, mix_noise, welch_psd
from .optflow import DEFAULT_PARAMS, KEEP_FRACTION, trial_flow_features

ARRAYS = ("psd_internal", "psd_external", "proprio", "image", "flow")


@dataclass(frozen=True)
class ExtractionParams:
    image: bool = True
    flow: bool = False
    flow_backend: str = "opencv"
    keep_fraction: float = KEEP_FRACTION

    def key(self) -> dict:
        d = asdict(self)
        d["farneback"] = asdict(DEFAULT_PARAMS)
        return d


@dataclass(eq=False)
class TrialFeatures:
    trial_id: str
    fabric: FabricClass
    session_tag: str
    psd_internal: np.ndarray        # (T, 512)
    psd_external: np.ndarray        # (T, 512)
    proprio: np.ndarray             # (T, 18)
    image: np.ndarray | None = None  # (T, 60, 80) in [0, 1]
    flow: np.ndarray | None = None   # (T, 2, 102, 137)
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.proprio)


def downsample_frames(frames: np.ndarray) -> np.ndarray:
    """Grayscale 60x80 float32 frames in [0, 1] (area interpolation)."""
    h, w = DOWNSAMPLED_SHAPE
    out = np.empty((len(frames), h, w), dtype=np.float32)
    for i, f in enumerate(frames):
        if f.ndim == 3:
            f = cv2.cvtColor(f, cv2.COLOR_RGB2GRAY)
        out[i] = cv2.resize(f, (w, h), interpolation=cv2.INTER_AREA) if f.shape != (h, w) else f
    return out / 255.0


def extract_features(trial: Trial, params: ExtractionParams = ExtractionParams()) -> TrialFeatures:
    return TrialFeatures(
        trial_id=trial.trial_id,
        fabric=trial.fabric,
        session_tag=trial.session_tag,
        psd_internal=welch_psd(trial.audio_windows("internal")).bins.astype(np.float32),
        psd_external=welch_psd(trial.audio_windows("external")).bins.astype(np.float32),
        proprio=trial.proprio.astype(np.float32),
        image=downsample_frames(trial.frames) if params.image else None,
        flow=trial_flow_features(trial.frames, params.keep_fraction, params.flow_backend) if params.flow else None,
    )


def with_noise(trial: Trial, noise_internal: np.ndarray, noise_external: np.ndarray,
               gain_internal: float, gain_external: float) -> Trial:
    """Copy of ``trial`` with scaled noise mixed into both full audio streams."""
    def fit(noise, n):
        noise = np.asarray(noise)
        reps = -(-n // len(noise))
        return np.tile(noise, reps)[:n]

    ai = mix_noise(trial.audio_internal, fit(noise_internal, len(trial.audio_internal)), gain_internal)
    ae = mix_noise(trial.audio_external, fit(noise_external, len(trial.audio_external)), gain_external)
    return Trial(trial.fabric, trial.session_tag, trial.frames, ai, ae, trial.window_ends,
                 trial.proprio, trial.timestamps, trial.trial_id)


# -- binary + sidecar -------------------------------------------------------


def save_array(stem: str | Path, array: np.ndarray, **meta) -> None:
    stem = Path(stem)
    a = np.ascontiguousarray(array, dtype="<f4")
    stem.with_suffix(".f32").write_bytes(a.tobytes())
    sidecar = {"shape": list(a.shape), "dtype": "float32", **meta}
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_array(stem: str | Path) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    a = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").reshape(meta["shape"])
    return a.astype(np.float32), meta


def hash_directory(path: str | Path) -> str:
    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()


def cache_key(trial_dir: str | Path, params: ExtractionParams) -> str:
    h = hashlib.sha256()
    h.update(hash_directory(trial_dir).encode())
    h.update(json.dumps(params.key(), sort_keys=True).encode())
    return h.hexdigest()[:24]


def save_features(feats: TrialFeatures, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for stream in ("psd_internal", "psd_external"):
        save_array(d / stream, getattr(feats, stream), bin_width=BIN_WIDTH, cutoff=SAMPLE_RATE / 2)
    save_array(d / "proprio", feats.proprio)
    if feats.image is not None:
        save_array(d / "image", feats.image)
    if feats.flow is not None:
        save_array(d / "flow", feats.flow, **feats.extra.get("flow", {}))
    meta = {"trial_id": feats.trial_id, "fabric": feats.fabric.to_json(), "session_tag": feats.session_tag}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_features(directory: str | Path) -> TrialFeatures:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    arrays = {name: load_array(d / name)[0] if (d / f"{name}.f32").exists() else None for name in ARRAYS}
    return TrialFeatures(meta["trial_id"], FabricClass.from_json(meta["fabric"]), meta["session_tag"], **arrays)


def cached_features(trial_dir: str | Path, cache_root: str | Path, params: ExtractionParams) -> TrialFeatures:
    """Load features for ``trial_dir`` from the cache, extracting them on a miss."""
    from .dataset import load_trial

    entry = Path(cache_root) / cache_key(trial_dir, params)
    if (entry / "meta.json").exists():
        return load_features(entry)
    feats = extract_features(load_trial(trial_dir), params)
    feats.extra["flow"] = {"keep_fraction": params.keep_fraction, "backend": params.flow_backend}
    save_features(feats, entry)
    return feats
