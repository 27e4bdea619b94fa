"""Training loop, augmentation and the seeded ablation harness."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .dataset import SEQUENCE_LENGTH
from .dsp import BANDWIDTHS
from .errors import DivergenceError, MissingStream
from .features import TrialFeatures
from .neural.checkpoint import ModelState
from .neural.model import FabricNet, ModelConfig
from .stats import mean_sd

log = logging.getLogger(__name__)


# -- augmentation -----------------------------------------------------------


def rotate_frames(frames: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate every ``(H, W)`` frame of ``(N, H, W)`` about the image centre.

    Bilinear interpolation; pixels sampled from outside the frame are 0.
    ``angle_deg == 0`` returns the input unchanged.
    """
    if angle_deg == 0:
        return frames
    n, h, w = frames.shape
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location
    dy, dx = yy - cy, xx - cx
    src_y = cy + c * dy - s * dx
    src_x = cx + s * dy + c * dx
    out = np.empty_like(frames)
    for i in range(n):
        out[i] = ndimage.map_coordinates(frames[i], [src_y, src_x], order=1, mode="grid-constant", cval=0.0)
    return out


def augment_sequence(frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate all frames of one sequence by a single angle drawn from U(-90, 90) degrees."""
    return rotate_frames(frames, float(rng.uniform(-90.0, 90.0)))


# -- sequence data ----------------------------------------------------------


@dataclass(frozen=True)
class SequenceRef:
    features: TrialFeatures
    start: int
    stop: int


class SequenceSet:
    """All fixed-length sequences cut from a list of trial features."""

    def __init__(self, trials: Sequence[TrialFeatures], n: int = SEQUENCE_LENGTH):
        self.trials = list(trials)
        self.n = n
        self.refs = [SequenceRef(f, k * n, (k + 1) * n) for f in self.trials for k in range(len(f) // n)]

    def __len__(self) -> int:
        return len(self.refs)

    def labels(self, head: str) -> np.ndarray:
        return np.array([self._label(r.features, head) for r in self.refs], dtype=np.int64)

    @staticmethod
    def _label(f: TrialFeatures, head: str) -> int:
        if head == "fabric":
            return f.fabric.id
        if f.fabric.properties is None:
            raise ValueError(f"trial {f.trial_id} has no property labels")
        return getattr(f.fabric.properties, head)

    def batch(self, idx: Sequence[int], cfg: ModelConfig, rng: np.random.Generator | None = None,
              dtype=torch.float32) -> tuple[dict, dict]:
        """Stack sequences ``idx`` into model inputs and per-head label tensors.

        When ``rng`` is given and the model sees raw frames, each sequence
        gets its own random rotation.
        """
        inputs: dict[str, list] = {m: [] for m in cfg.modalities}
        for i in idx:
            r = self.refs[i]
            f, sl = r.features, slice(r.start, r.stop)
            for m in cfg.modalities:
                if m in ("image", "flow") and getattr(f, m) is None:
                    raise MissingStream(f"{f.trial_id}: no {m} features were extracted (features.{m})")
                if m == "image":
                    x = f.image[sl]
                    if rng is not None:
                        x = augment_sequence(x, rng)
                    inputs[m].append(x[:, None])
                elif m == "flow":
                    inputs[m].append(f.flow[sl])
                elif m == "audio_internal":
                    inputs[m].append(f.psd_internal[sl, :cfg.n_bins])
                elif m == "audio_external":
                    inputs[m].append(f.psd_external[sl, :cfg.n_bins])
                else:
                    inputs[m].append(f.proprio[sl])
        x = {m: torch.from_numpy(np.stack(v)).to(dtype) for m, v in inputs.items()}
        y = {h: torch.as_tensor([self._label(self.refs[i].features, h) for i in idx]) for h in cfg.head_spec}
        return x, y


@dataclass(frozen=True)
class Splits:
    train: Sequence[TrialFeatures]
    test: Sequence[TrialFeatures]
    val: Sequence[TrialFeatures] = ()


# -- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    augment: bool = True
    seq_len: int = SEQUENCE_LENGTH
    eval_batch_size: int = 16


def multitask_loss(logits: dict[str, torch.Tensor], labels: dict[str, torch.Tensor]) -> torch.Tensor:
    """Sum of per-head cross-entropies, equally weighted."""
    return sum(F.cross_entropy(logits[h], labels[h]) for h in logits)


@torch.no_grad()
def predict(model: FabricNet, data: SequenceSet, batch_size: int = 16) -> dict[str, np.ndarray]:
    """Arg-max predictions per head for every sequence in ``data``."""
    model.eval()
    dtype = next(model.parameters()).dtype
    preds: dict[str, list] = {h: [] for h in model.heads}
    for start in range(0, len(data), batch_size):
        x, _ = data.batch(range(start, min(start + batch_size, len(data))), model.cfg, dtype=dtype)
        for h, logit in model(x).items():
            preds[h].append(logit.argmax(dim=-1).numpy())
    return {h: np.concatenate(p) if p else np.zeros(0, dtype=np.int64) for h, p in preds.items()}


def accuracy(model: FabricNet, data: SequenceSet, batch_size: int = 16) -> dict[str, float]:
    preds = predict(model, data, batch_size)
    return {h: float(np.mean(p == data.labels(h))) if len(p) else float("nan") for h, p in preds.items()}


@dataclass
class SeedResult:
    seed: int
    test_accuracy: dict[str, float]
    val_accuracy: dict[str, float]
    losses: list[float]
    state: ModelState
    test_predictions: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainResult:
    config: ModelConfig
    runs: list[SeedResult]

    def accuracies(self, head: str = "fabric", split: str = "test") -> list[float]:
        attr = "test_accuracy" if split == "test" else "val_accuracy"
        return [getattr(r, attr).get(head, float("nan")) for r in self.runs]

    def mean_sd(self, head: str = "fabric", split: str = "test") -> tuple[float, float]:
        return mean_sd(self.accuracies(head, split))


def fit(cfg: ModelConfig, train_set: SequenceSet, seed: int, tc: TrainConfig = TrainConfig(),
        dtype=torch.float32) -> tuple[FabricNet, list[float]]:
    """Train one model from scratch; returns the model and per-epoch mean loss.

    Adam with a fixed epoch budget, no early stopping.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = FabricNet(cfg).to(dtype)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    aug_rng = rng if (tc.augment and cfg.image_input == "raw60x80") else None
    history = []
    for epoch in range(tc.epochs):
        model.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            x, y = train_set.batch(idx, cfg, aug_rng, dtype)
            loss = multitask_loss(model(x), y)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(order))
        log.debug("seed %d epoch %d loss %.4f", seed, epoch, history[-1])
    return model, history


def train(cfg: ModelConfig, data: Splits, seeds: Sequence[int], tc: TrainConfig = TrainConfig()) -> TrainResult:
    """Train one model per seed and score it on the validation and test trials."""
    if not seeds:
        raise ValueError("at least one seed is required")
    if not data.train or not data.test:
        raise ValueError("train and test splits must be non-empty")
    train_set = SequenceSet(data.train, tc.seq_len)
    val_set = SequenceSet(data.val, tc.seq_len)
    test_set = SequenceSet(data.test, tc.seq_len)
    runs = []
    for seed in seeds:
        model, history = fit(cfg, train_set, seed, tc)
        test_pred = predict(model, test_set, tc.eval_batch_size)
        test_acc = {h: float(np.mean(p == test_set.labels(h))) for h, p in test_pred.items()}
        val_acc = accuracy(model, val_set, tc.eval_batch_size) if len(val_set) else {}
        steps = tc.epochs * math.ceil(len(train_set) / tc.batch_size)
        runs.append(SeedResult(seed, test_acc, val_acc, history,
                               ModelState.from_model(model, seed, steps), test_pred))
        log.info("%s seed %d: test %s", cfg.label(), seed, test_acc)
    return TrainResult(cfg, runs)


# -- ablation ---------------------------------------------------------------


def modality_grid(base: ModelConfig = ModelConfig(), include_tcn: bool = True) -> list[ModelConfig]:
    """The single-modality and fusion rows of the modality ablation."""
    off = dict(image_input="none", use_internal_audio=False, use_external_audio=False, use_proprio=False)
    rows = [
        dict(image_input="raw60x80"),
        dict(image_input="flow"),
        dict(use_internal_audio=True),
        dict(use_external_audio=True),
        dict(use_proprio=True),
        dict(image_input="raw60x80", use_internal_audio=True),
        dict(image_input="raw60x80", use_internal_audio=True, use_external_audio=True, use_proprio=True),
        dict(image_input="flow", use_internal_audio=True),
        dict(image_input="flow", use_internal_audio=True, use_external_audio=True, use_proprio=True),
        dict(use_internal_audio=True, use_proprio=True),
        dict(use_internal_audio=True, use_external_audio=True, use_proprio=True),
        dict(use_internal_audio=True, use_external_audio=True),
    ]
    grid = [replace(base, **{**off, **r}) for r in rows]
    if include_tcn:
        grid.append(replace(base, **{**off, **rows[10]}, backbone="tcn"))
    return grid


def single_modality_grid(base: ModelConfig = ModelConfig(), names: Sequence[str] = ("internal", "flow", "proprio")) -> list[ModelConfig]:
    off = dict(image_input="none", use_internal_audio=False, use_external_audio=False, use_proprio=False)
    flags = {
        "image": dict(image_input="raw60x80"), "flow": dict(image_input="flow"),
        "internal": dict(use_internal_audio=True), "external": dict(use_external_audio=True),
        "proprio": dict(use_proprio=True),
    }
    return [replace(base, **{**off, **flags[n]}) for n in names]


def bandwidth_grid(base: ModelConfig = ModelConfig(), cutoffs: Sequence[float] = BANDWIDTHS) -> list[ModelConfig]:
    """Internal-audio models truncated at each cutoff."""
    return [replace(base, image_input="none", use_internal_audio=True, use_external_audio=False,
                    use_proprio=False, psd_cutoff=float(c)) for c in cutoffs]


def noise_grid(base: ModelConfig = ModelConfig()) -> list[ModelConfig]:
    """Internal audio, + proprioception, + external audio."""
    off = dict(image_input="none", use_internal_audio=True, use_external_audio=False, use_proprio=False)
    return [replace(base, **off), replace(base, **{**off, "use_proprio": True}),
            replace(base, **{**off, "use_proprio": True, "use_external_audio": True})]


def property_configs(base: ModelConfig = ModelConfig()) -> list[ModelConfig]:
    """Audio + proprioception, and audio + raw images + proprioception, with property heads."""
    b = replace(base, use_internal_audio=True, use_external_audio=False, use_proprio=True,
                properties=True, fabric_classes=0)
    return [replace(b, image_input="none"), replace(b, image_input="raw60x80")]


@dataclass
class AblationRow:
    config: ModelConfig
    result: TrainResult

    def as_dict(self, head: str = "fabric") -> dict:
        c = self.config
        m, s = self.result.mean_sd(head)
        vm, vs = self.result.mean_sd(head, "val") if self.result.runs and self.result.runs[0].val_accuracy else (float("nan"),) * 2
        return {
            "backbone": c.backbone, "image": c.image_input == "raw60x80", "flow": c.image_input == "flow",
            "internal": c.use_internal_audio, "external": c.use_external_audio, "proprio": c.use_proprio,
            "bandwidth_khz": c.psd_cutoff / 1000, "val_mean": vm, "val_sd": vs,
            "test_mean": m, "test_sd": s, "seeds": len(self.result.runs),
        }


def run_ablation(grid: Sequence[ModelConfig], data: Splits, seeds: Sequence[int],
                 tc: TrainConfig = TrainConfig()) -> list[AblationRow]:
    """Train every config in ``grid`` on the same splits and seeds."""
    return [AblationRow(cfg, train(cfg, data, seeds, tc)) for cfg in grid]

