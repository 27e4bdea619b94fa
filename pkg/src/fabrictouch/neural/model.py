"""Multimodal sequence classifier.

Per-step encoders (CNN for frames or flow, one MLP shared by both audio
streams, an MLP for joints) produce a concatenated feature vector. Each
dimension is min-max rescaled over the sequence, a learned position
embedding is added, and an attention or TCN backbone mixes the sequence.
Mean-pooled context goes through a shared hidden layer and one output layer
per task head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from ..dataset import DOWNSAMPLED_SHAPE, PROPERTY_LEVELS, PROPRIO_DIM, SEQUENCE_LENGTH
from ..dsp import N_BINS, n_bins_for
from ..errors import ShapeMismatch, UnknownHead
from ..optflow import FEATURE_SHAPE

IMAGE_INPUTS = ("none", "raw60x80", "flow")
BACKBONES = ("attention", "tcn")


@dataclass(frozen=True)
class ModelConfig:
    image_input: str = "none"
    use_internal_audio: bool = True
    use_external_audio: bool = False
    use_proprio: bool = False
    backbone: str = "attention"
    psd_cutoff: float = 24000.0
    # PSDs arrive in full-scale^2/Hz, which is ~1e-8; this is a fixed unit change
    psd_scale: float = 1e6
    image_dim: int = 32
    audio_hidden: int = 128
    audio_dim: int = 64
    proprio_hidden: int = 64
    proprio_dim: int = 32
    model_dim: int = 128
    heads: int = 4
    layers: int = 3
    ff_dim: int = 256
    tcn_kernel: int = 3
    tcn_dilations: tuple[int, ...] = (1, 2, 4, 8)
    head_hidden: int = 64
    fabric_classes: int = 21
    properties: bool = False
    seq_len: int = SEQUENCE_LENGTH

    def __post_init__(self):
        if self.image_input not in IMAGE_INPUTS:
            raise ValueError(f"image_input must be one of {IMAGE_INPUTS}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if not self.modalities:
            raise ValueError("at least one modality must be enabled")
        if self.backbone == "attention" and self.layers != 3:
            raise ValueError("the attention backbone uses exactly 3 layers")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if not self.head_spec:
            raise ValueError("at least one output head is required")
        object.__setattr__(self, "tcn_dilations", tuple(self.tcn_dilations))

    @property
    def modalities(self) -> tuple[str, ...]:
        m = []
        if self.image_input == "raw60x80":
            m.append("image")
        elif self.image_input == "flow":
            m.append("flow")
        if self.use_internal_audio:
            m.append("audio_internal")
        if self.use_external_audio:
            m.append("audio_external")
        if self.use_proprio:
            m.append("proprio")
        return tuple(m)

    @property
    def n_bins(self) -> int:
        return n_bins_for(self.psd_cutoff)

    @property
    def feature_dim(self) -> int:
        d = 0
        if self.image_input != "none":
            d += self.image_dim
        d += self.audio_dim * (self.use_internal_audio + self.use_external_audio)
        if self.use_proprio:
            d += self.proprio_dim
        return d

    @property
    def head_spec(self) -> dict[str, int]:
        spec = {}
        if self.fabric_classes:
            spec["fabric"] = self.fabric_classes
        if self.properties:
            spec.update(PROPERTY_LEVELS)
        return spec

    def label(self) -> str:
        parts = {"image": "image", "flow": "flow", "audio_internal": "internal",
                 "audio_external": "external", "proprio": "proprio"}
        return "+".join(parts[m] for m in self.modalities)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tcn_dilations"] = list(self.tcn_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "tcn_dilations" in d:
            d["tcn_dilations"] = tuple(d["tcn_dilations"])
        return cls(**d)


def minmax_over_time(x: torch.Tensor) -> torch.Tensor:
    """Rescale each feature of ``(B, N, D)`` to [0, 1] over the N steps.

    Features that are constant over the sequence become 0.
    """
    lo = x.amin(dim=1, keepdim=True)
    hi = x.amax(dim=1, keepdim=True)
    span = hi - lo
    # NaN spans stay NaN so a bad input cannot be silently zeroed
    const = span == 0
    return torch.where(const, torch.zeros_like(x), (x - lo) / torch.where(const, torch.ones_like(span), span))


class ConvEncoder(nn.Module):
    """Three stride-2 conv layers (8/16/32 channels), global average pool, linear."""

    def __init__(self, in_channels: int, out_dim: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(in_channels, 8, 3, stride=2, padding=1),
            nn.Conv2d(8, 16, 3, stride=2, padding=1),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
        ])
        self.proj = nn.Linear(32, out_dim)

    def forward(self, x):
        # (..., C, H, W) -> (..., out_dim)
        lead = x.shape[:-3]
        h = x.reshape(-1, *x.shape[-3:])
        for conv in self.convs:
            h = F.relu(conv(h))
        return self.proj(h.mean(dim=(-2, -1))).reshape(*lead, -1)


class MLPEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.last_weights = None

    def forward(self, x, keep_weights: bool = False):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // self.heads)
        w = scores.softmax(dim=-1)  # (B, heads, N, N)
        if keep_weights:
            self.last_weights = w.detach()
        y = (w @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(y)


class AttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.attn = SelfAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x, keep_weights: bool = False):
        x = self.norm1(x + self.attn(x, keep_weights))
        return self.norm2(x + self.ff(x))


class AttentionBackbone(nn.Module):
    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.pos_embedding = nn.Parameter(torch.randn(cfg.seq_len, in_dim) * 0.02)
        self.proj = nn.Linear(in_dim, cfg.model_dim)
        self.blocks = nn.ModuleList(AttentionBlock(cfg.model_dim, cfg.heads, cfg.ff_dim) for _ in range(cfg.layers))

    def forward(self, x, positions=None, keep_weights: bool = False):
        n = x.shape[1]
        pos = self.pos_embedding[:n] if positions is None else self.pos_embedding[positions]
        h = self.proj(x + pos)
        for block in self.blocks:
            h = block(h, keep_weights)
        return h

    def attention_weights(self) -> list[torch.Tensor]:
        return [b.attn.last_weights for b in self.blocks]


class CausalConv(nn.Module):
    """Dilated 1-D convolution that only looks back; the first step is replicated as left padding."""

    def __init__(self, channels: int, kernel: int, dilation: int):
        super().__init__()
        self.pad = (kernel - 1) * dilation
        self.conv = nn.Conv1d(channels, channels, kernel, dilation=dilation)

    def forward(self, x):
        return self.conv(F.pad(x, (self.pad, 0), mode="replicate"))


class TCNBackbone(nn.Module):
    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(in_dim, cfg.model_dim)
        self.convs = nn.ModuleList(CausalConv(cfg.model_dim, cfg.tcn_kernel, d) for d in cfg.tcn_dilations)

    def forward(self, x, positions=None, keep_weights: bool = False):
        h = self.proj(x).transpose(1, 2)  # (B, C, N)
        for conv in self.convs:
            h = h + F.relu(conv(h))
        return h.transpose(1, 2)


class FabricNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.image_input == "raw60x80":
            self.image_encoder = ConvEncoder(1, cfg.image_dim)
        elif cfg.image_input == "flow":
            self.image_encoder = ConvEncoder(2, cfg.image_dim)
        if cfg.use_internal_audio or cfg.use_external_audio:
            # one module for both streams: the weights are shared by construction
            self.audio_encoder = MLPEncoder(cfg.n_bins, cfg.audio_hidden, cfg.audio_dim)
        if cfg.use_proprio:
            self.proprio_encoder = MLPEncoder(PROPRIO_DIM, cfg.proprio_hidden, cfg.proprio_dim)
        backbone = AttentionBackbone if cfg.backbone == "attention" else TCNBackbone
        self.backbone = backbone(cfg.feature_dim, cfg)
        self.head_hidden = nn.Linear(cfg.model_dim, cfg.head_hidden)
        self.heads = nn.ModuleDict({name: nn.Linear(cfg.head_hidden, k) for name, k in cfg.head_spec.items()})

    # -- encoders ---------------------------------------------------------

    def encode_image(self, frames: torch.Tensor) -> torch.Tensor:
        expected = (1, *DOWNSAMPLED_SHAPE) if self.cfg.image_input == "raw60x80" else FEATURE_SHAPE
        if tuple(frames.shape[-3:]) != expected:
            raise ShapeMismatch(f"image input {tuple(frames.shape[-3:])}, expected {expected}")
        return self.image_encoder(frames)

    def encode_audio(self, psd: torch.Tensor) -> torch.Tensor:
        if psd.shape[-1] != self.cfg.n_bins:
            raise ShapeMismatch(f"PSD has {psd.shape[-1]} bins, config expects {self.cfg.n_bins}")
        return self.audio_encoder(psd * self.cfg.psd_scale)

    def encode_proprio(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != PROPRIO_DIM:
            raise ShapeMismatch(f"proprio has {v.shape[-1]} entries, expected {PROPRIO_DIM}")
        return self.proprio_encoder(v)

    def encode(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        """Concatenated per-step encoder outputs ``(B, N, feature_dim)``, before normalisation."""
        parts = []
        for m in self.cfg.modalities:
            x = batch[m]
            if m in ("image", "flow"):
                parts.append(self.encode_image(x))
            elif m.startswith("audio"):
                parts.append(self.encode_audio(x))
            else:
                parts.append(self.encode_proprio(x))
        return torch.cat(parts, dim=-1)

    # -- sequence model ---------------------------------------------------

    def context(self, batch, positions=None, keep_weights: bool = False) -> torch.Tensor:
        return self.backbone(minmax_over_time(self.encode(batch)), positions, keep_weights)

    def logits(self, context: torch.Tensor, head: str) -> torch.Tensor:
        if head not in self.heads:
            raise UnknownHead(head)
        return self.heads[head](F.relu(self.head_hidden(context.mean(dim=1))))

    def classify(self, context: torch.Tensor, head: str = "fabric") -> torch.Tensor:
        return self.logits(context, head).softmax(dim=-1)

    def forward(self, batch) -> dict[str, torch.Tensor]:
        ctx = self.context(batch)
        return {name: self.logits(ctx, name) for name in self.heads}
