"""Synthetic multimodal "fabric" generator.

Each class gets a signature per modality: an audio spectrum (harmonic comb
plus band-limited noise), a texture that is dragged across the camera, and
a proprioceptive rub profile. A back-and-forth rub cycle drives all of
them, so the modalities stay physically consistent with each other. Class
separability is set per modality, which lets tests build both easy and
near-duplicate class sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping

import cv2
import numpy as np
from scipy import ndimage

from .dataset import (
    FRAME_PERIOD, HOLDOUT_FABRICS, N_JOINTS, NATIVE_SHAPE, PROPERTY_LEVELS, SAMPLE_RATE, WINDOW,
    FabricClass, PropertyLabels, Trial,
)
from .dsp import FULL_SCALE

HOP = round(FRAME_PERIOD * SAMPLE_RATE)  # 960 audio samples per frame
MODALITIES = ("audio", "image", "flow", "proprio")


@dataclass(frozen=True)
class AudioSignature:
    f0: float = 800.0
    n_harmonics: int = 4
    harmonic_decay: float = 0.6
    # (centre Hz, width Hz, power relative to the comb)
    bands: tuple[tuple[float, float, float], ...] = ((6000.0, 2000.0, 0.5),)
    level_db: float = -24.0


@dataclass(frozen=True)
class FlowPattern:
    direction_deg: float = 0.0
    speed: float = 2.0        # peak drag speed, px/frame
    grain: float = 3.0        # texture blob scale, px
    contrast: float = 60.0
    brightness: float = 110.0
    blob_radius: float = 60.0
    blob_gain: float = 30.0


@dataclass(frozen=True)
class ProprioProfile:
    rub_hz: float = 1.6
    velocity_attenuation: float = 1.0   # friction-driven slow-down, 1 = none
    current_gain: float = 0.3           # A per unit friction
    stick_slip: float = 0.0             # third-harmonic share of the stroke


@dataclass(frozen=True)
class SynthFabricSpec:
    fabric: FabricClass
    audio: AudioSignature = field(default_factory=AudioSignature)
    flow: FlowPattern = field(default_factory=FlowPattern)
    proprio: ProprioProfile = field(default_factory=ProprioProfile)

    def signature_vector(self) -> np.ndarray:
        """Signature parameters scaled to comparable ranges, for separation checks."""
        a, f, p = self.audio, self.flow, self.proprio
        band = a.bands[0] if a.bands else (0.0, 0.0, 0.0)
        return np.array([
            a.f0 / 3000, band[0] / 12000, band[2],
            f.grain / 8, f.speed / 4, f.direction_deg / 180, f.blob_radius / 100, f.contrast / 100,
            p.rub_hz / 3, p.velocity_attenuation, p.current_gain, p.stick_slip,
        ])


# -- class sets -------------------------------------------------------------


def _codes(n: int, rng: np.random.Generator) -> np.ndarray:
    """Evenly spaced codes in [0, 1], randomly assigned to classes."""
    base = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.5])
    return rng.permutation(base)


def make_fabric_set(n_classes: int, separation: float | Mapping[str, float] = 1.0,
                    seed: int = 0) -> list[SynthFabricSpec]:
    """``n_classes`` fabric specs with ids ``0..n_classes-1``.

    ``separation`` (0 = identical classes, 1 = full spread) may be given per
    modality: keys ``audio``, ``image``, ``flow``, ``proprio``. ``image``
    covers texture appearance; ``flow`` covers the drag motion.
    """
    if not isinstance(separation, Mapping):
        separation = {m: float(separation) for m in MODALITIES}
    sep = {m: float(separation.get(m, 0.0)) for m in MODALITIES}
    rng = np.random.default_rng(seed)
    c_f0, c_band, c_mix = _codes(n_classes, rng), _codes(n_classes, rng), _codes(n_classes, rng)
    c_grain, c_blob, c_contrast = _codes(n_classes, rng), _codes(n_classes, rng), _codes(n_classes, rng)
    c_dir, c_speed = _codes(n_classes, rng), _codes(n_classes, rng)
    c_rub, c_fric, c_slip = _codes(n_classes, rng), _codes(n_classes, rng), _codes(n_classes, rng)

    specs = []
    for c in range(n_classes):
        props = PropertyLabels(*(int(rng.integers(k)) for k in PROPERTY_LEVELS.values()))
        s = sep["audio"]
        audio = AudioSignature(
            f0=1750 + s * 2500 * (c_f0[c] - 0.5),
            n_harmonics=4,
            harmonic_decay=0.6 + 0.4 * s * (c_mix[c] - 0.5),
            bands=((7000 + s * 9000 * (c_band[c] - 0.5), 2000.0, 0.85 + 1.5 * s * (c_mix[c] - 0.5)),),
        )
        s_i, s_f = sep["image"], sep["flow"]
        flow = FlowPattern(
            direction_deg=s_f * 150 * (c_dir[c] - 0.5),
            speed=2.5 + s_f * 2.0 * (c_speed[c] - 0.5),
            grain=10.0 + s_i * 16.0 * (c_grain[c] - 0.5),
            contrast=70 + s_i * 80 * (c_contrast[c] - 0.5),
            blob_radius=55 + s_i * 70 * (c_blob[c] - 0.5),
            blob_gain=30.0,
        )
        s_p = sep["proprio"]
        proprio = ProprioProfile(
            rub_hz=1.6 + s_p * 1.2 * (c_rub[c] - 0.5),
            velocity_attenuation=1.0 - s_p * 0.5 * c_fric[c],
            current_gain=0.3 + s_p * 0.5 * (c_fric[c] - 0.5),
            stick_slip=s_p * 0.4 * c_slip[c],
        )
        specs.append(SynthFabricSpec(FabricClass(c, f"synthetic-{c:02d}", props), audio, flow, proprio))
    return specs


def property_fabric_set(seed: int = 0, jitter: float = 0.15) -> list[SynthFabricSpec]:
    """Classes 0..23 whose signatures are driven by their property labels.

    Roughness moves the noise band and texture grain, thickness moves the comb
    fundamental and contact blob, stretchiness moves the rub rate and drag
    speed. Each class adds its own jitter, so holdout fabrics
    (1, 10, 21, 22, 23) present unseen but property-consistent signatures.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for c in range(24):
        props = PropertyLabels(
            int(rng.integers(2)), int(rng.integers(5)), int(rng.integers(3)))
        if c == 0:
            props = PropertyLabels(0, 0, 0)
        j = lambda: 1 + jitter * rng.uniform(-1, 1)  # noqa: E731
        r, t, s = props.roughness, props.thickness, props.stretchiness
        audio = AudioSignature(
            f0=(400 + 500 * t) * j(), n_harmonics=4, harmonic_decay=0.5,
            bands=(((2500 + 2800 * r) * j(), 1500.0, 0.3 + 0.2 * r),),
        )
        flow = FlowPattern(
            direction_deg=10 * rng.uniform(-1, 1), speed=(1.5 + 1.5 * s) * j(),
            grain=(2.0 + 1.2 * r) * j(), contrast=60 * j(), blob_radius=(40 + 25 * t) * j(),
        )
        proprio = ProprioProfile(rub_hz=(1.3 + 0.6 * s) * j(), velocity_attenuation=1 - 0.1 * r,
                                 current_gain=0.2 + 0.1 * t, stick_slip=0.05 * r)
        specs.append(SynthFabricSpec(FabricClass(c, f"synthetic-{c:02d}", props), audio, flow, proprio))
    return specs


def well_separated(n_classes: int = 8, seed: int = 0) -> list[SynthFabricSpec]:
    return make_fabric_set(n_classes, 1.0, seed)


# -- signal synthesis -------------------------------------------------------


def _stroke(t: np.ndarray, rub_hz: float, phase: float, stick_slip: float) -> np.ndarray:
    """Signed stroke velocity in [-1, 1]: a flattened sine with reversals."""
    ph = 2 * np.pi * rub_hz * t + phase
    s = np.tanh(3.0 * np.sin(ph)) / np.tanh(3.0)
    return (1 - stick_slip) * s + stick_slip * np.sin(3 * ph)


def _band_noise(n: int, centre: float, width: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    spec[np.abs(f - centre) > width / 2] = 0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS 1/f noise."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x * x))


def cafe_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS babble-like noise concentrated in 0.1-2 kHz.

    Several band-limited "voices" with slow syllabic amplitude modulation,
    plus sparse broadband clatter.
    """
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    for _ in range(6):
        centre = rng.uniform(250, 1500)
        voice = _band_noise(n, centre, rng.uniform(300, 800), rng)
        env = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi))
        x += voice * env
    clicks = np.zeros(n)
    idx = rng.integers(0, n, size=max(1, n // SAMPLE_RATE * 3))
    clicks[idx] = rng.normal(0, 8, size=len(idx))
    x += np.convolve(clicks, np.exp(-np.arange(200) / 30.0), mode="same")
    return x / np.sqrt(np.mean(x * x))


def _contact_audio(sig: AudioSignature, n: int, envelope: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    comb = np.zeros(n)
    for h in range(1, sig.n_harmonics + 1):
        f = h * sig.f0
        if f >= SAMPLE_RATE / 2:
            break
        comb += sig.harmonic_decay ** (h - 1) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    comb_rms = np.sqrt(np.mean(comb * comb)) if sig.n_harmonics else 0.0
    x = comb / comb_rms if comb_rms > 0 else comb
    for centre, width, power in sig.bands:
        x = x + math.sqrt(power) * _band_noise(n, centre, width, rng)
    rms = np.sqrt(np.mean(x * x))
    x = x / rms if rms > 0 else x
    return x * envelope * 10 ** (sig.level_db / 20)


def _texture(shape: tuple[int, int], grain: float, rng: np.random.Generator) -> np.ndarray:
    tex = ndimage.gaussian_filter(rng.standard_normal(shape), grain, mode="wrap")
    return tex / tex.std()


def to_pcm(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * FULL_SCALE), -32768, 32767).astype(np.int16)


def generate_trial(spec: SynthFabricSpec, n_samples: int, rng: np.random.Generator | int, *,
                   session_tag: str = "day1", trial_id: str = "", frame_shape: tuple[int, int] = NATIVE_SHAPE,
                   ambient_db: float = -62.0, internal_ambient_gain: float = 0.15,
                   external_contact_gain: float = 0.08, frame_noise: float = 2.0,
                   rate_jitter: float = 0.03) -> Trial:
    """Synthesise one trial of ``n_samples`` aligned time steps.

    Frames arrive every 20 ms; frame ``i`` owns the audio window ending at
    sample ``2048 + 960 * i``. Returns a validated :class:`Trial`.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(rng)
    fp, pp = spec.flow, spec.proprio
    rub_hz = pp.rub_hz * (1 + rate_jitter * rng.uniform(-1, 1))
    phase = rng.uniform(0, 2 * np.pi)

    ends = WINDOW + HOP * np.arange(n_samples, dtype=np.int64)
    timestamps = ends / SAMPLE_RATE
    n_audio = WINDOW + HOP * n_samples

    # audio
    t_audio = np.arange(n_audio) / SAMPLE_RATE
    stroke_audio = _stroke(t_audio, rub_hz, phase, pp.stick_slip)
    envelope = np.abs(stroke_audio) * pp.velocity_attenuation
    level_jitter = 10 ** (rng.uniform(-2, 2) / 20)
    contact = _contact_audio(spec.audio, n_audio, envelope, rng) * level_jitter
    ambient = pink_noise(n_audio, rng) * 10 ** (ambient_db / 20)
    audio_internal = to_pcm(contact + internal_ambient_gain * ambient)
    audio_external = to_pcm(external_contact_gain * contact + ambient)

    # motion shared by frames and joints
    stroke = _stroke(timestamps, rub_hz, phase, pp.stick_slip) * pp.velocity_attenuation
    theta = math.radians(fp.direction_deg + rng.uniform(-3, 3))
    step = fp.speed * stroke
    pos = np.cumsum(np.stack([step * math.cos(theta), step * math.sin(theta)], axis=1), axis=0)
    pos -= pos.mean(axis=0)

    # frames
    h, w = frame_shape
    margin = int(np.ceil(np.abs(pos).max())) + 4
    tex = _texture((h + 2 * margin, w + 2 * margin), fp.grain, rng)
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h / 2 + rng.uniform(-10, 10), w / 2 + rng.uniform(-10, 10)
    radius = fp.blob_radius * h / NATIVE_SHAPE[0]
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
    pressure = 0.6 + 0.4 * np.abs(stroke)
    frames = np.empty((n_samples, h, w), dtype=np.uint8)
    noise_bank = rng.normal(0, frame_noise, size=(h + 8, w + 8)).astype(np.float32)
    for i in range(n_samples):
        m = np.float32([[1, 0, margin - pos[i, 0]], [0, 1, margin - pos[i, 1]]])
        view = cv2.warpAffine(tex.astype(np.float32), m, (w, h), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP)
        oy, ox = rng.integers(0, 8, size=2)
        img = (fp.brightness + fp.contrast * pressure[i] * view + fp.blob_gain * pressure[i] * blob
               + noise_bank[oy:oy + h, ox:ox + w])
        frames[i] = np.clip(np.rint(img), 0, 255)

    # proprioception: 6 joints following the stroke displacement
    excursion = np.cumsum(stroke) * FRAME_PERIOD
    excursion -= excursion.mean()
    gains = np.array([0.35, 0.25, 0.15, 0.30, 0.20, 0.05])
    offsets = np.array([0.2, 0.6, 0.4, 0.8, 0.5, 0.1])
    angle = offsets + gains * excursion[:, None] * 2 * math.pi * rub_hz / 2
    velocity = np.gradient(angle, FRAME_PERIOD, axis=0)
    current = (0.05 + pp.current_gain * np.tanh(5 * stroke)[:, None] * gains / gains.max()
               + 0.1 * angle)
    proprio = np.empty((n_samples, 3 * N_JOINTS))
    proprio[:, 0::3] = angle + rng.normal(0, 2e-3, angle.shape)
    proprio[:, 1::3] = velocity + rng.normal(0, 2e-2, angle.shape)
    proprio[:, 2::3] = current + rng.normal(0, 5e-3, angle.shape)

    return Trial(
        fabric=spec.fabric, session_tag=session_tag, frames=frames,
        audio_internal=audio_internal, audio_external=audio_external,
        window_ends=np.stack([ends, ends], axis=1), proprio=proprio, timestamps=timestamps,
        trial_id=trial_id or f"f{spec.fabric.id:02d}-{session_tag}",
    )


@dataclass(frozen=True)
class TrialPlan:
    spec: SynthFabricSpec
    session_tag: str
    trial_id: str
    seed: np.random.SeedSequence


def plan_dataset(specs, train_trials: int = 12, test_trials: int = 2, seed: int = 0,
                 train_tags: tuple[str, ...] = ("day1", "day2"), test_tag: str = "day3") -> list[TrialPlan]:
    """Deterministic per-trial seeds and session tags for a whole dataset.

    Training trials are spread evenly over ``train_tags``; test trials all
    carry ``test_tag``.
    """
    plans = []
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(specs) * (train_trials + test_trials))
    k = 0
    for spec in specs:
        for i in range(train_trials + test_trials):
            if i < train_trials:
                tag = train_tags[i * len(train_tags) // train_trials]
            else:
                tag = test_tag
            plans.append(TrialPlan(spec, tag, f"f{spec.fabric.id:02d}-{tag}-{i:02d}", children[k]))
            k += 1
    return plans


def run_plan(plan: TrialPlan, n_samples: int, **kwargs) -> Trial:
    return generate_trial(plan.spec, n_samples, np.random.default_rng(plan.seed),
                          session_tag=plan.session_tag, trial_id=plan.trial_id, **kwargs)


def generate_dataset(specs, n_samples: int, train_trials: int = 12, test_trials: int = 2,
                     seed: int = 0, **kwargs) -> Iterator[Trial]:
    """Yield trials one at a time so native-resolution frames never pile up in memory."""
    for plan in plan_dataset(specs, train_trials, test_trials, seed):
        yield run_plan(plan, n_samples, **kwargs)


def with_audio(spec: SynthFabricSpec, **changes) -> SynthFabricSpec:
    return replace(spec, audio=replace(spec.audio, **changes))
