"""Time-varying degradation synthesis: noise, blur and block-DCT compression.

A :class:`DegradationSchedule` splits a clip into segments of ``interval``
frames; segment ``s`` uses family ``combo[s % len(combo)]`` with parameters
drawn once per segment. Noise is redrawn every frame from a generator keyed
by ``seed ^ frame_index`` so any frame can be reproduced in isolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

FAMILIES = ("noise", "blur", "compression")
_ALIASES = {"noise": "noise", "blur": "blur", "compression": "compression", "comp": "compression",
            "jpeg": "compression"}

NOISE_SIGMA_RANGE = (0.04, 0.20)
BLUR_SIGMA_RANGE = (1.0, 3.0)
QUALITY_RANGE = (10, 40)

# Standard JPEG luminance quantization table.
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def family_name(token: str) -> str:
    try:
        return _ALIASES[token.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown degradation family {token!r}") from None


def parse_combo(spec: str | Sequence[str]) -> tuple[str, ...]:
    tokens = spec.split("+") if isinstance(spec, str) else list(spec)
    combo = tuple(family_name(t) for t in tokens if t.strip())
    if not combo:
        raise ValueError("degradation combo is empty")
    return combo


# -- operators ----------------------------------------------------------------

def noise_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) ^ int(frame_index))


def apply_gaussian_noise(frame: np.ndarray, sigma: float, rng: np.random.Generator,
                         clip: bool = True) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return frame.copy()
    out = frame + rng.normal(0.0, sigma, size=frame.shape)
    return np.clip(out, 0.0, 1.0) if clip else out


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D taps of length ``2 * ceil(3 sigma) + 1``."""
    if sigma < 0:
        raise ValueError(f"blur sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def apply_gaussian_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes with mirror padding."""
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return frame.copy()
    out = correlate1d(np.asarray(frame, dtype=np.float64), k, axis=-1, mode="mirror")
    return correlate1d(out, k, axis=-2, mode="mirror")


def quantization_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)


def apply_block_compression(frame: np.ndarray, quality: int) -> np.ndarray:
    """8x8 block DCT quantization of every channel on the 0-255 scale."""
    table = quantization_table(quality)
    arr = np.asarray(frame, dtype=np.float64)
    h, w = arr.shape[-2:]
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
        arr = np.pad(arr, pad, mode="reflect" if min(h, w) > max(ph, pw) else "symmetric")
    hh, ww = arr.shape[-2:]
    lead = arr.shape[:-2]
    blocks = (arr * 255.0 - 128.0).reshape(lead + (hh // 8, 8, ww // 8, 8))
    coeffs = dctn(blocks, type=2, norm="ortho", axes=(-3, -1))
    tbl = table[:, None, :]  # broadcasts over (.., 8, nbx, 8)
    coeffs = np.round(coeffs / tbl) * tbl
    rec = idctn(coeffs, type=2, norm="ortho", axes=(-3, -1)).reshape(lead + (hh, ww))
    rec = (rec + 128.0) / 255.0
    return np.clip(rec[..., :h, :w], 0.0, 1.0)


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float
    family = "noise"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def apply(self, frame, rng):
        return apply_gaussian_noise(frame, self.sigma, rng)

    def to_dict(self):
        return {"family": self.family, "sigma": self.sigma}


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float
    family = "blur"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def kernel_size(self) -> int:
        return 2 * int(math.ceil(3 * self.sigma)) + 1

    def apply(self, frame, rng):
        return apply_gaussian_blur(frame, self.sigma)

    def to_dict(self):
        return {"family": self.family, "sigma": self.sigma, "kernel_size": self.kernel_size}


@dataclass(frozen=True)
class BlockCompression:
    quality: int
    family = "compression"

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise ValueError("quality must be in [1, 100]")

    def apply(self, frame, rng):
        return apply_block_compression(frame, self.quality)

    def to_dict(self):
        return {"family": self.family, "quality": self.quality}


Degradation = Union[GaussianNoise, GaussianBlur, BlockCompression]


def degradation_from_dict(d: dict) -> Degradation:
    fam = family_name(d["family"])
    if fam == "noise":
        return GaussianNoise(float(d["sigma"]))
    if fam == "blur":
        return GaussianBlur(float(d["sigma"]))
    return BlockCompression(int(d["quality"]))


def sample_degradation(family: str, rng: np.random.Generator) -> Degradation:
    family = family_name(family)
    if family == "noise":
        return GaussianNoise(float(rng.uniform(*NOISE_SIGMA_RANGE)))
    if family == "blur":
        return GaussianBlur(float(rng.uniform(*BLUR_SIGMA_RANGE)))
    lo, hi = QUALITY_RANGE
    return BlockCompression(int(rng.integers(lo, hi + 1)))


# -- schedules ----------------------------------------------------------------

@dataclass
class DegradationSchedule:
    n_frames: int
    interval: int
    combo: tuple[str, ...]
    seed: int
    segments: list[Degradation] = field(default_factory=list)

    def segment_index(self, frame: int) -> int:
        if not 0 <= frame < self.n_frames:
            raise IndexError(f"frame {frame} outside schedule of {self.n_frames} frames")
        return frame // self.interval

    def degradation_for(self, frame: int) -> Degradation:
        return self.segments[self.segment_index(frame)]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_frames": self.n_frames,
            "interval": self.interval,
            "combo": list(self.combo),
            "segments": [
                {"index": s, "start": s * self.interval,
                 "stop": min((s + 1) * self.interval, self.n_frames), **deg.to_dict()}
                for s, deg in enumerate(self.segments)
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DegradationSchedule":
        return cls(int(d["n_frames"]), int(d["interval"]), tuple(d["combo"]), int(d["seed"]),
                   [degradation_from_dict(s) for s in d["segments"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def fixed(cls, n_frames: int, degradation: Degradation, seed: int = 0) -> "DegradationSchedule":
        """One degradation for the whole clip."""
        return cls(n_frames, n_frames, (degradation.family,), seed, [degradation])


def build_schedule(n_frames: int, interval: int, combo: str | Sequence[str], seed: int) -> DegradationSchedule:
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    if n_frames < 1:
        raise ValueError("schedule needs at least one frame")
    combo = parse_combo(combo) if isinstance(combo, str) or combo else ()
    if not combo:
        raise ValueError("degradation combo is empty")
    rng = np.random.default_rng([int(seed), 0x5EED])
    n_seg = -(-n_frames // interval)
    segments = [sample_degradation(combo[s % len(combo)], rng) for s in range(n_seg)]
    return DegradationSchedule(n_frames, interval, combo, int(seed), segments)


def degrade_frame(frame: np.ndarray, index: int, schedule: DegradationSchedule) -> np.ndarray:
    return schedule.degradation_for(index).apply(frame, noise_rng(schedule.seed, index))


def degrade_video(video: np.ndarray, schedule: DegradationSchedule) -> np.ndarray:
    if video.shape[0] > schedule.n_frames:
        raise ValueError(f"schedule covers {schedule.n_frames} frames, video has {video.shape[0]}")
    return np.stack([degrade_frame(f, i, schedule) for i, f in enumerate(video)]).astype(video.dtype, copy=False)
