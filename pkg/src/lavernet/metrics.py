"""Quality metrics: PSNR, SSIM and the Charbonnier training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import functional as F
from .tensor import DimensionError, Tensor

PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    b = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred, gt) -> float:
    """PSNR in dB for signals on [0, 1]; identical inputs report ``PSNR_CAP``."""
    a, b = _pair(pred, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=-1) @ g
    return sliding_window_view(rows, k, axis=-2) @ g


def ssim(pred, gt, data_range: float = 1.0) -> float:
    """Mean SSIM over a valid-mode 11x11 Gaussian window, averaged over channels."""
    a, b = _pair(pred, gt)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise DimensionError(f"frame {a.shape[-2]}x{a.shape[-1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(smap.reshape(smap.shape[0], -1).mean(axis=1).mean())


def charbonnier(pred: Tensor, gt, eps: float = 1e-3) -> Tensor:
    """Mean of ``sqrt((pred - gt)^2 + eps^2)``; differentiable everywhere."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    if gt.shape != pred.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    diff = F.sub(pred, gt)
    return F.mean(F.sqrt(F.add(F.mul(diff, diff), eps * eps)))


@dataclass
class MetricReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    flops: dict = field(default_factory=dict)
    config: dict | None = None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def add_frame(self, pred, gt) -> None:
        self.psnr.append(psnr(pred, gt))
        self.ssim.append(ssim(pred, gt))

    def to_json(self) -> dict:
        return {
            "per_frame": [{"frame": i, "psnr": p, "ssim": s}
                          for i, (p, s) in enumerate(zip(self.psnr, self.ssim))],
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "params": self.params,
            "flops": self.flops,
            "config": self.config,
        }


def evaluate_video(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    if pred.shape != gt.shape:
        raise DimensionError(f"video shape mismatch: {pred.shape} vs {gt.shape}")
    report = MetricReport()
    for p, g in zip(pred, gt):
        report.add_frame(p, g)
    return report


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["per_frame", "mean_psnr", "mean_ssim", "params", "flops", "config"],
    "properties": {
        "per_frame": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame", "psnr", "ssim"],
                "properties": {
                    "frame": {"type": "integer", "minimum": 0},
                    "psnr": {"type": "number"},
                    "ssim": {"type": "number", "minimum": -1, "maximum": 1},
                },
            },
        },
        "mean_psnr": {"type": "number"},
        "mean_ssim": {"type": "number"},
        "params": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "flops": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "config": {"type": ["object", "null"]},
    },
}
