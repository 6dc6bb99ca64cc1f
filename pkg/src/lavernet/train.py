"""Desk-scale training: Adam, cosine annealing, clip sampling and the loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .degradation import FAMILIES, build_schedule, degrade_video
from .metrics import charbonnier
from .model import ParamStore, lavernet_forward_batched
from .tensor import Tensor

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_min: float = 1e-7
    total_iters: int = 2000
    batch: int = 1
    clip_frames: int = 12
    crop: int = 64
    seed: int = 0
    interval: int = 6
    combo: tuple[str, ...] = ("noise", "blur")
    loss_eps: float = 1e-3
    ckpt_every: int = 500

    def __post_init__(self):
        if not self.lr_min < self.lr_init:
            raise ValueError("lr_min must be below lr_init")
        if self.clip_frames < 2:
            raise ValueError("clip_frames must be >= 2")
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        self.combo = tuple(self.combo)


def cosine_lr(iteration: int, cfg: TrainConfig) -> float:
    it = min(max(iteration, 0), cfg.total_iters)
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * it / cfg.total_iters))


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: OptimState, lr: float) -> None:
    """Bias-corrected Adam update in place; missing grads count as zero."""
    grads = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
        grads[name] = g
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.data = (t.data - update).astype(t.dtype, copy=False)


# -- data ---------------------------------------------------------------------

def sample_clip(dataset: Sequence[np.ndarray], cfg: TrainConfig,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random temporal window + spatial crop of one clip, degraded by a random schedule."""
    for i, clip in enumerate(dataset):
        t, _, h, w = clip.shape
        if t < cfg.clip_frames or h < cfg.crop or w < cfg.crop:
            raise ValueError(f"clip {i} has shape {clip.shape}; need >= {cfg.clip_frames} frames "
                             f"and {cfg.crop}x{cfg.crop} pixels")
    clip = dataset[int(rng.integers(len(dataset)))]
    t, _, h, w = clip.shape
    t0 = int(rng.integers(t - cfg.clip_frames + 1))
    y0 = int(rng.integers(h - cfg.crop + 1))
    x0 = int(rng.integers(w - cfg.crop + 1))
    clean = np.ascontiguousarray(
        clip[t0:t0 + cfg.clip_frames, :, y0:y0 + cfg.crop, x0:x0 + cfg.crop], dtype=np.float32)
    combo = cfg.combo or FAMILIES
    schedule = build_schedule(cfg.clip_frames, cfg.interval, combo, int(rng.integers(2 ** 63)))
    return degrade_video(clean, schedule).astype(np.float32), clean


Sampler = Callable[[np.random.Generator], tuple[np.ndarray, np.ndarray]]


@dataclass
class TrainResult:
    params: ParamStore
    losses: list[float]
    lrs: list[float]
    optim: OptimState


def train(params: ParamStore, cfg: TrainConfig, sampler: Sampler | None = None,
          dataset: Sequence[np.ndarray] | None = None, out_dir: str | Path | None = None) -> TrainResult:
    """sample -> forward -> Charbonnier -> backward -> Adam, with cosine lr.

    Writes ``loss.csv`` and ``checkpoint.lvnt`` into ``out_dir`` when given.
    A non-finite loss stops training with the last good parameters saved.
    """
    if sampler is None:
        if dataset is None:
            raise ValueError("train() needs a sampler or a dataset")
        sampler = lambda rng: sample_clip(dataset, cfg, rng)  # noqa: E731
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.lvnt" if out is not None else None
    params.requires_grad_(True)
    optim = OptimState()
    losses: list[float] = []
    lrs: list[float] = []

    csv_fh = open(out / "loss.csv", "w", newline="") if out is not None else None
    writer = csv.writer(csv_fh) if csv_fh else None
    if writer:
        writer.writerow(["iter", "lr", "loss"])
    try:
        for it in range(cfg.total_iters):
            lr = cosine_lr(it, cfg)
            params.zero_grad()
            total = 0.0
            for _ in range(cfg.batch):
                degraded, clean = sampler(rng)
                pred = lavernet_forward_batched(Tensor(degraded.astype(params.dtype, copy=False)), params)
                loss = charbonnier(pred, clean.astype(params.dtype, copy=False), cfg.loss_eps)
                if cfg.batch > 1:
                    loss = loss * (1.0 / cfg.batch)
                value = loss.item()
                if not math.isfinite(value):
                    if ckpt_path is not None:
                        save_checkpoint(ckpt_path, params)
                    raise TrainingDiverged(f"non-finite loss at iteration {it}")
                loss.backward()
                total += value
            adam_step(params, optim, lr)
            losses.append(total)
            lrs.append(lr)
            if writer:
                writer.writerow([it, repr(lr), repr(total)])
            if ckpt_path is not None and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0:
                save_checkpoint(ckpt_path, params)
            if it % 100 == 0:
                log.info("iter %d lr %.3g loss %.5f", it, lr, total)
    finally:
        if csv_fh:
            csv_fh.close()
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, params)
    return TrainResult(params, losses, lrs, optim)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["combo"] = list(cfg.combo)
    return d
