"""Finite-difference validation of the full recurrent model's backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import charbonnier
from .model import ModelConfig, ParamStore, init_params, lavernet_forward
from .tensor import Tensor, no_grad

GRADCHECK_CONFIG = ModelConfig(channels=8, heads=2)
REL_ERR_FLOOR = 1e-7


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str
    checked: int
    entries: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float, floor: float = REL_ERR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _perturbed_params(config: ModelConfig, seed: int) -> ParamStore:
    # Jitter every tensor off its init so zero biases and unit norms are exercised too.
    store = init_params(config, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for t in store.values():
        t.data = t.data + 0.05 * rng.standard_normal(t.shape)
    return store


def _problem(config: ModelConfig, seed: int, frames: int, size: int):
    rng = np.random.default_rng(seed + 2)
    video = rng.random((frames, config.in_channels, size, size))
    target = np.clip(video + 0.1 * rng.standard_normal(video.shape), 0.0, 1.0)
    return video, target


def gradcheck(config: ModelConfig = GRADCHECK_CONFIG, seed: int = 0, frames: int = 2, size: int = 16,
              samples: int = 50, h: float = 1e-5, per_tensor: bool = True,
              steps: tuple[float, ...] | None = None) -> GradcheckReport | dict[float, GradcheckReport]:
    """Compare backward() with central differences on sampled scalar parameters.

    Samples ``samples`` random entries plus, with ``per_tensor``, one entry
    of every parameter tensor. Passing ``steps`` evaluates the same
    entries at each step size and returns one report per step.
    """
    params = _perturbed_params(config, seed)
    video, target = _problem(config, seed, frames, size)
    x = Tensor(video)

    def loss_value() -> float:
        with no_grad():
            return charbonnier(lavernet_forward(x, params), target).item()

    params.zero_grad()
    charbonnier(lavernet_forward(x, params), target).backward()

    rng = np.random.default_rng(seed + 3)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    picks: list[tuple[str, int]] = []
    if per_tensor:
        picks += [(n, int(rng.integers(params[n].size))) for n in names]
    flat = rng.choice(int(sizes.sum()), size=samples, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((names[i], int(f - offsets[i])))

    reports = {}
    for step in (steps or (h,)):
        entries = []
        for name, idx in picks:
            t = params[name]
            flat_data = t.data.reshape(-1)
            orig = flat_data[idx]
            flat_data[idx] = orig + step
            up = loss_value()
            flat_data[idx] = orig - step
            down = loss_value()
            flat_data[idx] = orig
            numeric = (up - down) / (2 * step)
            analytic = float(t.grad.reshape(-1)[idx])
            entries.append((name, idx, analytic, numeric, relative_error(analytic, numeric)))
        worst = max(entries, key=lambda e: e[4])
        reports[step] = GradcheckReport(worst[4], f"{worst[0]}[{worst[1]}]", len(entries), entries)
    return reports if steps else reports[h]


SWEEP_STEPS = (1e-5, 1e-6, 1e-7, 1e-8, 1e-9)
NOISE_FLOOR = 1e-6


@dataclass
class SweepReport:
    worst_best_rel: float
    worst_param: str
    resolved: int
    skipped: int
    per_step_worst: dict[float, float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst_best_rel < tol


def step_sweep(config: ModelConfig = GRADCHECK_CONFIG, seed: int = 0,
               steps: tuple[float, ...] = SWEEP_STEPS, **kwargs) -> SweepReport:
    """Best agreement per entry over a ladder of central-difference steps.

    Separates backward-pass errors (no step agrees) from truncation error
    of a strongly curved loss (a smaller step agrees). Entries whose
    gradient is below ``NOISE_FLOOR`` times the largest sampled gradient
    are skipped: their finite differences are pure rounding noise.
    """
    reports = gradcheck(config, seed, steps=steps, **kwargs)
    first = reports[steps[0]].entries
    scale = max(abs(e[2]) for e in first)
    best, skipped = [], 0
    for j, entry in enumerate(first):
        if abs(entry[2]) < NOISE_FLOOR * scale:
            skipped += 1
            continue
        best.append((min(r.entries[j][4] for r in reports.values()), f"{entry[0]}[{entry[1]}]"))
    worst = max(best)
    return SweepReport(worst[0], worst[1], len(best), skipped,
                       {h: r.max_rel_error for h, r in reports.items()})
