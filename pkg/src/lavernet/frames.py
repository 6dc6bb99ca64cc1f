"""PNG frame directories <-> float clips in ``[0, 1]``.

Frames are ordered by the byte order of their filenames (no numeric-aware
sorting), so ``f10.png`` precedes ``f9.png``; zero-pad names to be safe.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image


class FrameError(ValueError):
    pass


def list_frames(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FrameError(f"{directory} is not a directory")
    paths = [p for p in directory.iterdir() if p.suffix.lower() == ".png" and p.is_file()]
    if not paths:
        raise FrameError(f"no PNG frames in {directory}")
    return sorted(paths, key=lambda p: p.name.encode("utf-8"))


def read_frame(path: str | Path) -> np.ndarray:
    """``3 x H x W`` float32 in ``[0, 1]``; grey and alpha images become RGB."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1) / 255.0)


def iter_frames(directory: str | Path) -> Iterator[tuple[Path, np.ndarray]]:
    """Yield ``(path, frame)`` in order, checking every frame matches the first."""
    shape = None
    for path in list_frames(directory):
        frame = read_frame(path)
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise FrameError(f"{path.name} is {frame.shape[2]}x{frame.shape[1]}, "
                             f"expected {shape[2]}x{shape[1]} like the first frame")
        yield path, frame


def read_frames(directory: str | Path) -> np.ndarray:
    return np.stack([f for _, f in iter_frames(directory)])


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """Clamp to ``[0, 1]`` then round half up on the 255 scale."""
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_frame(path: str | Path, frame: np.ndarray) -> None:
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise FrameError(f"expected 3 x H x W frame, got {frame.shape}")
    Image.fromarray(np.ascontiguousarray(to_uint8(frame).transpose(1, 2, 0))).save(path, format="PNG")


def frame_name(index: int) -> str:
    return f"frame_{index:05d}.png"


def write_frames(directory: str | Path, video, names: list[str] | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i, frame in enumerate(video):
        path = directory / (names[i] if names else frame_name(i))
        write_frame(path, frame)
        out.append(path)
    return out
