import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from lavernet.frames import FrameError, list_frames, read_frames, to_uint8, write_frame, write_frames


def test_lexicographic_order(tmp_path):
    for name in ("f10.png", "f9.png", "f1.png", "notes.txt"):
        if name.endswith(".png"):
            write_frame(tmp_path / name, np.zeros((3, 4, 4)))
        else:
            (tmp_path / name).write_text("x")
    assert [p.name for p in list_frames(tmp_path)] == ["f1.png", "f10.png", "f9.png"]


def test_roundtrip_within_half_step(tmp_path):
    video = np.random.default_rng(0).random((2, 3, 9, 7))
    write_frames(tmp_path, video)
    back = read_frames(tmp_path)
    assert back.shape == video.shape and back.dtype == np.float32
    assert np.abs(back - video).max() <= 0.5 / 255 + 1e-6


@given(st.floats(-1, 2, allow_nan=False))
def test_clamp_then_round_half_up(x):
    v = to_uint8(np.array([x]))[0]
    expected = int(np.floor(min(max(x, 0.0), 1.0) * 255 + 0.5))
    assert v == expected


def test_exact_half_rounds_up():
    assert to_uint8(np.array([0.5 / 255, 2.5 / 255]))[1] == 3
    assert to_uint8(np.array([0.5 / 255]))[0] == 1


def test_mixed_resolution_names_first_offender(tmp_path):
    write_frame(tmp_path / "a.png", np.zeros((3, 8, 8)))
    write_frame(tmp_path / "b.png", np.zeros((3, 8, 8)))
    write_frame(tmp_path / "c.png", np.zeros((3, 6, 8)))
    write_frame(tmp_path / "d.png", np.zeros((3, 4, 4)))
    with pytest.raises(FrameError, match="c.png"):
        read_frames(tmp_path)


def test_greyscale_promoted_to_rgb(tmp_path):
    Image.fromarray(np.full((5, 6), 51, dtype=np.uint8)).save(tmp_path / "g.png")
    frames = read_frames(tmp_path)
    assert frames.shape == (1, 3, 5, 6)
    np.testing.assert_allclose(frames, 0.2, atol=1e-7)


def test_empty_and_missing(tmp_path):
    with pytest.raises(FrameError):
        list_frames(tmp_path)
    with pytest.raises(FrameError):
        list_frames(tmp_path / "nope")
