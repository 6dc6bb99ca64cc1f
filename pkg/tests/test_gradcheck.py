import numpy as np
import pytest

from lavernet import functional as F
from lavernet.gradcheck import GRADCHECK_CONFIG, gradcheck, relative_error, step_sweep


@pytest.fixture(scope="module")
def two_steps():
    return gradcheck(GRADCHECK_CONFIG, seed=0, steps=(1e-4, 1e-5))


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_config_is_small_float64_model():
    assert (GRADCHECK_CONFIG.channels, GRADCHECK_CONFIG.heads) == (8, 2)


def test_full_model_certificate_at_1e5(two_steps):
    report = two_steps[1e-5]
    assert report.checked >= 50
    assert report.max_rel_error < 1e-4, f"worst {report.max_rel_error:.3e} at {report.worst_param}"


def test_richardson_error_shrinks_quadratically(two_steps):
    err = {h: np.median([abs(e[2] - e[3]) for e in r.entries]) for h, r in two_steps.items()}
    ratio = err[1e-4] / err[1e-5]
    assert 30 <= ratio <= 300, f"median abs error ratio {ratio:.1f} for a 10x step change"


def test_step_sweep_reconciles_every_entry():
    report = step_sweep(GRADCHECK_CONFIG, seed=0)
    assert report.resolved >= 50
    assert report.passed(), f"{report.worst_param} never agrees better than {report.worst_best_rel:.3e}"


@pytest.mark.parametrize("target,corrupt", [
    ("_leaky_relu_backward", lambda g, positive, slope: g),
    ("_sigmoid_backward", lambda g, y: g * y),
    ("_softmax_backward", lambda g, y: g * y),
])
def test_mutation_control_is_caught(monkeypatch, target, corrupt):
    monkeypatch.setattr(F, target, corrupt)
    assert gradcheck(GRADCHECK_CONFIG, seed=0).max_rel_error > 1e-2


def test_mutation_control_fails_step_sweep(monkeypatch):
    monkeypatch.setattr(F, "_leaky_relu_backward", lambda g, positive, slope: g)
    assert step_sweep(GRADCHECK_CONFIG, seed=0).worst_best_rel > 1e-2
