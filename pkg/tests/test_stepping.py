import numpy as np
import pytest

from abimhd.dmhd import DmhdState, dmhd_run
from abimhd.fields import ScalarField, VectorField3
from abimhd.stepping import BlowUpError, check_blowup, rk4_step


def test_rk4_exact_on_linear_system():
    # dy/dt = A y has RK4 error O(dt^5) per step
    A = np.array([[0.0, 1.0], [-4.0, 0.0]])
    y = (np.array([1.0, 0.0]),)
    dt = 1e-3
    for _ in range(1000):
        y = rk4_step(y, dt, lambda s: (A @ s[0],))
    t = 1.0
    exact = np.array([np.cos(2 * t), -2 * np.sin(2 * t)])
    assert np.abs(y[0] - exact).max() < 1e-10


def test_check_blowup_raises_past_threshold():
    check_blowup(9.0, 1.0)
    with pytest.raises(BlowUpError, match="sup norm"):
        check_blowup(11.0, 1.0, factor=10.0, context="unit")


def test_run_detects_blowup(grid16, monkeypatch):
    # force the detector by shrinking the threshold: a genuinely smooth run
    # trips it immediately once the factor is tiny
    h0 = ScalarField.from_function(
        grid16, lambda x, y, z: 1.0 + 0.2 * np.cos(2 * np.pi * x))
    B0 = VectorField3.from_function(
        grid16, lambda x, y, z: (0 * x, 0.3 * np.sin(2 * np.pi * x), 0 * x))
    s0 = DmhdState(h0, B0)
    with pytest.raises(BlowUpError):
        dmhd_run(s0, 1e-6, 3, blowup_factor=1e-6)
