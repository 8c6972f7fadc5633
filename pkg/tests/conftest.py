import numpy as np
import pytest

from abimhd.fields import GridSpec, ScalarField, VectorField3


@pytest.fixture
def grid16():
    return GridSpec(16)


@pytest.fixture
def grid32():
    return GridSpec(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def single_mode_pair(grid, amp_h=0.2, amp_B=0.3):
    """Smooth single-mode (h0, B0) with B0 divergence-free."""
    h0 = ScalarField.from_function(
        grid, lambda x, y, z: 1.0 + amp_h * np.cos(2 * np.pi * x))
    B0 = VectorField3.from_function(
        grid, lambda x, y, z: (0 * x, amp_B * np.sin(2 * np.pi * x), 0 * x))
    return h0, B0


# ----------------------------------------------------------------------
# Independent oracles (finite differences, refined grids, naive sums).
# ----------------------------------------------------------------------

def fd_deriv(values, axis, spacing):
    """Second-order centered difference with periodic wrap."""
    return (np.roll(values, -1, axis=axis)
            - np.roll(values, 1, axis=axis)) / (2.0 * spacing)


def fd_grad(grid, values):
    dx = grid.spacing
    return np.stack([fd_deriv(values, a, dx) for a in range(3)])


def fd_div(grid, vec):
    dx = grid.spacing
    return (fd_deriv(vec[0], 0, dx) + fd_deriv(vec[1], 1, dx)
            + fd_deriv(vec[2], 2, dx))


def fd_curl(grid, vec):
    dx = grid.spacing
    return np.stack([
        fd_deriv(vec[2], 1, dx) - fd_deriv(vec[1], 2, dx),
        fd_deriv(vec[0], 2, dx) - fd_deriv(vec[2], 0, dx),
        fd_deriv(vec[1], 0, dx) - fd_deriv(vec[0], 1, dx),
    ])


def refine_field(grid, values, factor=2):
    """Exact spectral upsampling of grid samples to a finer grid."""
    n = grid.n
    m = n * factor
    ah = np.fft.fftn(np.asarray(values)) / n ** 3
    out_h = np.zeros((m, m, m), dtype=complex)
    k = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    km = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    pos = {int(v): i for i, v in enumerate(km)}
    idx = np.array([pos[int(v)] for v in k])
    out_h[np.ix_(idx, idx, idx)] = ah
    # split the shared Nyquist mode evenly between +n/2 and -n/2
    ny = n // 2
    for axis in range(3):
        sl_src = [slice(None)] * 3
        sl_src[axis] = pos[-ny]
        src = out_h[tuple(sl_src)].copy()
        out_h[tuple(sl_src)] = 0.5 * src
        sl_dst = [slice(None)] * 3
        sl_dst[axis] = pos[ny] if ny in pos else pos[-ny]
        out_h[tuple(sl_dst)] += 0.5 * src
    return np.real(np.fft.ifftn(out_h * m ** 3))


def naive_trig_eval(grid, values, points):
    """Direct term-by-term mode summation, independent of eval_at's path."""
    n = grid.n
    ch = np.fft.fftn(np.asarray(values)) / n ** 3
    k = np.fft.fftfreq(n, d=1.0 / n)
    out = np.zeros(len(points), dtype=complex)
    for i, ki in enumerate(k):
        for j, kj in enumerate(k):
            for l, kl in enumerate(k):
                c = ch[i, j, l]
                if c == 0:
                    continue
                out += c * np.exp(2j * np.pi * (ki * points[:, 0]
                                                + kj * points[:, 1]
                                                + kl * points[:, 2]))
    return out.real
