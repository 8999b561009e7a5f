"""Small numerical kernels: finite-difference weights, periodic spectral
calculus on uniform grids and trigonometric interpolation."""
from __future__ import annotations

import numpy as np


def fd_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``.

    Fornberg's recursion; ``nodes`` may be arbitrarily spaced.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def diff_matrix(grid: np.ndarray, order: int = 1, width: int = 5) -> np.ndarray:
    """Dense differentiation matrix on a strictly increasing grid.

    Centered ``width``-point stencils in the interior, shifted (one-sided)
    stencils near the ends.
    """
    grid = np.asarray(grid, dtype=float)
    n = len(grid)
    width = min(width, n)
    if width <= order:
        raise ValueError("grid too short for the requested derivative")
    D = np.zeros((n, n))
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        D[i, idx] = fd_weights(grid[i], grid[idx], order)
    return D


def diff_nonuniform(values: np.ndarray, grid: np.ndarray, order: int = 1,
                    axis: int = 0, width: int = 5) -> np.ndarray:
    D = diff_matrix(grid, order, width)
    moved = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.tensordot(D, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def _wavenumbers(n: int) -> np.ndarray:
    k = np.arange(n // 2 + 1, dtype=float)
    if n % 2 == 0:
        k[-1] = 0.0  # Nyquist mode has no well-defined derivative on the grid
    return k


def periodic_derivative(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Spectral derivative of samples on a uniform grid over [0, 2pi)."""
    n = values.shape[axis]
    coef = np.fft.rfft(values, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = -1
    coef = coef * (1j * _wavenumbers(n)).reshape(shape)
    return np.fft.irfft(coef, n=n, axis=axis)


def periodic_antiderivative(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Zero-mean antiderivative of the zero-mean part of periodic samples."""
    n = values.shape[axis]
    coef = np.fft.rfft(values, axis=axis)
    k = _wavenumbers(n)
    inv = np.zeros(len(k), dtype=complex)
    nz = k > 0
    inv[nz] = 1.0 / (1j * k[nz])
    shape = [1] * values.ndim
    shape[axis] = -1
    return np.fft.irfft(coef * inv.reshape(shape), n=n, axis=axis)


def periodic_fd_derivative(values: np.ndarray, axis: int = -1, order: int = 4) -> np.ndarray:
    """Centered difference of the given (even) accuracy order on a uniform
    periodic grid."""
    if order % 2 or order < 2:
        raise ValueError("accuracy order must be a positive even integer")
    n = values.shape[axis]
    h = 2 * np.pi / n
    half = order // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    w = fd_weights(0.0, offsets, 1)
    out = np.zeros_like(values, dtype=float)
    for s, wj in zip(range(-half, half + 1), w):
        if wj != 0.0:
            out += wj * np.roll(values, -s, axis=axis)
    return out / h


class TrigInterpolant:
    """Trigonometric interpolation of rows of periodic samples.

    ``table`` has shape (rows, n); each row is sampled at 2*pi*j/n.
    """

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=float)
        self.n = table.shape[-1]
        coef = np.fft.rfft(table, axis=-1) / self.n
        weight = np.full(coef.shape[-1], 2.0)
        weight[0] = 1.0
        if self.n % 2 == 0:
            weight[-1] = 1.0
        self.coef = coef * weight
        self.k = np.arange(coef.shape[-1], dtype=float)

    def __call__(self, rows: np.ndarray, phi: np.ndarray, deriv: int = 0) -> np.ndarray:
        rows = np.asarray(rows)
        phi = np.asarray(phi, dtype=float)
        phase = np.exp(1j * phi[..., None] * self.k)
        c = self.coef[rows]
        if deriv:
            c = c * (1j * self.k) ** deriv
            if self.n % 2 == 0:
                # the Nyquist cosine is not differentiable in a symmetric way
                c[..., -1] = 0.0
        return np.real(np.sum(c * phase, axis=-1))
