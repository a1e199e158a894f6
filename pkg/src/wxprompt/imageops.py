"""Deterministic 2-D resampling and degradation operators.

All resampling is separable: a per-axis weight matrix is built once and
applied as ``M_rows @ field @ M_cols.T``. Every kernel's tap weights sum
to one, so constant fields stay constant at any size. Outputs are float64.

Kernels
-------
nearest      pixel-center nearest neighbour
bilinear     two-tap triangle
bicubic      four-tap Catmull-Rom (a = -0.5), edge-clamped
box-average  block mean, integer downsample factors only

The blur operator is a periodic (wrap-around) Gaussian convolution
executed in the Fourier domain, matching the periodic boundary of the
synthetic advection worlds.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError

RESIZE_METHODS = ("nearest", "bilinear", "bicubic", "box-average")

_CUBIC_A = -0.5


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    a = _CUBIC_A
    near = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    far = a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _resample_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Weight matrix mapping ``n_in`` samples to ``n_out`` (rows sum to 1)."""
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    if method == "box-average":
        if n_out < 1 or n_in % n_out != 0:
            raise ConfigError(
                f"box-average needs an integer downsample factor, got {n_in} -> {n_out}"
            )
        f = n_in // n_out
        for i in range(n_out):
            mat[i, i * f : (i + 1) * f] = 1.0 / f
        return mat

    # Pixel-center mapping: output i samples input coordinate (i+0.5)*s-0.5.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    if method == "nearest":
        idx = np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_in - 1)
        mat[np.arange(n_out), idx] = 1.0
        return mat

    if method == "bilinear":
        i0 = np.floor(src).astype(np.int64)
        w = src - i0
        for j, weight in ((0, 1.0 - w), (1, w)):
            idx = np.clip(i0 + j, 0, n_in - 1)
            np.add.at(mat, (np.arange(n_out), idx), weight)
        return mat

    if method == "bicubic":
        i0 = np.floor(src).astype(np.int64)
        t = src - i0
        for j in (-1, 0, 1, 2):
            weight = _cubic_kernel(t - j)
            idx = np.clip(i0 + j, 0, n_in - 1)
            np.add.at(mat, (np.arange(n_out), idx), weight)
        return mat

    raise ConfigError(f"unknown resize method {method!r}, expected one of {RESIZE_METHODS}")


def resize(field: np.ndarray, out_size, method: str = "bicubic") -> np.ndarray:
    """Resample a 2-D field to ``out_size`` (int or (rows, cols))."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ShapeError(f"resize expects a 2-D field, got shape {field.shape}")
    if isinstance(out_size, int):
        out_size = (out_size, out_size)
    rows, cols = int(out_size[0]), int(out_size[1])
    if rows < 1 or cols < 1:
        raise ConfigError(f"resize target must be >= 1, got {(rows, cols)}")
    if method not in RESIZE_METHODS:
        raise ConfigError(f"unknown resize method {method!r}, expected one of {RESIZE_METHODS}")
    src = field.astype(np.float64, copy=True)
    if (rows, cols) == field.shape:
        return src
    m_rows = _resample_matrix(field.shape[0], rows, method)
    m_cols = _resample_matrix(field.shape[1], cols, method)
    return m_rows @ src @ m_cols.T


def _periodic_gaussian(n: int, sigma: float) -> np.ndarray:
    offsets = np.arange(n, dtype=np.float64)
    dist = np.minimum(offsets, n - offsets)
    kernel = np.exp(-0.5 * (dist / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Periodic Gaussian blur (FFT convolution with a wrap-around kernel)."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ShapeError(f"gaussian_blur expects a 2-D field, got shape {field.shape}")
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be > 0, got {sigma}")
    kernel = np.outer(
        _periodic_gaussian(field.shape[0], sigma), _periodic_gaussian(field.shape[1], sigma)
    )
    return np.fft.irfft2(np.fft.rfft2(field) * np.fft.rfft2(kernel), s=field.shape)
