"""Generalized-coordinates machinery.

A signal in generalized coordinates is the stack ``[v, v', v'', ...]`` of its
value and first ``p`` temporal derivatives. Blocks are ordered by derivative,
each block holding all ``n`` channels, so the vector has length ``n * (p + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.linalg import block_diag

from .errors import BoundaryError, DimensionError, UnsupportedOrderError, ValidationError

MAX_TABULATED_ORDER = 6

# Gaussian-kernel smoothness matrix: entry (i, j) is COEFF[i, j] * s**(i + j).
_S_COEFF = np.array(
    [
        [35 / 16, 0, 35 / 8, 0, 7 / 4, 0, 1 / 6],
        [0, 35 / 4, 0, 7, 0, 1, 0],
        [35 / 8, 0, 77 / 4, 0, 19 / 2, 0, 1],
        [0, 7, 0, 8, 0, 4 / 3, 0],
        [7 / 4, 0, 19 / 2, 0, 17 / 3, 0, 2 / 3],
        [0, 1, 0, 4 / 3, 0, 4 / 15, 0],
        [1 / 6, 0, 1, 0, 2 / 3, 0, 4 / 45],
    ]
)
_S_POWER = np.add.outer(np.arange(7), np.arange(7))


@dataclass(frozen=True)
class GeneralizedVector:
    """A variable and its first ``order`` derivatives, stacked block-wise."""

    base_dim: int
    order: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.base_dim < 1 or self.order < 0:
            raise DimensionError("base_dim must be >= 1 and order >= 0")
        if values.size != self.base_dim * (self.order + 1):
            raise DimensionError(
                f"expected {self.base_dim * (self.order + 1)} values, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def block(self, k: int) -> np.ndarray:
        """The k-th temporal derivative (a length ``base_dim`` vector)."""
        if not 0 <= k <= self.order:
            raise IndexError(k)
        return self.values[k * self.base_dim:(k + 1) * self.base_dim]

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SmoothnessSpec:
    """Width ``kernel_width`` (seconds) of the Gaussian noise kernel and embedding order."""

    kernel_width: float
    order: int

    def __post_init__(self):
        if not self.kernel_width > 0:
            raise ValidationError("kernel_width must be positive")
        if self.order < 0:
            raise ValidationError("order must be non-negative")


def build_derivative_operator(base_dim: int, order: int) -> np.ndarray:
    """Block shift matrix ``D``: moves every derivative block up by one, zeroes the last."""
    if base_dim < 1 or order < 0:
        raise DimensionError("base_dim must be >= 1 and order >= 0")
    return np.kron(np.eye(order + 1, k=1), np.eye(base_dim))


def build_smoothness_matrix(spec: SmoothnessSpec) -> np.ndarray:
    """Temporal precision ``S`` of the Gaussian kernel, leading ``(p+1)x(p+1)`` block."""
    p = spec.order
    if p > MAX_TABULATED_ORDER:
        raise UnsupportedOrderError(
            f"smoothness matrix tabulated only up to order {MAX_TABULATED_ORDER}, got {p}"
        )
    full = _S_COEFF * np.power(float(spec.kernel_width), _S_POWER)
    return full[: p + 1, : p + 1].copy()


def _check_square(name, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {mat.shape}")
    return mat


def build_generalized_precision(S, sensor_prec, input_prior_prec, process_prec, S_input=None):
    """Assemble ``blkdiag(S (x) Pi_z, S_u (x) P_u, S (x) Pi_w)``.

    ``S_input`` lets the input block use a different (usually smaller) embedding
    order than outputs and states; it defaults to ``S``.
    """
    S = _check_square("S", S)
    S_u = S if S_input is None else _check_square("S_input", S_input)
    pz = _check_square("sensor_prec", sensor_prec)
    pu = _check_square("input_prior_prec", input_prior_prec)
    pw = _check_square("process_prec", process_prec)
    return block_diag(np.kron(S, pz), np.kron(S_u, pu), np.kron(S, pw))


def taylor_matrix(order: int, dt: float, offsets=None) -> np.ndarray:
    """Map from derivatives at the window centre to samples at ``offsets * dt``."""
    if offsets is None:
        offsets = window_offsets(order)
    offsets = np.asarray(offsets, dtype=float)
    k = np.arange(order + 1)
    fact = np.array([factorial(int(i)) for i in k], dtype=float)
    return np.power.outer(offsets * dt, k) / fact


def window_offsets(order: int, width: int | None = None) -> np.ndarray:
    """Integer sample offsets of the embedding window (centred, left-biased for even widths)."""
    width = order + 1 if width is None else int(width)
    if width < order + 1:
        raise ValidationError("window must hold at least order + 1 samples")
    return np.arange(width) - (width - 1) // 2


def embedding_operator(order: int, dt: float, width: int | None = None) -> np.ndarray:
    """Linear map (``(p+1) x width``) from window samples to derivative estimates."""
    T = taylor_matrix(order, dt, window_offsets(order, width))
    if T.shape[0] == T.shape[1]:
        return np.linalg.inv(T)
    return np.linalg.pinv(T)


def embed_series(samples, dt: float, center_index: int, order: int, width: int | None = None) -> GeneralizedVector:
    """Local derivative estimates of ``samples`` around ``center_index``.

    Inverts the Taylor expansion over ``width`` samples (default ``order + 1``,
    exact on polynomials of degree <= ``order``; wider windows use least squares).
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    offsets = window_offsets(order, width)
    idx = center_index + offsets
    if idx[0] < 0 or idx[-1] >= y.shape[0]:
        raise BoundaryError(
            f"window [{idx[0]}, {idx[-1]}] out of range for {y.shape[0]} samples"
        )
    E = embedding_operator(order, dt, width)
    return GeneralizedVector(y.shape[1], order, (E @ y[idx]).reshape(-1))


def embed_all(samples, dt: float, order: int, width: int | None = None):
    """Embed every admissible window at once.

    Returns ``(centers, tilde)`` where ``tilde[i]`` is the generalized vector
    (block-ordered) at sample ``centers[i]``.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n_t, n = y.shape
    offsets = window_offsets(order, width)
    lo, hi = -offsets[0], n_t - 1 - offsets[-1]
    if hi < lo:
        raise BoundaryError(f"need at least {offsets.size} samples, got {n_t}")
    centers = np.arange(lo, hi + 1)
    windows = y[centers[:, None] + offsets[None, :]]  # (n_c, w, n)
    E = embedding_operator(order, dt, width)
    tilde = np.einsum("kw,cwn->ckn", E, windows).reshape(centers.size, n * (order + 1))
    return centers, tilde


def gaussian_kernel(dt: float, kernel_width: float, truncate: float = 8.0) -> np.ndarray:
    """Unit-L2 sampled Gaussian ``exp(-t^2 / (2 s^2))`` truncated at ``+-truncate * s``.

    The cut must sit far out in the tail: high-order derivative estimates of
    the smoothed signal amplify the small jumps a short kernel leaves behind.
    """
    if kernel_width <= 0:
        return np.ones(1)
    half = int(np.floor(truncate * kernel_width / dt))
    t = np.arange(-half, half + 1) * dt
    k = np.exp(-(t**2) / (2.0 * kernel_width**2))
    return k / np.linalg.norm(k)


def generate_colored_noise(seed, n_samples: int, dt: float, kernel_width: float, std_dev, dim: int = 1) -> np.ndarray:
    """White Gaussian noise smoothed by a Gaussian kernel of width ``kernel_width``.

    The lag-``h`` autocorrelation is ``exp(-h^2 / (4 s^2))``; ``kernel_width = 0``
    gives white noise. ``std_dev`` is the marginal standard deviation (scalar or
    per channel). Returns shape ``(n_samples, dim)``.
    """
    if kernel_width < 0:
        raise ValidationError("kernel_width must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kern = gaussian_kernel(dt, kernel_width)
    pad = kern.size - 1
    white = rng.standard_normal((n_samples + pad, dim))
    if pad:
        out = np.empty((n_samples, dim))
        for j in range(dim):
            out[:, j] = np.convolve(white[:, j], kern, mode="valid")
    else:
        out = white
    return out * np.broadcast_to(np.asarray(std_dev, dtype=float), (dim,))


def temporal_shift(base_dim: int, order: int, dt: float) -> np.ndarray:
    """Taylor propagator ``expm(dt * D)`` for generalized vectors."""
    D = build_derivative_operator(1, order)
    M = np.eye(order + 1)
    term = np.eye(order + 1)
    for k in range(1, order + 1):
        term = term @ D * (dt / k)
        M = M + term
    return np.kron(M, np.eye(base_dim))
