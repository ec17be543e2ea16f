"""Linear state-space plants, ground-truth simulation and the spring-damper benchmark."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, ValidationError
from .gencoords import generate_colored_noise


def _is_spd(M):
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class StateSpaceModel:
    """``x' = A x + B u + w``, ``y = C x + z`` with noise precisions ``Pi_w``, ``Pi_z``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    process_noise_prec: np.ndarray = None
    sensor_noise_prec: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        pw = np.eye(n) if self.process_noise_prec is None else np.atleast_2d(np.asarray(self.process_noise_prec, dtype=float))
        pz = np.eye(C.shape[0]) if self.sensor_noise_prec is None else np.atleast_2d(np.asarray(self.sensor_noise_prec, dtype=float))
        if pw.shape != (n, n) or pz.shape != (C.shape[0],) * 2:
            raise DimensionError("noise precision shapes do not match the state/output sizes")
        if not (_is_spd(pw) and _is_spd(pz)):
            raise ValidationError("noise precisions must be symmetric positive definite")
        for name, val in (("A", A), ("B", B), ("C", C), ("process_noise_prec", pw), ("sensor_noise_prec", pz)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def theta(self) -> np.ndarray:
        """Vectorized plant entries ``[vec(A), vec(B), vec(C)]`` (row-major)."""
        return np.concatenate([self.A.ravel(), self.B.ravel(), self.C.ravel()])

    def with_theta(self, theta) -> "StateSpaceModel":
        A, B, C = unpack_theta(theta, self.n, self.r, self.m)
        return StateSpaceModel(A, B, C, self.process_noise_prec, self.sensor_noise_prec)


def unpack_theta(theta, n, r, m):
    theta = np.asarray(theta, dtype=float)
    if theta.size != n * n + n * r + m * n:
        raise DimensionError(f"theta has {theta.size} entries, expected {n * n + n * r + m * n}")
    A = theta[: n * n].reshape(n, n)
    B = theta[n * n: n * n + n * r].reshape(n, r)
    C = theta[n * n + n * r:].reshape(m, n)
    return A, B, C


def make_mass_spring_damper(m: float, k: float, b: float) -> StateSpaceModel:
    """Mass ``m`` on a spring ``k`` with damper ``b``; state ``[x, x']``, output ``x``."""
    if not m > 0:
        raise ValidationError("mass must be positive")
    if k < 0 or b < 0:
        raise ValidationError("stiffness and damping must be non-negative")
    A = np.array([[0.0, 1.0], [-k / m, -b / m]])
    B = np.array([[0.0], [1.0 / m]])
    C = np.array([[1.0, 0.0]])
    return StateSpaceModel(A, B, C)


def gaussian_bump_input(t):
    """Force ``exp(-0.25 (t - 12)^2)``."""
    return np.exp(-0.25 * (np.asarray(t, dtype=float) - 12.0) ** 2)


@dataclass(frozen=True)
class NoiseSpec:
    """Colored-noise settings: kernel width ``s`` and marginal standard deviations.

    ``process_rows`` restricts process noise to the listed state rows
    (``None`` drives every row).
    """

    kernel_width: float = 0.5
    sigma_w: float = 0.0
    sigma_z: float = 0.0
    process_rows: tuple | None = None


@dataclass
class Trajectory:
    dt: float
    t: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    process_noise: np.ndarray
    sensor_noise: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def to_csv(self, path, header_lines=()):
        """Write ``t, x..., y..., u...`` with optional ``# key=value`` header lines."""
        n, m, r = self.states.shape[1], self.outputs.shape[1], self.inputs.shape[1]
        cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(r)]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            data = np.column_stack([self.t, self.states, self.outputs, self.inputs])
            for row in data:
                writer.writerow([repr(float(v)) for v in row])


def _eval_input(input_fn, times, r):
    u = np.asarray(input_fn(times), dtype=float)
    if u.shape == times.shape and r == 1:
        return u[:, None]
    if u.shape == (times.size, r):
        return u
    # not vectorized: fall back to pointwise evaluation
    return np.array([np.asarray(input_fn(ti), dtype=float).reshape(r) for ti in times])


def simulate(model: StateSpaceModel, input_fn: Callable | None, dt: float, duration: float,
             noise: NoiseSpec = NoiseSpec(), seed=0) -> Trajectory:
    """Fixed-step RK4 integration from ``x(0) = 0`` with colored process and sensor noise.

    Process noise is a sampled colored signal, linearly interpolated inside each
    step; sensor noise is added to the sampled outputs.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if duration < dt:
        raise ValidationError("duration must be at least dt")
    n, r, m = model.n, model.r, model.m
    n_t = int(round(duration / dt)) + 1
    t = np.arange(n_t) * dt
    half_t = np.arange(2 * n_t - 1) * (dt / 2)
    if input_fn is None:
        u_half = np.zeros((half_t.size, r))
    else:
        u_half = _eval_input(input_fn, half_t, r)

    ss = np.random.SeedSequence(seed)
    w_seq, z_seq = ss.spawn(2)
    w = np.zeros((n_t, n))
    if noise.sigma_w > 0:
        rows = list(range(n)) if noise.process_rows is None else list(noise.process_rows)
        w[:, rows] = generate_colored_noise(np.random.default_rng(w_seq), n_t, dt, noise.kernel_width, noise.sigma_w, len(rows))
    z = np.zeros((n_t, m))
    if noise.sigma_z > 0:
        z = generate_colored_noise(np.random.default_rng(z_seq), n_t, dt, noise.kernel_width, noise.sigma_z, m)

    A, B = model.A, model.B
    x = np.zeros((n_t, n))
    for k in range(n_t - 1):
        xk = x[k]
        w0, w1 = w[k], w[k + 1]
        wm = 0.5 * (w0 + w1)
        u0, um, u1 = u_half[2 * k], u_half[2 * k + 1], u_half[2 * k + 2]
        k1 = A @ xk + B @ u0 + w0
        k2 = A @ (xk + 0.5 * dt * k1) + B @ um + wm
        k3 = A @ (xk + 0.5 * dt * k2) + B @ um + wm
        k4 = A @ (xk + dt * k3) + B @ u1 + w1
        x[k + 1] = xk + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    y = x @ model.C.T + z
    return Trajectory(dt=dt, t=t, states=x, outputs=y, inputs=u_half[::2].copy(),
                      process_noise=w, sensor_noise=z,
                      meta={"dt": dt, "duration": duration, "s": noise.kernel_width,
                            "sigma_w": noise.sigma_w, "sigma_z": noise.sigma_z, "seed": seed})
