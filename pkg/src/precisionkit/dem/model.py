"""Generative model, posterior containers and generalized prediction errors."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.linalg import block_diag

from ..errors import DimensionError, ValidationError
from ..gencoords import (
    SmoothnessSpec,
    build_derivative_operator,
    build_smoothness_matrix,
    embed_all,
)
from ..ltisim import StateSpaceModel, unpack_theta

KNOWN_PRIOR_PRECISION = 3.3e6


def _spd(name, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
        raise ValidationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValidationError(f"{name} must be positive definite")
    return M


def noise_precision_from_lambda(lam, n: int, m: int):
    """``(Pi_z, Pi_w) = (exp(lam_z) I_m, exp(lam_w) I_n)``."""
    lam = np.asarray(lam, dtype=float).reshape(2)
    return np.exp(lam[0]) * np.eye(m), np.exp(lam[1]) * np.eye(n)


@dataclass(frozen=True)
class GenerativeModel:
    """Priors and embedding settings for free-energy estimation of an LTI plant.

    ``eta_theta``/``P_theta`` is the prior over ``theta = [vec A, vec B, vec C]``;
    ``eta_lambda``/``P_lambda`` the prior over log noise precisions
    ``[lam_z, lam_w]``; ``P_u`` the precision of the input prior, whose mean
    series travels with the data (see :func:`embed_data`). ``free`` flags the
    unknown entries of theta. ``sensor_shape``/``process_shape`` are the fixed
    matrices scaled by ``exp(lam)``.
    """

    n: int
    r: int
    m: int
    eta_theta: np.ndarray
    P_theta: np.ndarray
    eta_lambda: np.ndarray = field(default_factory=lambda: np.zeros(2))
    P_lambda: np.ndarray = field(default_factory=lambda: np.eye(2))
    P_u: np.ndarray = None
    smoothness: SmoothnessSpec = SmoothnessSpec(0.5, 6)
    input_order: int = 2
    free: np.ndarray = None
    sensor_shape: np.ndarray = None
    process_shape: np.ndarray = None
    S_override: np.ndarray = None

    def __post_init__(self):
        nth = self.n * self.n + self.n * self.r + self.m * self.n
        eta = np.asarray(self.eta_theta, dtype=float).reshape(-1)
        if eta.size != nth:
            raise DimensionError(f"eta_theta has {eta.size} entries, expected {nth}")
        P = np.asarray(self.P_theta, dtype=float)
        if P.ndim == 1:
            P = np.diag(P)
        P = _spd("P_theta", P)
        if P.shape != (nth, nth):
            raise DimensionError("P_theta shape does not match theta")
        Pl = _spd("P_lambda", self.P_lambda)
        el = np.asarray(self.eta_lambda, dtype=float).reshape(2)
        Pu = _spd("P_u", np.eye(self.r) if self.P_u is None else self.P_u)
        free = np.ones(nth, bool) if self.free is None else np.asarray(self.free, bool).reshape(nth)
        Oz = _spd("sensor_shape", np.eye(self.m) if self.sensor_shape is None else self.sensor_shape)
        Ow = _spd("process_shape", np.eye(self.n) if self.process_shape is None else self.process_shape)
        if self.input_order < 0:
            raise ValidationError("input_order must be >= 0")
        if self.smoothness.order < 1:
            raise ValidationError("state embedding order must be >= 1")
        for name, val in (("eta_theta", eta), ("P_theta", P), ("P_lambda", Pl), ("eta_lambda", el),
                          ("P_u", Pu), ("free", free), ("sensor_shape", Oz), ("process_shape", Ow)):
            object.__setattr__(self, name, val)

    @property
    def p(self) -> int:
        return self.smoothness.order

    @property
    def d(self) -> int:
        """Effective input order (never above the state order)."""
        return min(self.input_order, self.p)

    @property
    def n_theta(self) -> int:
        return self.eta_theta.size

    def S(self, order=None) -> np.ndarray:
        order = self.p if order is None else order
        if self.S_override is not None:
            return np.asarray(self.S_override, dtype=float)[: order + 1, : order + 1]
        return build_smoothness_matrix(SmoothnessSpec(self.smoothness.kernel_width, order))

    def precision(self, lam) -> np.ndarray:
        """Generalized precision assembled from the current log precisions.

        The state equations cover derivative orders ``0..p-1`` only (the top
        one would need the unrepresented order ``p+1``), so the process block
        uses the order ``p-1`` smoothness matrix.
        """
        lam = np.asarray(lam, dtype=float)
        return block_diag(
            np.kron(self.S(), np.exp(lam[0]) * self.sensor_shape),
            np.kron(self.S(self.d), self.P_u),
            np.kron(self.S(self.p - 1), np.exp(lam[1]) * self.process_shape),
        )

    def with_prior(self, **changes) -> "GenerativeModel":
        return replace(self, **changes)

    @classmethod
    def from_plant(cls, plant: StateSpaceModel, free=None, P_free=1.0, P_known=KNOWN_PRIOR_PRECISION,
                   eta_free=None, **kw) -> "GenerativeModel":
        """Prior centred on ``plant`` with low precision on ``free`` entries and pinned elsewhere."""
        eta = plant.theta.copy()
        nth = eta.size
        free = np.zeros(nth, bool) if free is None else _as_mask(free, nth)
        if eta_free is not None:
            eta[free] = np.asarray(eta_free, dtype=float)
        P = np.where(free, P_free, P_known)
        return cls(plant.n, plant.r, plant.m, eta, P, free=free, **kw)


def _as_mask(free, nth):
    free = np.asarray(free)
    if free.dtype == bool:
        return free.reshape(nth)
    mask = np.zeros(nth, bool)
    mask[free.astype(int)] = True
    return mask


@dataclass(frozen=True)
class EmbeddedData:
    """Outputs and input-prior means embedded in generalized coordinates.

    ``centers`` index the original samples; ``y_tilde`` is ``(n_c, m(p+1))``
    and ``eta_u_tilde`` is ``(n_c, r(d+1))``.
    """

    dt: float
    centers: np.ndarray
    y_tilde: np.ndarray
    eta_u_tilde: np.ndarray

    @property
    def n_t(self) -> int:
        return self.centers.size


def embed_data(outputs, dt: float, p: int, eta_u=None, d: int = 2, r: int = 1) -> EmbeddedData:
    """Embed an output series to order ``p`` and an input-prior series to order ``min(d, p)``."""
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    d = min(d, p)
    centers, y_tilde = embed_all(y, dt, p)
    if eta_u is None:
        eta_u_tilde = np.zeros((centers.size, r * (d + 1)))
    else:
        eu = np.asarray(eta_u, dtype=float)
        if eu.ndim == 1:
            eu = eu[:, None]
        if eu.shape[0] != y.shape[0]:
            raise DimensionError("input prior series must match the output length")
        cu, eu_tilde = embed_all(eu, dt, d)
        eta_u_tilde = eu_tilde[np.searchsorted(cu, centers)]
    return EmbeddedData(dt, centers, y_tilde, eta_u_tilde)


class Operators:
    """Constant matrices of the stacked linear prediction-error map.

    For generalized states ``X = [x~; u~]`` the errors are affine,
    ``eps = r + J(theta) X`` with ``r = [y~; -eta~u; 0]``, and ``J`` is affine
    in ``theta``: ``J = J0 + sum_i theta_i K_i``.

    State-equation errors ``x^(k+1) - A x^(k) - B u^(k)`` are kept for
    ``k < p``. Closing the top order with ``x^(p+1) = 0`` instead would
    pretend the highest derivative is noise-free and drive the learned
    process precision to infinity.
    """

    def __init__(self, model: GenerativeModel):
        n, r, m, p, d = model.n, model.r, model.m, model.p, model.d
        self.n, self.r, self.m, self.p, self.d = n, r, m, p, d
        self.nx, self.nu, self.ny = n * (p + 1), r * (d + 1), m * (p + 1)
        self.nw = n * p
        self.nX = self.nx + self.nu
        self.ne = self.ny + self.nu + self.nw
        self.ys = slice(0, self.ny)
        self.us = slice(self.ny, self.ny + self.nu)
        self.xs = slice(self.ny + self.nu, self.ne)
        Ip = np.eye(p + 1)
        Iw = np.eye(p, p + 1)
        pad = np.kron(np.eye(p + 1, d + 1), np.eye(r))  # r(p+1) x r(d+1)
        self.pad = pad
        J0 = np.zeros((self.ne, self.nX))
        J0[self.us, self.nx:] = np.eye(self.nu)
        J0[self.xs, : self.nx] = build_derivative_operator(n, p)[: self.nw]
        self.J0 = J0
        K = []
        for i in range(n):
            for j in range(n):
                Kij = np.zeros((self.ne, self.nX))
                E = np.zeros((n, n))
                E[i, j] = 1.0
                Kij[self.xs, : self.nx] = -np.kron(Iw, E)
                K.append(Kij)
        for i in range(n):
            for j in range(r):
                Kij = np.zeros((self.ne, self.nX))
                E = np.zeros((n, r))
                E[i, j] = 1.0
                Kij[self.xs, self.nx:] = -np.kron(Iw, E) @ pad
                K.append(Kij)
        for i in range(m):
            for j in range(n):
                Kij = np.zeros((self.ne, self.nX))
                E = np.zeros((m, n))
                E[i, j] = 1.0
                Kij[self.ys, : self.nx] = -np.kron(Ip, E)
                K.append(Kij)
        self.K = np.array(K)  # (n_theta, ne, nX)

    def J(self, theta) -> np.ndarray:
        return self.J0 + np.tensordot(np.asarray(theta, dtype=float), self.K, axes=1)

    def offset(self, data: EmbeddedData) -> np.ndarray:
        """Rows ``r_t = [y~; -eta~u; 0]`` for every embedded time step."""
        R = np.zeros((data.n_t, self.ne))
        R[:, self.ys] = data.y_tilde
        R[:, self.us] = -data.eta_u_tilde
        return R

    def errors(self, theta, X, data: EmbeddedData) -> np.ndarray:
        return self.offset(data) + X @ self.J(theta).T

    def error_jacobian(self, X) -> np.ndarray:
        """``G_t = d eps_t / d theta`` for every step, shape ``(n_t, ne, n_theta)``."""
        return np.einsum("kex,tx->tek", self.K, X)


def prediction_errors(model: GenerativeModel, theta, x_tilde, u_tilde, y_tilde, eta_u_tilde):
    """Stacked generalized error ``[y~ - C~x~; u~ - eta~u; D x~ - A~x~ - B~u~]``.

    The state block holds derivative orders ``0..p-1``.

    Accepts single vectors or arrays with one row per time step.
    """
    ops = Operators(model)
    x_tilde = np.atleast_2d(np.asarray(x_tilde, dtype=float))
    u_tilde = np.atleast_2d(np.asarray(u_tilde, dtype=float))
    y_tilde = np.atleast_2d(np.asarray(y_tilde, dtype=float))
    eta_u_tilde = np.atleast_2d(np.asarray(eta_u_tilde, dtype=float))
    if x_tilde.shape[1] != ops.nx or u_tilde.shape[1] != ops.nu or y_tilde.shape[1] != ops.ny \
            or eta_u_tilde.shape[1] != ops.nu:
        raise DimensionError(
            f"expected widths x~={ops.nx}, u~={ops.nu}, y~={ops.ny}; got "
            f"{x_tilde.shape[1]}, {u_tilde.shape[1]}, {y_tilde.shape[1]}, {eta_u_tilde.shape[1]}"
        )
    A, B, C = unpack_theta(theta, model.n, model.r, model.m)
    Ip = np.eye(model.p + 1)
    eps_y = y_tilde - x_tilde @ np.kron(Ip, C).T
    eps_u = u_tilde - eta_u_tilde
    Dx = build_derivative_operator(model.n, model.p)
    eps_x = x_tilde @ (Dx - np.kron(Ip, A)).T - u_tilde @ (np.kron(Ip, B) @ ops.pad).T
    eps_x = eps_x[:, : ops.nw]
    out = np.hstack([eps_y, eps_u, eps_x])
    return out[0] if out.shape[0] == 1 else out


@dataclass
class FreeEnergyBreakdown:
    """Signed contributions to the time-integrated free energy; ``total`` is their sum."""

    weighted_pe_y: float
    weighted_pe_u: float
    weighted_pe_x: float
    param_pe: float
    hyper_pe: float
    state_entropy: float
    noise_entropy: float
    param_entropy: float
    hyper_entropy: float
    total: float = None

    def __post_init__(self):
        parts = [getattr(self, f.name) for f in fields(self) if f.name != "total"]
        self.total = float(np.sum(parts))

    def as_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass
class Posterior:
    """Conditional means and precisions for states/inputs, parameters and log noise precisions."""

    centers: np.ndarray
    X: np.ndarray
    Sigma_X: np.ndarray
    theta: np.ndarray
    Pi_theta: np.ndarray
    lam: np.ndarray
    Pi_lambda: np.ndarray
    nx: int
    fe_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    wall_time: float = 0.0

    @property
    def x_tilde(self):
        return self.X[:, : self.nx]

    @property
    def u_tilde(self):
        return self.X[:, self.nx:]

    @property
    def Sigma_theta(self):
        return np.linalg.inv(self.Pi_theta)

    @property
    def Sigma_lambda(self):
        return np.linalg.inv(self.Pi_lambda)

    def states(self, n):
        """Point estimates of the base states (first derivative block)."""
        return self.X[:, :n]

    def inputs(self, r):
        return self.X[:, self.nx: self.nx + r]
