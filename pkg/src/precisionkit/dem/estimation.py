"""State/input estimation and free-energy evaluation in generalized coordinates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, solve_triangular

from ..errors import NumericalDegeneracyError
from ..gencoords import temporal_shift
from .model import EmbeddedData, FreeEnergyBreakdown, GenerativeModel, Operators, Posterior

COND_LIMIT = 1e13


def spd_logdet(M, name="matrix") -> float:
    """``ln|M|`` via Cholesky; raises if ``M`` is not SPD."""
    try:
        L = np.linalg.cholesky(np.asarray(M, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(f"{name} is not symmetric positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def scaled_cond(H) -> float:
    """Condition number after symmetric diagonal (Jacobi) scaling."""
    d = np.sqrt(np.abs(np.diag(H)))
    if not np.all(np.isfinite(d)) or np.any(d == 0):
        return np.inf
    return float(np.linalg.cond(H / np.outer(d, d)))


def nearest_psd(M, floor_rel=1e-10):
    """Clip the eigenvalues of symmetric ``M`` from below; returns ``(matrix, was_indefinite)``."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    floor = floor_rel * max(float(np.max(np.abs(w))), 1.0)
    if w.min() >= floor:
        return M, False
    w = np.maximum(w, floor)
    return (V * w) @ V.T, True


@dataclass
class StateEstimate:
    """Per-step generalized state/input means with their shared conditional covariance."""

    centers: np.ndarray
    X: np.ndarray
    Sigma_X: np.ndarray
    nx: int
    warnings: list = field(default_factory=list)

    @property
    def x_tilde(self):
        return self.X[:, : self.nx]

    @property
    def u_tilde(self):
        return self.X[:, self.nx:]


class FreeEnergyEvaluator:
    """Free energy of a fixed data set as a function of ``theta`` and ``lambda``.

    States are always at their conditional optimum given ``(theta, lambda)``
    (the problem is linear-Gaussian in the states), and every covariance is at
    its Laplace value, so the total is a deterministic function of the means.
    """

    def __init__(self, model: GenerativeModel, data: EmbeddedData):
        self.model = model
        self.data = data
        self.ops = Operators(model)
        self.R = self.ops.offset(data)
        self.n_t = data.n_t
        ops = self.ops
        Sz = np.kron(model.S(), model.sensor_shape)
        Sw = np.kron(model.S(model.p - 1), model.process_shape)
        Su = np.kron(model.S(model.d), model.P_u)
        self.Mz = block_diag(Sz, np.zeros((ops.nu, ops.nu)), np.zeros((ops.nw, ops.nw)))
        self.Mw = block_diag(np.zeros((ops.ny, ops.ny)), np.zeros((ops.nu, ops.nu)), Sw)
        self.Pu_block = block_diag(np.zeros((ops.ny, ops.ny)), Su, np.zeros((ops.nw, ops.nw)))
        self.logdet_Sz = spd_logdet(Sz, "S (x) sensor_shape")
        self.logdet_Sw = spd_logdet(Sw, "S (x) process_shape")
        self.logdet_Su = spd_logdet(Su, "S (x) P_u")
        self.logdet_Ptheta = spd_logdet(model.P_theta, "P_theta")
        self.logdet_Plambda = spd_logdet(model.P_lambda, "P_lambda")

    # -- building blocks -------------------------------------------------
    def precision(self, lam):
        return np.exp(lam[0]) * self.Mz + self.Pu_block + np.exp(lam[1]) * self.Mw

    def noise_logdet(self, lam):
        ops = self.ops
        return self.logdet_Sz + ops.ny * lam[0] + self.logdet_Su + self.logdet_Sw + ops.nw * lam[1]

    def curvature(self, theta, lam):
        """State curvature ``H = J' Pi J`` (the conditional precision of ``X``)."""
        J = self.ops.J(theta)
        Pi = self.precision(lam)
        return J, Pi, J.T @ Pi @ J

    def solve_states(self, theta, lam, log=None):
        J, Pi, H = self.curvature(theta, lam)
        H = 0.5 * (H + H.T)
        cond = scaled_cond(H)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            ridge = 1e-9 * np.trace(H) / H.shape[0]
            msg = f"singular state curvature (cond={cond:.3g}); regularized with ridge {ridge:.3g}"
            if log is not None:
                log.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            H = H + ridge * np.eye(H.shape[0])
        cf = cho_factor(H)
        rhs = (self.R @ Pi @ J).T  # (nX, n_t)
        X = -cho_solve(cf, rhs).T
        return X, J, Pi, H

    # -- derivatives -------------------------------------------------------
    def theta_derivatives(self, theta, lam, X, J=None, Pi=None, H=None, with_collapsed=False):
        """Gradient and Hessian of the free energy in ``theta`` with the state means held fixed.

        With ``with_collapsed`` also returns the Hessian of the free energy
        along the path where the state means stay at their optimum, which is
        the better Newton model for the parameter update.
        """
        model, ops = self.model, self.ops
        if J is None:
            J, Pi, H = self.curvature(theta, lam)
        E = self.R + X @ J.T
        n_t, k = X.shape[0], ops.K.shape[0]
        # G[t] = d eps_t / d theta, stacked as (n_t * ne, k)
        G = (ops.K.reshape(k * ops.ne, ops.nX) @ X.T).reshape(k, ops.ne, n_t).transpose(2, 1, 0)
        PiG = np.matmul(Pi, G)
        g = -np.einsum("tek,te->k", PiG, E, optimize=True)
        hess = -G.reshape(-1, k).T @ PiG.reshape(-1, k)
        # -1/2 n_t ln|H(theta)|
        Hinv = np.linalg.inv(H)
        PiJ = Pi @ J
        KPiJ = np.matmul(ops.K.transpose(0, 2, 1), PiJ)  # K_i' Pi J
        Hi = KPiJ + KPiJ.transpose(0, 2, 1)
        Mi = np.matmul(Hinv, Hi)
        g += -0.5 * self.n_t * np.trace(Mi, axis1=1, axis2=2)
        PiK = np.matmul(Pi, ops.K).transpose(1, 0, 2).reshape(ops.ne, -1)  # (ne, k*nX)
        KHinv = np.matmul(ops.K, Hinv)  # (k, ne, nX): K_i H^-1
        # tr(H^-1 K_i' Pi K_j) = sum_{e,a} (K_i H^-1)[e,a] (Pi K_j)[e,a]
        tr_Hij = 2.0 * KHinv.reshape(k, -1) @ PiK.reshape(ops.ne, k, ops.nX).transpose(1, 0, 2).reshape(k, -1).T
        tr_MiMj = np.einsum("kab,lba->kl", Mi, Mi, optimize=True)
        hess += -0.5 * self.n_t * (tr_Hij - tr_MiMj)
        eps_th = theta - model.eta_theta
        g -= model.P_theta @ eps_th
        hess -= model.P_theta
        hess = 0.5 * (hess + hess.T)
        if not with_collapsed:
            return g, hess
        # curvature once the states follow theta: h_tt + sum_t C_t' H^-1 C_t,
        # C_t = d^2(-PE)/dX dtheta = K_i' Pi eps_t + J' Pi G_t[:, i]
        PiE = E @ Pi
        C = np.einsum("kex,te->txk", ops.K, PiE, optimize=True) + np.matmul(PiJ.T, G)
        L = np.linalg.cholesky(H)
        W = solve_triangular(L, C.transpose(1, 0, 2).reshape(ops.nX, -1), lower=True)
        W = W.reshape(-1, k)
        collapsed = hess + W.T @ W
        return g, hess, 0.5 * (collapsed + collapsed.T)

    def lambda_derivatives(self, theta, lam, X, J=None, Pi=None, H=None):
        """Gradient and Hessian of the free energy in ``lambda`` with the state means held fixed."""
        model, ops = self.model, self.ops
        if J is None:
            J, Pi, H = self.curvature(theta, lam)
        E = self.R + X @ J.T
        ez, ew = np.exp(lam[0]), np.exp(lam[1])
        qz = np.einsum("te,ef,tf->", E, self.Mz, E)
        qw = np.einsum("te,ef,tf->", E, self.Mw, E)
        Hinv = np.linalg.inv(H)
        Bz = Hinv @ (J.T @ self.Mz @ J)
        Bw = Hinv @ (J.T @ self.Mw @ J)
        tz, tw = np.trace(Bz), np.trace(Bw)
        n_t = self.n_t
        eps_l = lam - model.eta_lambda
        prior_g = model.P_lambda @ eps_l
        g = np.array([
            -0.5 * ez * qz - 0.5 * n_t * ez * tz + 0.5 * n_t * ops.ny,
            -0.5 * ew * qw - 0.5 * n_t * ew * tw + 0.5 * n_t * ops.nw,
        ]) - prior_g
        hzz = -0.5 * ez * qz - 0.5 * n_t * (ez * tz - ez * ez * np.trace(Bz @ Bz))
        hww = -0.5 * ew * qw - 0.5 * n_t * (ew * tw - ew * ew * np.trace(Bw @ Bw))
        hzw = 0.5 * n_t * ez * ew * np.trace(Bz @ Bw)
        hess = np.array([[hzz, hzw], [hzw, hww]]) - model.P_lambda
        return g, hess

    # -- full evaluation ---------------------------------------------------
    def evaluate(self, theta, lam, log=None):
        """Everything at ``(theta, lambda)``: posterior, breakdown, search directions."""
        theta = np.asarray(theta, dtype=float)
        lam = np.asarray(lam, dtype=float)
        X, J, Pi, H = self.solve_states(theta, lam, log)
        g_th, h_th, h_col = self.theta_derivatives(theta, lam, X, J, Pi, H, with_collapsed=True)
        g_la, h_la = self.lambda_derivatives(theta, lam, X, J, Pi, H)
        Pi_theta, indef_th = nearest_psd(-h_th)
        Pi_lambda, indef_la = nearest_psd(-h_la)
        post = Posterior(
            centers=self.data.centers, X=X, Sigma_X=np.linalg.inv(H), theta=theta.copy(),
            Pi_theta=Pi_theta, lam=lam.copy(), Pi_lambda=Pi_lambda, nx=self.ops.nx,
        )
        fe = self.breakdown(post, Pi=Pi, J=J, H=H)
        newton_theta, _ = nearest_psd(-h_col)
        return EvalPoint(post, fe, g_th, Pi_theta, indef_th, g_la, Pi_lambda, indef_la, newton_theta)

    def breakdown(self, post: Posterior, Pi=None, J=None, H=None) -> FreeEnergyBreakdown:
        model, ops = self.model, self.ops
        theta, lam = post.theta, post.lam
        if Pi is None:
            Pi = self.precision(lam)
            J = ops.J(theta)
        E = self.R + post.X @ J.T
        wy = -0.5 * np.einsum("te,ef,tf->", E[:, ops.ys], Pi[ops.ys, ops.ys], E[:, ops.ys])
        wu = -0.5 * np.einsum("te,ef,tf->", E[:, ops.us], Pi[ops.us, ops.us], E[:, ops.us])
        wx = -0.5 * np.einsum("te,ef,tf->", E[:, ops.xs], Pi[ops.xs, ops.xs], E[:, ops.xs])
        e_th = theta - model.eta_theta
        e_la = lam - model.eta_lambda
        if H is not None:
            state_ent = -0.5 * self.n_t * spd_logdet(H, "state curvature")
        else:
            state_ent = 0.5 * self.n_t * spd_logdet(post.Sigma_X, "Sigma_X")
        return FreeEnergyBreakdown(
            weighted_pe_y=wy,
            weighted_pe_u=wu,
            weighted_pe_x=wx,
            param_pe=-0.5 * e_th @ model.P_theta @ e_th,
            hyper_pe=-0.5 * e_la @ model.P_lambda @ e_la,
            state_entropy=state_ent,
            noise_entropy=0.5 * self.n_t * self.noise_logdet(lam),
            param_entropy=0.5 * (self.logdet_Ptheta - spd_logdet(post.Pi_theta, "Pi_theta")),
            hyper_entropy=0.5 * (self.logdet_Plambda - spd_logdet(post.Pi_lambda, "Pi_lambda")),
        )


@dataclass
class EvalPoint:
    posterior: Posterior
    fe: FreeEnergyBreakdown
    grad_theta: np.ndarray
    Pi_theta: np.ndarray
    theta_indefinite: bool
    grad_lambda: np.ndarray
    Pi_lambda: np.ndarray
    lambda_indefinite: bool
    newton_theta: np.ndarray = None

    @property
    def F(self):
        return self.fe.total


def free_energy(model: GenerativeModel, posterior: Posterior, data: EmbeddedData) -> FreeEnergyBreakdown:
    """Evaluate every term of the time-integrated free energy for a given posterior.

    Uses the posterior's own ``Sigma_X``, ``Pi_theta`` and ``Pi_lambda`` for the
    entropy terms; non-SPD covariances raise :class:`NumericalDegeneracyError`.
    """
    if posterior.X.shape[0] != data.n_t:
        from ..errors import DimensionError
        raise DimensionError(f"posterior has {posterior.X.shape[0]} steps, data has {data.n_t}")
    return FreeEnergyEvaluator(model, data).breakdown(posterior)


def estimate_states(model: GenerativeModel, data: EmbeddedData, theta=None, lam=None,
                    warm_start: bool = True, max_iter: int = 10, tol: float = 1e-10) -> StateEstimate:
    """Maximize ``-1/2 eps' Pi eps`` over ``X = [x~; u~]`` at every embedded step.

    Damped Gauss-Newton, warm-started from the previous step's estimate pushed
    forward by the Taylor shift ``expm(dt D)``. The problem is quadratic in
    ``X`` so the first full step already lands on the optimum; the loop only
    confirms it. ``Sigma_X`` is the inverse curvature.
    """
    theta = model.eta_theta if theta is None else np.asarray(theta, dtype=float)
    lam = model.eta_lambda if lam is None else np.asarray(lam, dtype=float)
    ev = FreeEnergyEvaluator(model, data)
    ops = ev.ops
    log = []
    J, Pi, H = ev.curvature(theta, lam)
    H = 0.5 * (H + H.T)
    cond = scaled_cond(H)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        ridge = 1e-9 * np.trace(H) / H.shape[0]
        log.append(f"singular state curvature (cond={cond:.3g}); regularized with ridge {ridge:.3g}")
        H = H + ridge * np.eye(H.shape[0])
    cf = cho_factor(H)
    JtPi = J.T @ Pi
    shift = block_diag(temporal_shift(model.n, model.p, data.dt), temporal_shift(model.r, model.d, data.dt))
    X = np.zeros((data.n_t, ops.nX))
    prev = None
    for t in range(data.n_t):
        r_t = ev.R[t]
        if warm_start and prev is not None:
            steps = data.centers[t] - data.centers[t - 1]
            x = np.linalg.matrix_power(shift, int(steps)) @ prev
        else:
            x = np.zeros(ops.nX)
        eps = r_t + J @ x
        obj = -0.5 * eps @ Pi @ eps
        for _ in range(max_iter):
            step = -cho_solve(cf, JtPi @ eps)
            if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(x)):
                break
            alpha = 1.0
            while True:
                cand = x + alpha * step
                eps_c = r_t + J @ cand
                obj_c = -0.5 * eps_c @ Pi @ eps_c
                if obj_c >= obj or alpha < 1e-8:
                    break
                alpha *= 0.5
            x, eps, obj = cand, eps_c, obj_c
        X[t] = x
        prev = x
    return StateEstimate(data.centers, X, np.linalg.inv(H), ops.nx, log)
