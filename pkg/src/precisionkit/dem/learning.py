"""Parameter (E-step) and noise-precision (M-step) learning by free-energy ascent."""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError
from .estimation import FreeEnergyEvaluator, nearest_psd
from .model import EmbeddedData, GenerativeModel, Posterior


@dataclass(frozen=True)
class LearningSchedule:
    max_iter: int = 200
    tol: float = 1e-6
    patience: int = 3
    max_halvings: int = 30
    learn_lambda: bool = True
    # a failed line search with a predicted gain above this is reported as divergence
    divergence_gain: float = 1.0
    # largest change of any log-precision per update (trust region)
    max_lambda_step: float = 1.0
    # largest change of any parameter per update; stops a far-off start from
    # throwing the parameters across the valley, which reshuffles their precisions
    max_theta_step: float = 1.0


def _line_search(ev, point, direction, which, max_halvings, log):
    """Step-halving search along ``direction``; returns the first non-worse point or None.

    Log-precision steps must also stay on the near side of the maximum along
    the search line: a Newton step on ``n lam - q exp(lam)`` always overshoots
    from below, and the parameter precisions would then shrink back.
    """
    base_theta, base_lam = point.posterior.theta, point.posterior.lam
    alpha = 1.0
    for _ in range(max_halvings):
        if which == "theta":
            trial_theta, trial_lam = base_theta + alpha * direction, base_lam
        else:
            trial_theta, trial_lam = base_theta, base_lam + alpha * direction
        try:
            trial = ev.evaluate(trial_theta, trial_lam, log)
        except (np.linalg.LinAlgError, ArithmeticError, ValueError):
            trial = None
        if trial is not None and np.isfinite(trial.F) and trial.F >= point.F:
            if which != "lambda" or np.all(trial.grad_lambda * direction >= 0.0):
                return trial
        alpha *= 0.5
    return None


def _newton_direction(grad, N, cap=None):
    d = np.linalg.solve(N, grad)
    if cap is not None:
        biggest = np.max(np.abs(d))
        if biggest > cap:
            d = d * (cap / biggest)
    return d


def learn_parameters(model: GenerativeModel, data: EmbeddedData, schedule: LearningSchedule = LearningSchedule(),
                     theta0=None, lam0=None) -> Posterior:
    """Alternate parameter and log-precision updates until the free energy settles.

    Each iteration takes a Newton step on ``theta`` (skipped when no entry is
    free) and one on ``lambda``, each guarded by a step-halving line search so
    the recorded free energy never decreases. States are re-estimated at every
    trial point. Stops after ``patience`` consecutive iterations with
    ``|dF| < tol`` or at ``max_iter``.
    """
    t0 = time.perf_counter()
    ev = FreeEnergyEvaluator(model, data)
    log = []
    theta = model.eta_theta.copy() if theta0 is None else np.asarray(theta0, dtype=float).copy()
    lam = model.eta_lambda.copy() if lam0 is None else np.asarray(lam0, dtype=float).copy()
    point = ev.evaluate(theta, lam, log)
    learn_theta = bool(np.any(model.free))
    trace = [point.F]
    history = [_record(0, point)]
    quiet = 0
    converged = False
    it = 0
    for it in range(1, schedule.max_iter + 1):
        F_prev = point.F
        stalled = []
        steps = (["theta"] if learn_theta else []) + (["lambda"] if schedule.learn_lambda else [])
        for which in steps:
            if which == "theta":
                if point.theta_indefinite:
                    log.append(f"iter {it}: indefinite theta curvature projected to nearest PSD")
                direction = _newton_direction(point.grad_theta, point.newton_theta, schedule.max_theta_step)
                predicted = 0.5 * float(point.grad_theta @ direction)
                trial = _line_search(ev, point, direction, which, schedule.max_halvings, log)
                if trial is None:
                    stalled.append(predicted)
                else:
                    point = trial
                continue
            if point.lambda_indefinite:
                log.append(f"iter {it}: indefinite lambda curvature projected to nearest PSD")
            # one log-precision at a time, so neither can be dragged past its own optimum
            moved, predicted = False, 0.0
            for i in range(point.grad_lambda.size):
                g, N = point.grad_lambda[i], point.Pi_lambda[i, i]
                direction = np.zeros_like(point.grad_lambda)
                direction[i] = float(np.clip(g / N, -schedule.max_lambda_step, schedule.max_lambda_step))
                predicted += 0.5 * g * g / N
                trial = _line_search(ev, point, direction, which, schedule.max_halvings, log)
                if trial is not None:
                    point, moved = trial, True
            if not moved:
                stalled.append(predicted)
        if not np.isfinite(point.F):
            raise DivergenceError(f"non-finite free energy at iteration {it}", trace)
        if stalled and len(stalled) == len(steps):
            worst = max(stalled)
            if worst > schedule.divergence_gain:
                raise DivergenceError(
                    f"line search exhausted at iteration {it} with predicted gain {worst:.3g}", trace
                )
            converged = True
            trace.append(point.F)
            history.append(_record(it, point))
            break
        trace.append(point.F)
        history.append(_record(it, point))
        if abs(point.F - F_prev) < schedule.tol:
            quiet += 1
            if quiet >= schedule.patience:
                converged = True
                break
        else:
            quiet = 0
    post = point.posterior
    post.fe_trace = trace
    post.history = history
    post.warnings = log
    post.converged = converged
    post.n_iter = it
    post.wall_time = time.perf_counter() - t0
    return post


def _record(it, point):
    post = point.posterior
    row = {"iteration": it}
    for i, v in enumerate(post.theta):
        row[f"theta{i + 1}"] = float(v)
    row["lambda_z"] = float(post.lam[0])
    row["lambda_w"] = float(post.lam[1])
    for i, v in enumerate(np.diag(post.Pi_theta)):
        row[f"Pi_theta{i + 1}"] = float(v)
    row.update(point.fe.as_dict())
    row["F"] = row.pop("total")
    return row


def learn_parameter_precision(model: GenerativeModel, posterior: Posterior, data: EmbeddedData) -> np.ndarray:
    """``Pi_theta = -d^2 F / d theta^2`` at the posterior means (states held fixed).

    An indefinite Hessian is projected to the nearest PSD matrix with a warning.
    """
    ev = FreeEnergyEvaluator(model, data)
    _, hess = ev.theta_derivatives(np.asarray(posterior.theta, float), np.asarray(posterior.lam, float), posterior.X)
    Pi, indefinite = nearest_psd(-hess)
    if indefinite:
        warnings.warn("indefinite parameter curvature projected to nearest PSD", RuntimeWarning, stacklevel=2)
    return Pi


def write_run_report(path, posterior: Posterior, header_lines=()):
    """Per-iteration CSV of theta, lambda, precision diagonals and free-energy terms."""
    rows = posterior.history
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
