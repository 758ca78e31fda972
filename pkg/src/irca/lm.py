"""Damped least squares (Levenberg-Marquardt).

Residuals follow the ``model - data`` convention and the Jacobian is the
derivative of that residual. The step solves

    (J^T J + lambda I) step = J^T e,    e = -residual

so it moves the parameters toward the data. Damping follows Marquardt's
schedule: divided by ``damping_decrease`` after an accepted step, multiplied
by ``damping_increase`` after a rejected one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg


class SingularSystemError(np.linalg.LinAlgError):
    """The damped normal equations are not positive definite."""


@dataclass
class LmProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    n_params: int
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def evaluate_jacobian(self, beta: np.ndarray) -> np.ndarray:
        if self.jacobian is None:
            return numeric_jacobian(self.residual, beta)
        jac = np.asarray(self.jacobian(beta), dtype=float)
        if jac.ndim != 2 or jac.shape[1] != self.n_params:
            raise ValueError(f"Jacobian has shape {jac.shape}, expected (*, {self.n_params})")
        return jac


@dataclass(frozen=True)
class LmConfig:
    """Solver settings. ``initial_damping=None`` uses 1e-3 * mean(diag(J^T J))."""

    initial_damping: float | None = None
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    max_iterations: int = 100
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    gradient_tol: float = 1e-12
    max_damping: float = 1e32

    def __post_init__(self):
        if self.initial_damping is not None and self.initial_damping < 0:
            raise ValueError("initial damping must be >= 0")
        if self.damping_increase <= 1 or self.damping_decrease <= 1:
            raise ValueError("damping factors must be > 1")
        if min(self.step_tol, self.cost_tol, self.gradient_tol) <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class LmReport:
    params: np.ndarray
    cost: float
    iterations: int
    converged: bool
    reason: str
    initial_cost: float
    cost_history: list[float] = field(default_factory=list)

    @property
    def accepted_steps(self) -> int:
        return len(self.cost_history) - 1


def numeric_jacobian(residual: Callable[[np.ndarray], np.ndarray], beta, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences, with per-parameter step ``max(|beta_m|, 1) * rel_step``."""
    beta = np.asarray(beta, dtype=float)
    base = np.asarray(residual(beta), dtype=float)
    jac = np.empty((base.size, beta.size))
    for m in range(beta.size):
        h = max(abs(beta[m]), 1.0) * rel_step
        up, down = beta.copy(), beta.copy()
        up[m] += h
        down[m] -= h
        r_up = np.asarray(residual(up), dtype=float)
        r_down = np.asarray(residual(down), dtype=float)
        if not (np.all(np.isfinite(r_up)) and np.all(np.isfinite(r_down))):
            raise FloatingPointError(f"non-finite residual while differentiating parameter {m}")
        jac[:, m] = (r_up - r_down) / (2.0 * h)
    return jac


def _damped_step(jac: np.ndarray, res: np.ndarray, damping: float) -> np.ndarray:
    normal = jac.T @ jac
    normal[np.diag_indices_from(normal)] += damping
    rhs = -(jac.T @ res)
    try:
        factor = linalg.cho_factor(normal, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from None
    return linalg.cho_solve(factor, rhs)


def lm_step(problem: LmProblem, beta, damping: float) -> np.ndarray:
    """One damped Gauss-Newton update from ``beta``."""
    beta = np.asarray(beta, dtype=float)
    jac = problem.evaluate_jacobian(beta)
    res = np.asarray(problem.residual(beta), dtype=float)
    return beta + _damped_step(jac, res, damping)


def _cost(res: np.ndarray) -> float:
    return float(res @ res)


def lm_solve(problem: LmProblem, beta0, config: LmConfig | None = None) -> LmReport:
    config = config or LmConfig()
    beta = np.array(beta0, dtype=float)
    if beta.size != problem.n_params or not np.all(np.isfinite(beta)):
        raise ValueError("initial parameters must be finite with the problem's dimension")

    res = np.asarray(problem.residual(beta), dtype=float)
    if not np.all(np.isfinite(res)):
        raise FloatingPointError("residual is not finite at the initial parameters")
    cost = _cost(res)
    report = LmReport(beta, cost, 0, False, "max_iterations", cost, [cost])
    if cost == 0.0:
        report.converged, report.reason = True, "zero_cost"
        return report

    jac = problem.evaluate_jacobian(beta)
    damping = config.initial_damping
    if damping is None:
        damping = 1e-3 * float(np.mean(np.sum(jac * jac, axis=0)))
        if damping == 0.0:
            damping = 1e-3

    iterations = 0
    while True:
        # cosine between the residual and each Jacobian column
        col_norms = np.linalg.norm(jac, axis=0)
        grad = np.abs(jac.T @ res)
        scale = col_norms * np.sqrt(cost)
        cosines = np.divide(grad, scale, out=np.zeros_like(grad), where=scale > 0)
        if np.max(cosines, initial=0.0) <= config.gradient_tol:
            report.converged, report.reason = True, "gradient"
            break
        if iterations >= config.max_iterations:
            report.reason = "max_iterations"
            break
        if damping > config.max_damping:
            report.reason = "damping_overflow"
            break

        iterations += 1
        try:
            step = _damped_step(jac, res, damping)
        except SingularSystemError:
            damping = max(damping * config.damping_increase, 1e-12)
            continue

        small_step = np.linalg.norm(step) <= config.step_tol * (np.linalg.norm(beta) + config.step_tol)
        trial = beta + step
        trial_res = np.asarray(problem.residual(trial), dtype=float)
        trial_cost = _cost(trial_res) if np.all(np.isfinite(trial_res)) else np.inf

        if trial_cost < cost:
            decrease = cost - trial_cost
            beta, res, cost = trial, trial_res, trial_cost
            report.cost_history.append(cost)
            damping /= config.damping_decrease
            if cost == 0.0:
                report.converged, report.reason = True, "zero_cost"
                break
            if small_step:
                report.converged, report.reason = True, "step"
                break
            if decrease <= config.cost_tol * (cost + decrease):
                report.converged, report.reason = True, "cost"
                break
            jac = problem.evaluate_jacobian(beta)
        else:
            if small_step:
                report.converged, report.reason = True, "step"
                break
            damping *= config.damping_increase

    report.params, report.cost, report.iterations = beta, cost, iterations
    return report
