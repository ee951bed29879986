"""Quasi-Newton minimizer shared by calibrator fitting and grouping training.

Implements L-BFGS with a backtracking Armijo line search. The objectives in
this package are smooth, low-dimensional and evaluated full-batch, so a
strong-Wolfe search buys nothing; history pairs with non-positive curvature
are skipped to keep the implicit inverse-Hessian positive definite. Runs are
deterministic: identical inputs produce bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .errors import NumericError

# An objective maps a parameter vector to (loss, gradient).
ObjectiveFunction = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class OptimizerConfig:
    history_size: int = 10
    max_iterations: int = 200
    gradient_tolerance: float = 1e-7  # infinity norm
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40

    def validate(self):
        if (
            self.history_size <= 0
            or self.max_iterations <= 0
            or self.gradient_tolerance <= 0
            or not 0 < self.armijo_c1 < 1
            or not 0 < self.backtrack_factor < 1
            or self.max_backtracks <= 0
        ):
            raise ValueError("all optimizer settings must be positive")


@dataclass
class MinimizeResult:
    x: np.ndarray
    loss: float
    iterations: int
    converged: bool
    # loss at x0 followed by the loss of every accepted iterate
    loss_history: list = field(default_factory=list)


def _two_loop_direction(grad, history):
    """Implicit H·g product from stored (s, y, rho) displacement pairs."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)  # standard initial Hessian scaling
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize(fun: ObjectiveFunction, x0, config: OptimizerConfig | None = None) -> MinimizeResult:
    """Minimize ``fun`` starting from ``x0``.

    Returns the best iterate found. ``converged`` is True when the gradient
    infinity-norm dropped below the tolerance; a failed line search returns
    the best iterate so far with ``converged=False``. A non-finite loss or
    gradient at ``x0`` raises :class:`NumericError`.
    """
    cfg = config or OptimizerConfig()
    cfg.validate()
    x = np.array(x0, dtype=np.float64).ravel()

    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise NumericError("objective is not finite at the starting point")
    if x.size == 0:
        return MinimizeResult(x, f, 0, True, [f])
    if g.size != x.size:
        raise ValueError(f"gradient has length {g.size}, expected {x.size}")

    history = []
    losses = [f]
    best_x, best_f = x.copy(), f
    iterations = 0
    converged = bool(np.abs(g).max() <= cfg.gradient_tolerance)

    while not converged and iterations < cfg.max_iterations:
        d = _two_loop_direction(g, history)
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0.0:
            d = -g  # restart on a non-descent direction
            slope = -float(g @ g)

        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            f_new = float(f_new)
            g_new = np.asarray(g_new, dtype=np.float64).ravel()
            if np.isfinite(f_new) and f_new <= f + cfg.armijo_c1 * step * slope:
                accepted = True
                break
            step *= cfg.backtrack_factor
        if not accepted or not np.isfinite(g_new).all():
            break

        # One secant refinement along d: both gradients are already paid
        # for, and the refined step is the exact 1-D minimizer whenever the
        # objective is quadratic along d (restores finite termination on
        # quadratics, which plain Armijo acceptance loses).
        curvature = slope - float(g_new @ d)
        if curvature < 0.0:
            step_star = step * slope / curvature
            if np.isfinite(step_star) and step_star > 0.0 and step_star != step:
                x_star = x + step_star * d
                f_star, g_star = fun(x_star)
                f_star = float(f_star)
                g_star = np.asarray(g_star, dtype=np.float64).ravel()
                if (
                    np.isfinite(f_star)
                    and np.isfinite(g_star).all()
                    and f_star < f_new
                    and f_star <= f + cfg.armijo_c1 * step_star * slope
                ):
                    x_new, f_new, g_new = x_star, f_star, g_star

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        # skip pairs that would break positive-definiteness; flush the rest
        # too, otherwise stale pairs keep reproducing the same bad direction
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
            if len(history) > cfg.history_size:
                history.pop(0)
        else:
            history.clear()

        x, f, g = x_new, f_new, g_new
        iterations += 1
        losses.append(f)
        if f < best_f:
            best_x, best_f = x.copy(), f
        converged = bool(np.abs(g).max() <= cfg.gradient_tolerance)

    return MinimizeResult(best_x, best_f, iterations, converged, losses)


def check_gradient(fun: ObjectiveFunction, x, step: float = 1e-5) -> float:
    """Max relative error between ``fun``'s gradient and central differences.

    The per-coordinate relative error is |g_fd - g| / (|g_fd| + |g| + 1e-12);
    useful as a guard for hand-derived gradients.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    _, grad = fun(x)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        f_plus, _ = fun(x + bump)
        f_minus, _ = fun(x - bump)
        fd = (float(f_plus) - float(f_minus)) / (2.0 * step)
        err = abs(fd - grad[i]) / (abs(fd) + abs(grad[i]) + 1e-12)
        worst = max(worst, err)
    return worst
