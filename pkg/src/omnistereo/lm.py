"""Dense Levenberg-Marquardt with a multiplicative damping schedule.

The problem sizes here (rig calibration, board pose fitting) are small enough
that dense normal equations are the right tool; no sparsity bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConvergenceError(RuntimeError):
    """Optimization diverged; carries the last accepted parameter vector."""

    def __init__(self, message, state=None, cost=None):
        super().__init__(message)
        self.state = state
        self.cost = cost


@dataclass
class LMConfig:
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e10
    ftol: float = 1e-10       # relative cost decrease
    gtol: float = 1e-8        # gradient infinity norm
    max_iters: int = 200

    def __post_init__(self):
        if min(self.damping_init, self.damping_up, self.damping_down,
               self.ftol, self.gtol) <= 0 or self.max_iters <= 0:
            raise ValueError("LM configuration values must be positive")


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    cost_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    grad_inf: float = float("inf")


def lm_solve(fun, x0, config: LMConfig | None = None) -> LMResult:
    """Minimize 0.5 * ||r(x)||^2 where ``fun(x) -> (residuals, jacobian)``.

    Accepted iterations are monotonically non-increasing in cost. Divergence
    (damping exceeding ``damping_max`` without an acceptable step) raises
    ConvergenceError with the last accepted state attached; hitting
    ``max_iters`` returns the best state with ``converged=False``.
    """
    cfg = config or LMConfig()
    x = np.asarray(x0, dtype=float).copy()
    r, J = fun(x)
    cost = 0.5 * float(r @ r)
    lam = cfg.damping_init
    history = [cost]
    grad_inf = float("inf")
    for it in range(cfg.max_iters):
        g = J.T @ r
        grad_inf = float(np.max(np.abs(g))) if g.size else 0.0
        if grad_inf < cfg.gtol:
            return LMResult(x, cost, history, it, True, grad_inf)
        JtJ = J.T @ J
        diag = np.maximum(np.diag(JtJ), 1e-12)
        cost_new = cost
        while True:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                x_new = x + step
                r_new, J_new = fun(x_new)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    rel = (cost - cost_new) / max(cost, 1e-300)
                    x, r, J, cost = x_new, r_new, J_new, cost_new
                    history.append(cost)
                    lam = max(lam / cfg.damping_down, 1e-15)
                    if rel < cfg.ftol:
                        return LMResult(x, cost, history, it + 1, True, grad_inf)
                    break
            lam *= cfg.damping_up
            if lam > cfg.damping_max:
                if step is None or not np.isfinite(cost_new) or cost_new > cost * (1.0 + 1e-9):
                    raise ConvergenceError(
                        f"LM diverged: cost still increasing at damping cap "
                        f"{cfg.damping_max:.1e}, iteration {it} (cost {cost:.6e})",
                        state=x, cost=cost)
                # damped steps no longer change the cost: stationary to precision
                return LMResult(x, cost, history, it, True, grad_inf)
    return LMResult(x, cost, history, cfg.max_iters, False, grad_inf)
