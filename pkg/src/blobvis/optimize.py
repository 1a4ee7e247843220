"""Preconditioned nonlinear conjugate-gradient minimizer.

Polak-Ribiere+ directions with a diagonal preconditioner built from a
running mean of squared gradient entries, backtracking Armijo line search,
and restarts every dim(theta) iterations or whenever the conjugate
direction stops being a descent direction. With preconditioner='none' and
restart interval 1 the iteration is exactly preconditioner-free steepest
descent (tests rely on that equivalence).

The line search opens each iteration at twice the previously accepted step
and evaluates value and gradient together there; if the trial satisfies
both sufficient decrease and a curvature bound it is accepted outright, so
the common case costs one fused evaluation per iteration. Otherwise the
directional derivative at the trial point drives one secant refinement
(exact for quadratics, which keeps the directions usefully conjugate), and
only then does plain value-only backtracking take over.

Any non-finite objective or gradient value aborts the run; the exception
carries the trace collected so far. Every accepted step satisfies the
sufficient-decrease inequality, so the recorded energy sequence never
increases. Everything is deterministic: same inputs, same config, same
trace, bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    max_iter: int = 200
    gtol: float = 0.0
    initial_step: float = 1.0
    c1: float = 1e-4
    backtrack: float = 0.5
    restart: int = 0
    preconditioner: str = "diagonal"
    seed: int = 0
    step_growth: float = 2.0
    step_floor: float = 1e-14
    max_backtracks: int = 40
    precond_decay: float = 0.9
    precond_floor: float = 1e-8
    keep_thetas: bool = False

    def __post_init__(self):
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


@dataclass
class OptimTrace:
    """Per-iteration record: energy and gradient norm at the iterate, and
    the accepted step length that produced it (0 for the starting point)."""

    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    status: str = "running"
    seed: int = 0
    n_value_evals: int = 0
    n_grad_evals: int = 0

    def record(self, energy, grad_norm, step, theta=None):
        self.energies.append(float(energy))
        self.grad_norms.append(float(grad_norm))
        self.steps.append(float(step))
        if theta is not None:
            self.thetas.append(np.array(theta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,energy,grad_norm,step\n")
        for i, (e, g, s) in enumerate(zip(self.energies, self.grad_norms,
                                          self.steps)):
            buf.write(f"{i},{e!r},{g!r},{s!r}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


class NonFiniteError(RuntimeError):
    """Objective or gradient produced a non-finite value; trace attached."""

    def __init__(self, message, theta, trace):
        super().__init__(message)
        self.theta = theta
        self.trace = trace


_CURVATURE = 0.5


def _line_search(value, fused, theta, d, f, gd, alpha0, config):
    """Sufficient-decrease search along d; returns (alpha, f, g, accepted).

    Opens with a fused evaluation at alpha0. A trial passing both the
    Armijo test and the curvature bound |g_t.d| <= 0.5 |g.d| is taken as
    is. Otherwise the directional derivative at the trial point gives a
    secant estimate of the 1-d minimizer (clamped to [0.1, 10] alpha0, or
    a 4x expansion while the slope still falls); the better Armijo-passing
    candidate wins. Only if both trials fail does geometric value-only
    backtracking run, with a final fused evaluation to recover the
    gradient at the accepted point.
    """
    def armijo(a, fa):
        return fa <= f + config.c1 * a * gd

    f1, g1 = fused(theta + alpha0 * d)
    dphi1 = float(g1 @ d)
    if armijo(alpha0, f1) and abs(dphi1) <= _CURVATURE * abs(gd):
        return alpha0, f1, g1, True

    denom = dphi1 - gd
    if denom > 0.0:
        alpha2 = alpha0 * (-gd) / denom
        alpha2 = min(max(alpha2, 0.1 * alpha0), 10.0 * alpha0)
    else:
        alpha2 = 4.0 * alpha0
    f2, g2 = fused(theta + alpha2 * d)

    best = None
    if armijo(alpha0, f1):
        best = (alpha0, f1, g1)
    if armijo(alpha2, f2) and (best is None or f2 < best[1]):
        best = (alpha2, f2, g2)
    if best is not None:
        return best[0], best[1], best[2], True

    alpha = min(alpha0, alpha2)
    while alpha > config.step_floor:
        alpha *= config.backtrack
        f_t = value(theta + alpha * d)
        if armijo(alpha, f_t):
            f_t, g_t = fused(theta + alpha * d)
            return alpha, f_t, g_t, True
    return alpha, f, None, False


def minimize(objective, gradient, theta0, config: OptimConfig = OptimConfig(),
             value_and_grad=None):
    """Minimize F from theta0; returns (theta, OptimTrace).

    objective/gradient are called separately unless a fused value_and_grad
    callable is supplied (then it serves both roles). Termination: gradient
    inf-norm <= gtol ('converged'), iteration budget ('max_iter'), or a
    fully backtracked steepest-descent step that still cannot decrease F
    ('stalled').
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    n = theta.shape[0]
    trace = OptimTrace(seed=config.seed)

    if value_and_grad is None:
        def value_and_grad(t):
            return objective(t), gradient(t)
        def value_only(t):
            return objective(t)
    else:
        def value_only(t):
            return value_and_grad(t)[0]

    def fused(t):
        trace.n_value_evals += 1
        trace.n_grad_evals += 1
        f, g = value_and_grad(t)
        g = np.asarray(g, dtype=np.float64)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            trace.status = "aborted"
            raise NonFiniteError("non-finite objective or gradient", t, trace)
        return float(f), g

    def value(t):
        trace.n_value_evals += 1
        f = value_only(t)
        if not np.isfinite(f):
            trace.status = "aborted"
            raise NonFiniteError("non-finite objective", t, trace)
        return float(f)

    f, g = fused(theta)
    gnorm = float(np.max(np.abs(g))) if n else 0.0
    trace.record(f, gnorm, 0.0, theta if config.keep_thetas else None)

    restart_every = config.restart if config.restart > 0 else max(n, 1)
    r = g * g
    d = None
    g_prev = None
    since_restart = 0
    alpha_prev = config.initial_step / config.step_growth

    for _ in range(config.max_iter):
        if gnorm <= config.gtol:
            trace.status = "converged"
            break

        if config.preconditioner == "diagonal":
            P = 1.0 / (np.sqrt(r) + config.precond_floor)
        else:
            P = None
        pg = g * P if P is not None else g

        steepest = -pg
        if d is None or since_restart >= restart_every:
            d = steepest
            since_restart = 0
        else:
            y = g - g_prev
            den = float(g_prev @ (g_prev * P if P is not None else g_prev))
            beta = max(0.0, float(g @ (y * P if P is not None else y)) / den) \
                if den > 0.0 else 0.0
            d = steepest + beta * d
            if float(g @ d) >= 0.0:
                d = steepest
                since_restart = 0

        gd = float(g @ d)
        if gd >= 0.0:
            trace.status = "stalled"
            break

        accepted = False
        tried_steepest = d is steepest
        while True:
            alpha, f_t, g_t, accepted = _line_search(
                value, fused, theta, d, f, gd,
                config.step_growth * alpha_prev, config)
            if accepted or tried_steepest:
                break
            # conjugate direction failed outright: one retry along
            # preconditioned steepest descent
            d = steepest
            gd = float(g @ d)
            since_restart = 0
            tried_steepest = True
            if gd >= 0.0:
                break

        if not accepted:
            trace.status = "stalled"
            break

        theta = theta + alpha * d
        g_prev = g
        f, g = f_t, g_t
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        r = config.precond_decay * r + (1.0 - config.precond_decay) * (g * g)
        since_restart += 1
        alpha_prev = alpha
        trace.record(f, gnorm, alpha, theta if config.keep_thetas else None)
    else:
        trace.status = "converged" if gnorm <= config.gtol else "max_iter"

    if trace.status == "running":
        trace.status = "converged"
    return theta, trace
