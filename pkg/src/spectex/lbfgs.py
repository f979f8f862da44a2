"""Limited-memory BFGS minimizer with a strong Wolfe line search.

Search directions come from the standard two-loop recursion over up to
`memory` curvature pairs, scaled by gamma = s'y / y'y from the most recent
pair. The line search brackets with doubling steps and zooms with cubic
interpolation, enforcing

    f(x + a d) <= f(x) + c1 a g'd        (sufficient decrease)
    |g(x + a d)'d| <= c2 |g'd|           (curvature)

The very first iteration takes the steepest-descent direction with initial
trial step 1/||g|| so the first move has unit length. Pairs with
s'y <= 1e-10 ||s|| ||y|| are discarded to keep the implicit inverse Hessian
positive definite. All internal arithmetic is float64 and fully
deterministic: the same callback, start point and options reproduce the
identical iterate sequence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, OptimizerError

CURVATURE_REJECT_FACTOR = 1e-10


def curvature_pair_ok(s: np.ndarray, y: np.ndarray) -> bool:
    """Accept (s, y) into memory only if s'y is safely positive, keeping the
    implicit inverse-Hessian approximation positive definite."""
    sy = float(s @ y)
    return sy > CURVATURE_REJECT_FACTOR * float(np.linalg.norm(s)) * float(np.linalg.norm(y))


@dataclass(frozen=True)
class OptimizerOptions:
    memory: int = 10
    max_iterations: int = 1000
    grad_tolerance: float = 1e-8
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigurationError("memory must be >= 1")
        if not (0.0 < self.c1 < self.c2 < 1.0):
            raise ConfigurationError("line search constants need 0 < c1 < c2 < 1")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    """Data of one accepted step, enough to re-check the Wolfe conditions."""

    alpha: float
    f_before: float
    f_after: float
    slope_before: float   # g(x)'d at the step's origin
    slope_after: float    # g(x + alpha d)'d at the accepted point
    evaluations: int


@dataclass
class OptimizerReport:
    iterations: int = 0
    loss_history: list[float] = field(default_factory=list)
    final_grad_norm: float = float("nan")
    termination: str = ""
    steps: list[StepRecord] = field(default_factory=list)
    evaluations: int = 0


Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class _CountingObjective:
    def __init__(self, fn: Objective, n: int):
        self.fn = fn
        self.n = n
        self.evaluations = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        f, g = self.fn(x)
        self.evaluations += 1
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.n,):
            raise OptimizerError(
                f"callback gradient has shape {g.shape}, expected ({self.n},)"
            )
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise OptimizerError(
                f"callback returned non-finite values at evaluation {self.evaluations}"
            )
        return float(f), g


def _two_loop_direction(
    grad: np.ndarray,
    pairs: Sequence[tuple[np.ndarray, np.ndarray, float]],
) -> np.ndarray:
    """-H g from the two-loop recursion; pairs are (s, y, 1/s'y), oldest first."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    s_last, y_last, _ = pairs[-1]
    gamma = float(s_last @ y_last) / float(y_last @ y_last)
    q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _cubic_minimizer(a, fa, da, b, fb, db) -> float:
    """Minimizer of the cubic interpolating f, f' at a and b (NaN if absent)."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    radicand = d1 * d1 - da * db
    if radicand < 0.0:
        return float("nan")
    d2 = np.sign(b - a) * np.sqrt(radicand)
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return float("nan")
    return b - (b - a) * (db + d2 - d1) / denom


class _LineSearchFailure(Exception):
    pass


def _zoom(objective, x, d, f0, slope0, lo, hi, c1, c2, max_steps):
    """Find a strong Wolfe point inside the bracket [lo, hi].

    lo/hi are (alpha, f, slope) triples; lo always has the lower f value.
    Returns (alpha, f, g, slope) with the final evaluation at alpha.
    """
    (a_lo, f_lo, s_lo), (a_hi, f_hi, s_hi) = lo, hi
    for _ in range(max_steps):
        a = _cubic_minimizer(a_lo, f_lo, s_lo, a_hi, f_hi, s_hi)
        width = abs(a_hi - a_lo)
        inner_lo = min(a_lo, a_hi) + 0.1 * width
        inner_hi = max(a_lo, a_hi) - 0.1 * width
        if not np.isfinite(a) or not (inner_lo <= a <= inner_hi):
            a = 0.5 * (a_lo + a_hi)
        f_a, g_a = objective(x + a * d)
        s_a = float(g_a @ d)
        if f_a > f0 + c1 * a * slope0 or f_a >= f_lo:
            a_hi, f_hi, s_hi = a, f_a, s_a
        else:
            if abs(s_a) <= -c2 * slope0:
                return a, f_a, g_a, s_a
            if s_a * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, s_hi = a_lo, f_lo, s_lo
            a_lo, f_lo, s_lo = a, f_a, s_a
    raise _LineSearchFailure


def _strong_wolfe(objective, x, d, f0, slope0, alpha0, c1, c2, max_steps):
    """Bracketing phase of the strong Wolfe search (doubling trial steps)."""
    if slope0 >= 0.0:
        raise _LineSearchFailure  # not a descent direction
    a_prev, f_prev, s_prev = 0.0, f0, slope0
    a = alpha0
    for i in range(max_steps):
        f_a, g_a = objective(x + a * d)
        s_a = float(g_a @ d)
        if f_a > f0 + c1 * a * slope0 or (i > 0 and f_a >= f_prev):
            return _zoom(objective, x, d, f0, slope0,
                         (a_prev, f_prev, s_prev), (a, f_a, s_a), c1, c2, max_steps)
        if abs(s_a) <= -c2 * slope0:
            return a, f_a, g_a, s_a
        if s_a >= 0.0:
            return _zoom(objective, x, d, f0, slope0,
                         (a, f_a, s_a), (a_prev, f_prev, s_prev), c1, c2, max_steps)
        a_prev, f_prev, s_prev = a, f_a, s_a
        a *= 2.0
    raise _LineSearchFailure


IterationHook = Callable[[int, np.ndarray, float, float], None]


def minimize(
    f_and_grad: Objective,
    x0: np.ndarray,
    opts: OptimizerOptions = OptimizerOptions(),
    iteration_hook: IterationHook | None = None,
) -> tuple[np.ndarray, OptimizerReport]:
    """Minimize a smooth objective given by a (loss, gradient) callback.

    Returns the best point found and a report with the accepted-loss
    history (starting value included), per-step line search records and
    the termination reason: 'converged', 'budget' or 'line-search-failure'.
    """
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    objective = _CountingObjective(f_and_grad, x.size)
    report = OptimizerReport()

    f, g = objective(x)
    report.loss_history.append(f)
    grad_norm = float(np.linalg.norm(g))

    pairs: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=opts.memory)
    termination = "budget"

    for k in range(opts.max_iterations):
        if grad_norm < opts.grad_tolerance:
            termination = "converged"
            break

        if pairs:
            d = _two_loop_direction(g, pairs)
            alpha0 = 1.0
            if float(d @ g) >= 0.0:
                # numerically broken curvature memory: restart from scratch
                pairs.clear()
                d = -g
                alpha0 = 1.0 / grad_norm
        else:
            d = -g
            alpha0 = 1.0 / grad_norm

        slope0 = float(d @ g)
        evals_before = objective.evaluations
        try:
            alpha, f_new, g_new, slope_new = _strong_wolfe(
                objective, x, d, f, slope0, alpha0, opts.c1, opts.c2, opts.max_line_search
            )
        except _LineSearchFailure:
            termination = "line-search-failure"
            break

        s = alpha * d
        y = g_new - g
        if curvature_pair_ok(s, y):
            pairs.append((s, y, 1.0 / float(s @ y)))

        x = x + s
        f, g = f_new, g_new
        grad_norm = float(np.linalg.norm(g))

        report.iterations = k + 1
        report.loss_history.append(f)
        report.steps.append(
            StepRecord(
                alpha=alpha,
                f_before=report.loss_history[-2],
                f_after=f,
                slope_before=slope0,
                slope_after=slope_new,
                evaluations=objective.evaluations - evals_before,
            )
        )
        if iteration_hook is not None:
            iteration_hook(k + 1, x, f, grad_norm)

    if grad_norm < opts.grad_tolerance and termination == "budget":
        termination = "converged"

    report.final_grad_norm = grad_norm
    report.termination = termination
    report.evaluations = objective.evaluations
    return x, report
