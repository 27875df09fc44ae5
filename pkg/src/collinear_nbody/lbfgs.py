"""Limited-memory BFGS with a backtracking (Armijo) line search.

Accepted steps never increase the objective.  Close to a minimizer the
remaining decreases fall far below ``eps * |f|``, so comparing two
separately rounded values of ``f`` cannot certify them.  When the caller
supplies ``difference(x, step) = f(x + step) - f(x)`` evaluated without
cancellation, the sufficient-decrease test uses it instead.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NBodyError


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    gradient_norm: float
    iterations: int
    converged: bool
    message: str
    f_history: list = field(default_factory=list)
    evaluations: int = 0


def _safe(fun_grad, x):
    try:
        f, g = fun_grad(x)
    except (NBodyError, FloatingPointError, ZeroDivisionError):
        return np.inf, None
    if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), g


def minimize_lbfgs(
    fun_grad,
    x0,
    max_iterations=5000,
    gradient_tolerance=1e-8,
    history_size=10,
    sufficient_decrease=1e-4,
    shrink=0.5,
    max_backtracks=60,
    stall_limit=50,
    precondition=None,
    difference=None,
) -> LbfgsResult:
    """Minimize ``f`` given ``fun_grad(x) -> (f, grad)``.

    ``precondition(x)`` seeds the two-loop recursion with an approximate
    inverse Hessian: either a positive vector (a diagonal) or a callable
    applying a symmetric positive definite operator.  The run stops early
    once the gradient norm has not improved for ``stall_limit`` iterations,
    which happens when the gradient tolerance lies below rounding level.
    """
    x = np.array(x0, dtype=float)
    f, g = _safe(fun_grad, x)
    if g is None:
        raise NBodyError("objective is not finite at the starting point")
    nevals = 1
    mem = deque(maxlen=history_size)
    hist = [f]
    it = 0
    stalled = 0
    best = np.inf
    msg = "max iterations reached"
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= gradient_tolerance:
            msg = "gradient tolerance reached"
            break
        if it >= max_iterations:
            break
        if gnorm < best:
            best, stalled = gnorm, 0
        elif stalled >= stall_limit:
            msg = "stalled: gradient norm stopped improving"
            break

        diag = precondition(x) if precondition is not None else None
        d = _two_loop(g, mem, diag)
        gd = float(g @ d)
        if not gd < 0.0:
            mem.clear()
            d = -_apply(diag, g)
            gd = float(g @ d)
        alpha = 1.0
        if not mem:
            alpha = min(1.0, 1.0 / max(float(np.max(np.abs(d))), 1e-300))
        accepted = False
        for _ in range(max_backtracks):
            xn = x + alpha * d
            fn, gn = _safe(fun_grad, xn)
            nevals += 1
            if gn is not None:
                delta = difference(x, xn - x) if difference is not None else fn - f
                if delta <= sufficient_decrease * alpha * gd and delta <= 0.0:
                    accepted = True
                    break
            alpha *= shrink
        if not accepted:
            if mem:
                mem.clear()
                continue
            msg = "line search failed"
            break
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            mem.append((s, y, 1.0 / sy))
        x, f, g = xn, fn, gn
        hist.append(hist[-1] + delta)
        it += 1
        stalled += 1

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return LbfgsResult(
        x=x,
        f=f,
        grad=g,
        gradient_norm=gnorm,
        iterations=it,
        converged=gnorm <= gradient_tolerance,
        message=msg,
        f_history=hist,
        evaluations=nevals,
    )


def _apply(diag, q):
    if diag is None:
        return q
    if callable(diag):
        return np.asarray(diag(q), dtype=float)
    return diag * q


def _two_loop(g, mem, diag):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        gamma = float(s @ y) / float(y @ _apply(diag, y))
        q = gamma * _apply(diag, q)
    else:
        q = _apply(diag, q)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q
