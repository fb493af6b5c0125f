"""ADAM, L-BFGS and the per-generation training schedule with early stopping.

Generation 0 runs ADAM with an exponentially decaying learning rate and then
L-BFGS; later generations warm-start from the previous parameters and use
L-BFGS only.  On a one-patch cover the loss holds a single residual, which
the network zeroes at once; L-BFGS would then minimize the regularizer alone
and drive the weights into the vanishing-gradient region around zero, so it
is skipped there.  Epochs are counted from the start of the generation
across both optimizers.  Every ``N_check`` epochs the global indicator ES_m is
evaluated; once the first ``N_negl(m) = 100 (m + 1)`` epochs have passed,
the best ES_m and its parameters are tracked, and training stops after
``patience * N_check`` epochs without improvement, restoring the best
parameters.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class TrainSchedule:
    adam_epochs: int = 1000
    adam_lr_start: float = 1e-2
    adam_lr_end: float = 1e-4
    lbfgs_memory: int = 20
    max_lbfgs_epochs: int = 2000
    N_check: int = 10
    patience: int = 10
    negl_base: int = 100
    lbfgs_min_patches: int = 2  # a single residual leaves L-BFGS only the regularizer

    def __post_init__(self):
        if self.adam_epochs < 0 or self.max_lbfgs_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0 < self.adam_lr_end < self.adam_lr_start:
            raise ValueError("ADAM learning rate must decay: 0 < lr_end < lr_start")
        if self.N_check < 1 or self.patience < 1 or self.lbfgs_memory < 1:
            raise ValueError("N_check, patience and lbfgs_memory must be positive")

    def adam_lr(self, epoch: int) -> float:
        """Learning rate of ADAM epoch ``epoch`` (0-based); endpoints are exact."""
        if self.adam_epochs <= 1:
            return self.adam_lr_start
        t = epoch / (self.adam_epochs - 1)
        return self.adam_lr_start * (self.adam_lr_end / self.adam_lr_start) ** t

    def n_negl(self, generation: int) -> int:
        return self.negl_base * (generation + 1)


def _check_finite(g, what="gradient"):
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite {what} encountered")


class Adam:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad, lr: float) -> np.ndarray:
        _check_finite(grad)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class LineSearchError(RuntimeError):
    pass


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating f, f' at a and b (None if unusable)."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(oracle: Oracle, x, f0, g0, d, alpha0=1.0, c1=1e-4, c2=0.9, max_evals=25):
    """Line search satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, n_evals)``; raises ``LineSearchError`` when the
    evaluation budget runs out or ``d`` is not a descent direction.
    """
    dg0 = float(np.dot(g0, d))
    if not dg0 < 0:
        raise LineSearchError("not a descent direction")
    evals = 0
    # values within roundoff of f0 cannot be ranked; accept them on curvature alone
    f_tol = 1e-14 * abs(f0)

    def approx_wolfe(f, dg):
        return f <= f0 + f_tol and abs(dg) <= -c2 * dg0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = oracle(x + a * d)
        return f, g, float(np.dot(g, d))

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while evals < max_evals:
            a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            left, right = min(lo, hi), max(lo, hi)
            width = right - left
            if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
                a = 0.5 * (lo + hi)
            f, g, dg = phi(a)
            if approx_wolfe(f, dg):
                return a, f, g
            if not np.isfinite(f) or f > f0 + c1 * a * dg0 or f >= flo:
                hi, fhi, dhi = a, f, dg
            else:
                if abs(dg) <= -c2 * dg0:
                    return a, f, g
                if dg * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = a, f, dg
            if width < 1e-16 * max(1.0, right):
                break
        raise LineSearchError("zoom exhausted its evaluation budget")

    prev, fprev, dprev = 0.0, f0, dg0
    a = alpha0
    while evals < max_evals:
        f, g, dg = phi(a)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            # overshoot into overflow: shrink
            a = 0.5 * (prev + a)
            continue
        if approx_wolfe(f, dg):
            return a, f, g, evals
        if f > f0 + c1 * a * dg0 or (evals > 1 and f >= fprev):
            a, f, g = zoom(prev, fprev, dprev, a, f, dg)
            return a, f, g, evals
        if abs(dg) <= -c2 * dg0:
            return a, f, g, evals
        if dg >= 0:
            a, f, g = zoom(a, f, dg, prev, fprev, dprev)
            return a, f, g, evals
        # safeguarded cubic extrapolation (exact on quadratic lines)
        nxt = _cubic_min(prev, fprev, dprev, a, f, dg)
        if nxt is None or not np.isfinite(nxt) or nxt < 1.1 * a:
            nxt = 2.0 * a
        prev, fprev, dprev = a, f, dg
        a = min(nxt, 10.0 * a)
    raise LineSearchError("bracketing exhausted its evaluation budget")


def backtracking(oracle: Oracle, x, f0, g0, d, alpha0=1.0, c1=1e-4, max_evals=25):
    dg0 = float(np.dot(g0, d))
    a = alpha0
    for k in range(1, max_evals + 1):
        f, g = oracle(x + a * d)
        if np.isfinite(f) and f <= f0 + c1 * a * dg0:
            return a, f, g, k
        a *= 0.5
    raise LineSearchError("backtracking found no decrease")


class LBFGS:
    """Limited-memory BFGS with two-loop recursion and strong-Wolfe steps."""

    def __init__(self, memory: int = 20, c1: float = 1e-4, c2: float = 0.9, max_ls_evals: int = 25):
        self.memory = memory
        self.c1, self.c2 = c1, c2
        self.max_ls_evals = max_ls_evals
        self.pairs: deque = deque(maxlen=memory)
        self.n_fallbacks = 0
        self.skipped = 0
        self._last_failed = False

    def direction(self, g) -> np.ndarray:
        q = -np.asarray(g, dtype=float)
        if not self.pairs:
            return q
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        s, y, _ = self.pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return q

    def _initial_step(self, g) -> float:
        return 1.0 if self.pairs else min(1.0, 1.0 / max(float(np.sum(np.abs(g))), 1e-300))

    def step(self, oracle: Oracle, x, f, g):
        """One iteration from ``(x, f, g)``; returns the new ``(x, f, g)``.

        A failed line search is retried once as backtracking steepest descent
        with the history cleared; a second consecutive failure raises
        ``LineSearchError``.
        """
        _check_finite(g)
        d = self.direction(g)
        try:
            a, f_new, g_new, _ = strong_wolfe(
                oracle, x, f, g, d, self._initial_step(g), self.c1, self.c2, self.max_ls_evals
            )
            self._last_failed = False
        except LineSearchError:
            if self._last_failed:
                raise
            self._last_failed = True
            self.n_fallbacks += 1
            self.pairs.clear()
            d = -np.asarray(g, dtype=float)
            a, f_new, g_new, _ = backtracking(oracle, x, f, g, d, self._initial_step(g), self.c1, self.max_ls_evals)
        _check_finite(g_new)
        s = a * d
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            self.pairs.append((s, y, 1.0 / sy))
        else:
            self.skipped += 1
        return x + s, f_new, g_new


@dataclass
class EarlyStopState:
    best_es: float = math.inf
    best_params: np.ndarray | None = None
    best_epoch: int = -1
    epochs_since_best: int = 0
    nn_eval_count: int = 0

    def update(self, epoch: int, es: float, params, n_negl: int) -> bool:
        """Record ``es`` at ``epoch``; returns True if it became the best."""
        if epoch <= n_negl:
            return False
        if es < self.best_es:
            self.best_es = float(es)
            self.best_params = np.array(params, copy=True)
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best = epoch - self.best_epoch
        return False

    def exhausted(self, patience_epochs: int) -> bool:
        return self.best_params is not None and self.epochs_since_best >= patience_epochs


@dataclass
class HistoryRow:
    generation: int
    epoch: int
    nn_eval_count: int
    loss: float
    ES: float
    H1_error: float | None
    phase: str

    def row(self) -> dict:
        return {
            "generation": self.generation,
            "epoch": self.epoch,
            "nn_eval_count": self.nn_eval_count,
            "loss": self.loss,
            "ES": self.ES,
            "H1_error": "" if self.H1_error is None else self.H1_error,
            "phase": self.phase,
        }


@dataclass
class TrainResult:
    params: np.ndarray
    history: list[HistoryRow] = field(default_factory=list)
    state: EarlyStopState = field(default_factory=EarlyStopState)
    stop_reason: str = ""
    epochs: int = 0


class CountingOracle:
    """Wraps a loss-and-gradient callable and counts its calls."""

    def __init__(self, fn: Oracle, start: int = 0):
        self.fn = fn
        self.count = start

    def __call__(self, theta):
        self.count += 1
        return self.fn(theta)


def train_generation(
    generation: int,
    loss_and_grad: Oracle,
    params,
    schedule: TrainSchedule,
    indicator: Callable[[np.ndarray], float],
    h1_error: Callable[[np.ndarray], float] | None = None,
    nn_eval_start: int = 0,
    n_patches: int | None = None,
) -> TrainResult:
    """Train one generation and restore the parameters with the best ES_m.

    ``indicator(theta)`` returns ES_m; ``h1_error(theta)``, when given, the
    true relative H^1 error recorded in the history.  Epochs are counted
    from the start of the generation across both optimizers, so ``N_negl``
    and the patience window apply to ADAM and L-BFGS alike.  L-BFGS is
    skipped when the cover has fewer than ``schedule.lbfgs_min_patches``
    patches (``n_patches``).
    """
    oracle = CountingOracle(loss_and_grad, nn_eval_start)
    theta = np.array(params, dtype=float)
    state = EarlyStopState(nn_eval_count=nn_eval_start)
    result = TrainResult(theta, state=state)
    n_negl = schedule.n_negl(generation)
    patience_epochs = schedule.patience * schedule.N_check
    epoch = 0

    def checkpoint(phase, loss):
        es = float(indicator(theta))
        err = float(h1_error(theta)) if h1_error is not None else None
        state.nn_eval_count = oracle.count
        result.history.append(HistoryRow(generation, epoch, oracle.count, float(loss), es, err, phase))
        state.update(epoch, es, theta, n_negl)
        return state.exhausted(patience_epochs)

    reason = "epoch cap"
    stop = False
    if generation == 0 and schedule.adam_epochs > 0:
        adam = Adam(theta.size)
        for k in range(schedule.adam_epochs):
            f, g = oracle(theta)
            if epoch % schedule.N_check == 0 and checkpoint("adam", f):
                stop, reason = True, "patience"
                break
            theta = adam.step(theta, g, schedule.adam_lr(k))
            epoch += 1

    run_lbfgs = n_patches is None or n_patches >= schedule.lbfgs_min_patches
    if not stop:
        f, g = oracle(theta)
        _check_finite(g)
        if epoch % schedule.N_check == 0 and checkpoint("lbfgs" if run_lbfgs else "adam", f):
            stop, reason = True, "patience"
    if not stop and run_lbfgs:
        lbfgs = LBFGS(schedule.lbfgs_memory)
        for _ in range(schedule.max_lbfgs_epochs):
            try:
                theta, f, g = lbfgs.step(oracle, theta, f, g)
            except LineSearchError as exc:
                log.warning("generation %d: L-BFGS stopped at epoch %d (%s)", generation, epoch, exc)
                reason = "line search failure"
                break
            epoch += 1
            if float(np.linalg.norm(g)) == 0.0:
                checkpoint("lbfgs", f)
                reason = "zero gradient"
                break
            if epoch % schedule.N_check == 0 and checkpoint("lbfgs", f):
                reason = "patience"
                break
    elif not run_lbfgs and not stop:
        reason = "adam only"
    state.nn_eval_count = oracle.count
    if state.best_params is not None:
        theta = state.best_params.copy()
    result.params = theta
    result.stop_reason = reason
    result.epochs = epoch
    return result
