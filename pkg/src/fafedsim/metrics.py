"""Convergence diagnostics and pathwise checks of the analysis skeleton.

All checks here are deterministic statements about a single recorded run:
they hold for every sample path, not only in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import ProblemKind, ProblemSpec, client_losses, grad_exact

# tolerances shared by every check
ALGEBRA_RTOL = 1e-9
FD_RTOL = 1e-5
FD_STEP = 1e-6


@dataclass(frozen=True)
class TheoreticalConstants:
    G_prime: float
    A_norm_bound: float
    eta_cap: float


def theoretical_constants(sigma: float, G: float, rho: float, L: float, q: int) -> TheoreticalConstants:
    s = sigma**2 + G**2 + rho**2
    return TheoreticalConstants(
        G_prime=4.0 * math.sqrt(s),
        A_norm_bound=math.sqrt(2.0 * s),
        eta_cap=rho / (12.0 * L * q),
    )


def metric_Mt(x_next, x_now, grad_exact_at_now, m_bar, eta_t: float, rho: float) -> float:
    """(1/4eta^2)|x_next - x_now|^2 + (1/4rho^2)|grad f(x_now) - m_bar|^2."""
    x_next, x_now, g, m = (np.asarray(a, dtype=float) for a in (x_next, x_now, grad_exact_at_now, m_bar))
    if not (x_next.shape == x_now.shape == g.shape == m.shape):
        raise ValueError("length mismatch between metric inputs")
    if eta_t <= 0 or rho <= 0:
        raise ValueError("eta_t and rho must be > 0")
    dx = x_next - x_now
    err = g - m
    return float(dx @ dx) / (4.0 * eta_t**2) + float(err @ err) / (4.0 * rho**2)


def consensus_error(x) -> float:
    """Sum over clients of |x_i - mean|^2."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    # the mean of identical rows is that row; floating-point averaging may
    # miss it by an ulp
    if np.all(x == x[0]):
        return 0.0
    dev = x - x.mean(axis=0)
    return float((dev * dev).sum())


def gradient_chain_bound(a_norm, move, err, grad_norm):
    """Both sides of mean|grad f| <= sqrt(mean |A|^2) * sqrt(8 * mean M_t).

    ``move`` is |x_{t+1} - x_t| / eta_t and ``err`` is |grad f(x_t) - m_t| / rho,
    so M_t = (move^2 + err^2) / 4.  The inequality holds pathwise whenever
    |A_t| >= rho and x_{t+1} = x_t - eta_t A_t^{-1} m_t.
    """
    a_norm, move, err, grad_norm = (np.asarray(a, dtype=float) for a in (a_norm, move, err, grad_norm))
    if len(grad_norm) == 0:
        return 0.0, 0.0
    n = len(grad_norm)
    # hypot keeps the root-mean-squares free of underflow and overflow
    rms_a = math.hypot(*a_norm) / math.sqrt(n)
    rms_mt = math.hypot(*move, *err) / math.sqrt(n)
    return float(grad_norm.mean()), math.sqrt(2.0) * rms_a * rms_mt


def chain_bound_holds(a_norm, move, err, grad_norm, rtol: float = ALGEBRA_RTOL) -> bool:
    """Check the chain bound on every prefix of the run."""
    a_norm, move, err, grad_norm = (np.asarray(a, dtype=float) for a in (a_norm, move, err, grad_norm))
    k = np.arange(1, len(grad_norm) + 1)
    lhs = np.cumsum(grad_norm) / k
    rhs = math.sqrt(2.0) * _prefix_norms(a_norm) * _prefix_norms(move, err) / k
    return bool(np.all(lhs <= rhs * (1.0 + rtol)))


def _prefix_norms(*series) -> np.ndarray:
    """Euclidean norm of every prefix, summed across the given series."""
    out, acc = np.empty(len(series[0])), 0.0
    for i, vals in enumerate(zip(*series)):
        acc = math.hypot(acc, *vals)
        out[i] = acc
    return out


def a_norm_certificate(a_max, grad_abs_max, rho: float, init_bound: float = 0.0,
                       rtol: float = 1e-12) -> bool:
    """Every A_t entry is at most the running max of |g| entries plus rho.

    ``a_max[t]`` is the largest entry of A_t and ``grad_abs_max[t]`` the largest
    gradient entry fed into the second moment at step t; ``init_bound`` covers
    whatever seeded the second moment before step 1.
    """
    a_max = np.asarray(a_max, dtype=float)
    running = np.maximum.accumulate(np.maximum(np.asarray(grad_abs_max, dtype=float), init_bound))
    return bool(np.all(a_max <= (running + rho) * (1.0 + rtol)))


def consensus_window_holds(consensus, window_rhs, rtol: float = ALGEBRA_RTOL) -> bool:
    consensus, window_rhs = np.asarray(consensus, dtype=float), np.asarray(window_rhs, dtype=float)
    return bool(np.all(consensus <= window_rhs * (1.0 + rtol) + 1e-300))


def _near_kink(problem: ProblemSpec, x, h: float) -> bool:
    if problem.kind is not ProblemKind.COUNTEREXAMPLE:
        return False
    a = abs(float(x[0]))
    return abs(a - 1.0) <= 2 * h or a <= 2 * h


def finite_diff_check(problem: ProblemSpec, point, step: float = FD_STEP) -> float:
    """Largest relative error between exact gradients and central differences.

    The error of client i is |fd_i - g_i| / max(|g_i|, 1), maximised over
    clients.
    """
    x = np.asarray(point, dtype=float).reshape(problem.dim)
    if _near_kink(problem, x, step):
        raise ValueError("finite differences are undefined at the counter-example kinks")
    N, d = problem.n_clients, problem.dim
    worst = 0.0
    for i in range(N):
        fd = np.empty(d)
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            pts = np.stack([x + e, x - e])
            fp, fm = client_losses(problem, pts, [i, i])
            fd[k] = (fp - fm) / (2.0 * step)
        g = grad_exact(problem, i, x)
        worst = max(worst, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)))
    return worst
