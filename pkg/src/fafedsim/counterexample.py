"""Drift of per-client adaptive steps on the three-client 1-D counter-example.

Outside [-1, 1] the gradients are +6 for client 0 and -2 for clients 1 and 2.
With v_0 = 0 each client's normalised step has magnitude eta / sqrt(1 - beta^t)
whatever its gradient size, so two clients pushing right outvote one pushing
left and the average moves right by eta / (3 sqrt(1 - beta^t)) every step.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .engine import DIVERGENCE_LIMIT
from .optimizers import HyperParams, average_sync, client_mean, naive_adaptive_local, plain_init
from .problems import make_counterexample

DRIFT_TOL = 1e-9


class DriftRow(NamedTuple):
    t: int
    x_bar: float
    predicted: float
    observed: float
    abs_diff: float


class DriftResult(NamedTuple):
    rows: list
    first_clients: np.ndarray  # client points after step 1, before averaging
    diverged_at: int | None

    @property
    def max_diff(self) -> float:
        return max((r.abs_diff for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_diff <= DRIFT_TOL


def predicted_drift(t: int, eta: float, beta: float) -> float:
    return eta / (3.0 * math.sqrt(1.0 - beta**t))


def counterexample_drift(steps: int = 50, eta: float = 0.1, beta: float = 0.5,
                         x0: float = 10.0) -> DriftResult:
    """Run the naive method with q = 1 and tabulate the per-step drift of the average."""
    problem = make_counterexample()
    hp = HyperParams(eta_mode="constant", eta=eta, beta=beta, v0=0.0, q=1, b=1)
    clients, server = plain_init(problem, hp, 0, [x0])
    rows, first, diverged = [], None, None
    for t in range(1, steps + 1):
        x_bar = float(client_mean(clients.x)[0])
        server = replace(server, t=t)
        clients = naive_adaptive_local(clients, server, problem, hp)
        if t == 1:
            first = clients.x[:, 0].copy()
        clients, server = average_sync(clients, server, problem, hp)
        x_next = float(server.x_bar[0])
        if not abs(x_next) <= DIVERGENCE_LIMIT:
            diverged = t
            break
        pred = predicted_drift(t, eta, beta)
        obs = x_next - x_bar
        rows.append(DriftRow(t, x_next, pred, obs, abs(obs - pred)))
    return DriftResult(rows, first, diverged)


def format_table(result: DriftResult) -> str:
    lines = [f"{'t':>4}  {'x_bar':>20}  {'predicted':>20}  {'observed':>20}  {'abs_diff':>10}"]
    for r in result.rows:
        lines.append(f"{r.t:>4}  {r.x_bar:>20.15f}  {r.predicted:>20.15f}  "
                     f"{r.observed:>20.15f}  {r.abs_diff:>10.3g}")
    return "\n".join(lines)
