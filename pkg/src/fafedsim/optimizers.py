"""Algorithm kernels: FAFED, naive adaptive FedAvg, FedAvg and FedAdam.

Client state is kept stacked: row k of every array belongs to client
``ids[k]``.  Local steps are row-wise, so a block of rows can be stepped on its
own and the results concatenated without changing a single bit.  Every
reduction across clients goes through :func:`client_mean`, which sums rows in
ascending client order.

Each algorithm exposes ``init(problem, hp, seed, x0)``, ``local_step(clients,
server, problem, hp)`` and ``sync(clients, server, problem, hp)``; the engine
calls the local step every step and the sync when ``t % q == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .problems import ProblemSpec, client_grads
from .rng import client_streams

ALGORITHMS = ("fafed", "naive-adaptive", "fedavg", "fedadam")
ETA_MODES = ("decaying", "constant")


class ContractViolation(RuntimeError):
    """A step function was called outside its precondition."""


@dataclass(frozen=True)
class HyperParams:
    """Tuning parameters shared by all algorithms.

    ``init_batch`` defaults to ``b * q``.  ``eta_mode='decaying'`` uses
    rho_hbar / (w + t)^(1/3); ``'constant'`` uses ``eta``.  ``adaptive=False``
    pins the second moment at zero so the FAFED preconditioner stays at rho.
    ``beta1``, ``beta2``, ``tau`` and ``eta_global`` are the FedAdam server
    parameters and ``v0`` the initial second moment of the naive method.
    """

    beta: float = 0.9
    rho: float = 0.01
    c: float = 0.1
    q: int = 10
    b: int = 5
    init_batch: int | None = None
    w: float = 1.0
    rho_hbar: float = 1.0
    eta_mode: str = "decaying"
    eta: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.9
    tau: float = 0.01
    eta_global: float = 10**-1.5
    v0: float = 0.0
    adaptive: bool = True
    full_batch: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be ≥ 1")
        if self.b < 1:
            raise ValueError("b must be ≥ 1")
        if self.init_batch is None:
            object.__setattr__(self, "init_batch", self.b * self.q)
        checks = [
            (0.0 < self.beta < 1.0, "beta must be in (0, 1)"),
            (self.rho > 0.0, "rho must be > 0"),
            (self.c >= 0.0, "c must be ≥ 0"),
            (self.init_batch >= 1, "init_batch must be ≥ 1"),
            (self.w > 0.0, "w must be > 0"),
            (self.rho_hbar > 0.0, "rho_hbar must be > 0"),
            (self.eta_mode in ETA_MODES, f"eta_mode must be one of {', '.join(ETA_MODES)}"),
            (self.eta > 0.0, "eta must be > 0"),
            (0.0 <= self.beta1 < 1.0, "beta1 must be in [0, 1)"),
            (0.0 <= self.beta2 < 1.0, "beta2 must be in [0, 1)"),
            (self.tau > 0.0, "tau must be > 0"),
            (self.eta_global > 0.0, "eta_global must be > 0"),
            (self.v0 >= 0.0, "v0 must be ≥ 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if self.eta_mode == "decaying" and self.w < 1.0:
            raise ValueError("w must be ≥ 1 for the decaying schedule")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")


@dataclass(frozen=True, eq=False)
class ClientStates:
    """Stacked local states of a block of clients.

    ``x`` is the current point, ``x_prev`` the point of the previous step,
    ``m`` the gradient estimator, ``v`` the second moment and ``g`` the last
    mini-batch gradient evaluated at ``x_prev``.
    """

    ids: np.ndarray
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    x_prev: np.ndarray
    g: np.ndarray
    rngs: tuple

    def __len__(self):
        return len(self.ids)

    def block(self, rows) -> "ClientStates":
        rows = np.asarray(rows, dtype=np.intp)
        return ClientStates(
            self.ids[rows], self.x[rows], self.m[rows], self.v[rows],
            self.x_prev[rows], self.g[rows], tuple(self.rngs[k] for k in rows),
        )

    @staticmethod
    def concat(blocks) -> "ClientStates":
        blocks = list(blocks)
        if len(blocks) == 1:
            return blocks[0]
        cat = lambda name: np.concatenate([getattr(b, name) for b in blocks])
        return ClientStates(
            cat("ids"), cat("x"), cat("m"), cat("v"), cat("x_prev"), cat("g"),
            tuple(r for b in blocks for r in b.rngs),
        )

    def client(self, k: int) -> dict:
        return {"x": self.x[k], "m": self.m[k], "v": self.v[k]}


@dataclass(frozen=True, eq=False)
class ServerState:
    x_bar: np.ndarray
    m_bar: np.ndarray
    v_bar: np.ndarray
    adaptive_diag: np.ndarray
    t: int = 0
    sync_count: int = 0
    aux: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# schedules and elementary kernels


def eta_schedule(t: int, hp: HyperParams) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    if hp.eta_mode == "constant":
        return hp.eta
    return hp.rho_hbar / (hp.w + t) ** (1.0 / 3.0)


def alpha_schedule(t: int, hp: HyperParams) -> float:
    """Momentum weight alpha_t = c * eta_{t-1}^2, clamped to 1."""
    if t < 1:
        raise ValueError("alpha is defined for t >= 1")
    return min(1.0, hp.c * eta_schedule(t - 1, hp) ** 2)


def alpha_clamps(hp: HyperParams) -> bool:
    """True when c * eta^2 exceeds 1 at the first step (alpha gets clamped)."""
    return hp.c * eta_schedule(0, hp) ** 2 > 1.0


def _same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"length mismatch: {shape} vs {np.shape(a)}")


def storm_estimate(g_now, g_prev_point, m_prev, alpha: float) -> np.ndarray:
    """g_now + (1 - alpha) (m_prev - g_prev_point), with both gradients on one batch."""
    g_now, g_prev_point, m_prev = (np.asarray(a, dtype=float) for a in (g_now, g_prev_point, m_prev))
    _same_shape(g_now, g_prev_point, m_prev)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return g_now + (1.0 - alpha) * (m_prev - g_prev_point)


def ema_second_moment(v_prev, g, beta: float) -> np.ndarray:
    v_prev, g = np.asarray(v_prev, dtype=float), np.asarray(g, dtype=float)
    _same_shape(v_prev, g)
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    return beta * v_prev + (1.0 - beta) * g * g


def adaptive_matrix(v_bar, rho: float) -> np.ndarray:
    """Diagonal of A = diag(sqrt(v_bar) + rho)."""
    v_bar = np.asarray(v_bar, dtype=float)
    if np.any(v_bar < 0):
        raise ValueError("second moment must be entrywise >= 0")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    return np.sqrt(v_bar) + rho


def client_mean(rows: np.ndarray) -> np.ndarray:
    """Mean over the leading axis, summed in ascending row order."""
    acc = np.array(rows[0], dtype=float, copy=True)
    for r in rows[1:]:
        acc += r
    return acc / len(rows)


def _broadcast(vec: np.ndarray, n: int) -> np.ndarray:
    return np.tile(vec, (n, 1))


def _draw_ids(clients: ClientStates, problem: ProblemSpec, hp: HyperParams, size: int):
    if hp.full_batch:
        S = problem.samples_per_client
        return np.broadcast_to(np.arange(S), (len(clients), S))
    S = problem.samples_per_client
    return np.stack([rng.integers(0, S, size=size) for rng in clients.rngs])


def batch_size(problem: ProblemSpec, hp: HyperParams, init: bool = False) -> int:
    if hp.full_batch:
        return problem.samples_per_client
    return hp.init_batch if init else hp.b


def _start(problem: ProblemSpec, x0, n: int) -> np.ndarray:
    x0 = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    x0 = np.broadcast_to(x0, (problem.dim,)).astype(float)
    return _broadcast(x0, n)


# ---------------------------------------------------------------------------
# FAFED


def fafed_init(problem: ProblemSpec, hp: HyperParams, seed: int, x0=None):
    """Shared start, averaged size-B estimates, then one preconditioned step."""
    N, d = problem.n_clients, problem.dim
    X0 = _start(problem, x0, N)
    init_rngs = client_streams(seed, "init", N)
    probe = ClientStates(np.arange(N), X0, X0, X0, X0, X0, init_rngs)
    ids = _draw_ids(probe, problem, hp, hp.init_batch)
    g0 = client_grads(problem, X0, None, ids)
    m_bar = client_mean(g0)
    v_bar = client_mean(g0 * g0) if hp.adaptive else np.zeros(d)
    A0 = adaptive_matrix(v_bar, hp.rho)
    x1 = X0[0] - (eta_schedule(0, hp) / A0) * m_bar
    clients = ClientStates(
        ids=np.arange(N), x=_broadcast(x1, N), m=_broadcast(m_bar, N),
        v=_broadcast(v_bar, N), x_prev=X0.copy(), g=g0,
        rngs=client_streams(seed, "batch", N),
    )
    server = ServerState(x1.copy(), m_bar, v_bar, A0, t=0, sync_count=0)
    return clients, server


def fafed_local_step(clients: ClientStates, server: ServerState, problem: ProblemSpec,
                     hp: HyperParams) -> ClientStates:
    t = server.t
    eta = eta_schedule(t, hp)
    alpha = alpha_schedule(t, hp)
    ids = _draw_ids(clients, problem, hp, hp.b)
    g = client_grads(problem, clients.x, clients.ids, ids)
    g_prev = client_grads(problem, clients.x_prev, clients.ids, ids)
    m = storm_estimate(g, g_prev, clients.m, alpha)
    v = ema_second_moment(clients.v, g, hp.beta) if hp.adaptive else clients.v
    x = clients.x - (eta / server.adaptive_diag) * m
    return replace(clients, x=x, m=m, v=v, x_prev=clients.x, g=g)


def fafed_sync(clients: ClientStates, server: ServerState, problem: ProblemSpec,
               hp: HyperParams):
    """Average v and m, rebuild A, and redo the step from the pre-step points with the new A."""
    t = server.t
    if t % hp.q != 0:
        raise ContractViolation(f"sync called at t={t}, which is not a multiple of q={hp.q}")
    N = len(clients)
    eta = eta_schedule(t, hp)
    v_bar = client_mean(clients.v)
    A = adaptive_matrix(v_bar, hp.rho)
    m_bar = client_mean(clients.m)
    x_bar = client_mean(clients.x_prev - (eta / A) * clients.m)
    clients = replace(
        clients, x=_broadcast(x_bar, N), m=_broadcast(m_bar, N), v=_broadcast(v_bar, N)
    )
    server = replace(
        server, x_bar=x_bar, m_bar=m_bar, v_bar=v_bar, adaptive_diag=A,
        sync_count=server.sync_count + 1,
    )
    return clients, server


# ---------------------------------------------------------------------------
# baselines


def plain_init(problem: ProblemSpec, hp: HyperParams, seed: int, x0=None):
    N, d = problem.n_clients, problem.dim
    X0 = _start(problem, x0, N)
    zeros = np.zeros((N, d))
    clients = ClientStates(
        np.arange(N), X0, zeros, np.full((N, d), hp.v0), X0.copy(), zeros.copy(),
        client_streams(seed, "batch", N),
    )
    server = ServerState(X0[0].copy(), np.zeros(d), np.zeros(d), np.ones(d), t=0, sync_count=0)
    return clients, server


def naive_adaptive_local(clients: ClientStates, server: ServerState, problem: ProblemSpec,
                         hp: HyperParams) -> ClientStates:
    """Local step with each client's own sqrt(v_i); v_i is never shared."""
    eta = eta_schedule(server.t, hp)
    ids = _draw_ids(clients, problem, hp, hp.b)
    g = client_grads(problem, clients.x, clients.ids, ids)
    v = ema_second_moment(clients.v, g, hp.beta)
    root = np.sqrt(v)
    # v == 0 forces g == 0, so the step there is 0
    scaled = np.divide(g, root, out=np.zeros_like(g), where=root > 0)
    x = clients.x - eta * scaled
    return replace(clients, x=x, v=v, x_prev=clients.x, g=g)


def sgd_local(clients: ClientStates, server: ServerState, problem: ProblemSpec,
              hp: HyperParams) -> ClientStates:
    eta = eta_schedule(server.t, hp)
    ids = _draw_ids(clients, problem, hp, hp.b)
    g = client_grads(problem, clients.x, clients.ids, ids)
    return replace(clients, x=clients.x - eta * g, x_prev=clients.x, g=g)


def average_sync(clients: ClientStates, server: ServerState, problem: ProblemSpec,
                 hp: HyperParams):
    if server.t % hp.q != 0:
        raise ContractViolation(f"sync called at t={server.t}, which is not a multiple of q={hp.q}")
    x_bar = client_mean(clients.x)
    clients = replace(clients, x=_broadcast(x_bar, len(clients)))
    return clients, replace(server, x_bar=x_bar, sync_count=server.sync_count + 1)


def fedadam_init(problem: ProblemSpec, hp: HyperParams, seed: int, x0=None):
    clients, server = plain_init(problem, hp, seed, x0)
    d = problem.dim
    return clients, replace(server, aux={"m": np.zeros(d), "v": np.zeros(d)})


def fedadam_sync(clients: ClientStates, server: ServerState, problem: ProblemSpec,
                 hp: HyperParams):
    """Server Adam step on the averaged round displacement."""
    if server.t % hp.q != 0:
        raise ContractViolation(f"sync called at t={server.t}, which is not a multiple of q={hp.q}")
    delta = client_mean(clients.x) - server.x_bar
    m = hp.beta1 * server.aux["m"] + (1.0 - hp.beta1) * delta
    v = hp.beta2 * server.aux["v"] + (1.0 - hp.beta2) * delta * delta
    x_bar = server.x_bar + hp.eta_global * m / (np.sqrt(v) + hp.tau)
    clients = replace(clients, x=_broadcast(x_bar, len(clients)))
    server = replace(server, x_bar=x_bar, sync_count=server.sync_count + 1, aux={"m": m, "v": v})
    return clients, server


def _step_then_sync(local, sync, clients, server, problem, hp, t):
    server = replace(server, t=t)
    clients = local(clients, server, problem, hp)
    if t % hp.q == 0:
        clients, server = sync(clients, server, problem, hp)
    return clients, server


def naive_adaptive_step(clients, server, problem, hp, t):
    """Step t of the naive method, averaging x when t is a multiple of q."""
    return _step_then_sync(naive_adaptive_local, average_sync, clients, server, problem, hp, t)


def fedavg_step(clients, server, problem, hp, t):
    return _step_then_sync(sgd_local, average_sync, clients, server, problem, hp, t)


def fedadam_round(clients: ClientStates, server: ServerState, problem: ProblemSpec,
                  hp: HyperParams):
    """q local SGD steps after the last sync, then the server step."""
    if server.t % hp.q != 0:
        raise ContractViolation("a FedAdam round must start right after a sync")
    for t in range(server.t + 1, server.t + hp.q + 1):
        server = replace(server, t=t)
        clients = sgd_local(clients, server, problem, hp)
    return fedadam_sync(clients, server, problem, hp)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class Algorithm:
    name: str
    init: Callable
    local_step: Callable
    sync: Callable
    # FAFED evaluates every batch at two points
    evals_per_sample: int = 1
    adaptive: bool = False


REGISTRY = {
    "fafed": Algorithm("fafed", fafed_init, fafed_local_step, fafed_sync, 2, True),
    "naive-adaptive": Algorithm("naive-adaptive", plain_init, naive_adaptive_local, average_sync,
                                adaptive=True),
    "fedavg": Algorithm("fedavg", plain_init, sgd_local, average_sync),
    "fedadam": Algorithm("fedadam", fedadam_init, sgd_local, fedadam_sync),
}


def get_algorithm(name: str) -> Algorithm:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}") from None


# ---------------------------------------------------------------------------
# theory helpers


def theoretical_hbar(n_clients: int, L: float) -> float:
    return n_clients ** (2.0 / 3.0) / L


def theoretical_w(L: float, q: int, hbar: float) -> float:
    return max(1.5, 1728.0 * L**3 * q**3 * hbar**3)


def theoretical_c(L: float, q: int, hbar: float, rho: float, b: int, n_clients: int) -> float:
    return 1.0 / (12.0 * L * q * hbar**3 * rho**2) + 60.0 * L**2 / (b * n_clients * rho**2)
