"""Synchronous cross-silo simulation loop.

Row ``t`` of a record describes the averaged point x̄_t that step ``t`` starts
from: its loss and gradient norm, the consensus error of the client points,
and M_t built from the transition x̄_t -> x̄_{t+1}.  The sample and
communication counters are cumulative through step ``t``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .metrics import consensus_error
from .optimizers import (
    ClientStates,
    HyperParams,
    alpha_clamps,
    client_mean,
    eta_schedule,
    get_algorithm,
)
from .problems import ProblemSpec, client_grads, global_loss

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
SCORES = ("final_loss", "samples_to_threshold")


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    problem: ProblemSpec
    hp: HyperParams = field(default_factory=HyperParams)
    total_steps: int = 1000
    seed: int = 0
    record_every: int = 1
    out: str | None = None
    audit: bool = False
    workers: int = 1
    x0: tuple | None = None
    # stop at the first recorded row with |grad f(x̄_t)| at or below this level
    stop_grad_norm: float | None = None
    # wall_ms stays 0 unless timing is on, so CSV output is reproducible
    timing: bool = False

    def __post_init__(self):
        get_algorithm(self.algorithm)
        if self.total_steps < 1:
            raise ValueError("total_steps must be ≥ 1")
        if self.record_every < 1:
            raise ValueError("record_every must be ≥ 1")
        if self.record_every > self.total_steps:
            raise ValueError("record_every must be ≤ total_steps")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be ≥ 1")
        if self.stop_grad_norm is not None and not self.stop_grad_norm > 0:
            raise ValueError("stop_grad_norm must be > 0")


class Row(NamedTuple):
    t: int
    loss: float
    grad_norm: float
    metric_mt: float
    consensus_err: float
    samples: int
    comms: int
    wall_ms: float


COLUMNS = Row._fields

AUDIT_SERIES = (
    "grad_norm", "a_norm", "move", "err", "metric_mt", "consensus", "window_rhs",
    "a_min", "a_max", "grad_abs_max", "is_sync", "x_spread", "m_spread", "v_spread",
)


@dataclass
class AuditTrace:
    """Per-step series for the pathwise checks (one entry per executed step).

    ``a_norm`` is the operator norm of the preconditioner used in the chain
    bound, ``move`` is |x̄_{t+1} - x̄_t| / eta_t and ``err`` is
    |grad f(x̄_t) - m̄_t| / rho.  ``*_spread`` are the largest deviations of a
    client row from row 0 right after step t (0 exactly after a sync).
    """

    rho: float
    q: int
    init_bound: float
    algorithm: str = ""
    series: dict = field(default_factory=lambda: {k: [] for k in AUDIT_SERIES})
    states: list = field(default_factory=list)

    def append(self, **values):
        for k, v in values.items():
            self.series[k].append(v)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "q": self.q, "init_bound": self.init_bound,
                "algorithm": self.algorithm, "series": {k: list(v) for k, v in self.series.items()}}

    @staticmethod
    def from_dict(d: dict) -> "AuditTrace":
        trace = AuditTrace(float(d["rho"]), int(d["q"]), float(d["init_bound"]), d["algorithm"])
        for k in AUDIT_SERIES:
            trace.series[k] = list(d["series"][k])
        return trace


@dataclass
class RunRecord:
    config: RunConfig
    rows: list
    final_x: np.ndarray
    total_samples: int
    total_comms: int
    diverged_at: int | None = None
    stopped_at: int | None = None
    audit: AuditTrace | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def column(self, name: str) -> np.ndarray:
        k = COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    def first_reaching(self, threshold: float) -> Row | None:
        for r in self.rows:
            if r.grad_norm <= threshold:
                return r
        return None


def sample_accounting(algorithm: str, n_clients: int, hp: HyperParams, steps: int,
                      samples_per_client: int | None = None) -> tuple[int, int]:
    """Gradient evaluations and communication rounds after ``steps`` steps.

    FAFED evaluates each batch at two points and spends B per client at
    init; the others spend b per client per step.  The init broadcast counts
    as one round.  ``samples_per_client`` switches to full-batch charging.
    """
    alg = get_algorithm(algorithm)
    b = hp.b if samples_per_client is None else samples_per_client
    per_step = alg.evals_per_sample * b * n_clients
    samples = per_step * steps
    if alg.name == "fafed":
        B = hp.init_batch if samples_per_client is None else samples_per_client
        samples += B * n_clients
    return samples, 1 + steps // hp.q


def _diverged(*arrays) -> bool:
    # NaN fails every comparison, so one reduction catches NaN, inf and overflow
    return not all(np.abs(a).max() <= DIVERGENCE_LIMIT for a in arrays)


def _spread(rows: np.ndarray) -> float:
    return float(np.max(np.abs(rows - rows[0]))) if len(rows) > 1 else 0.0


def _blocks(n: int, workers: int) -> list:
    workers = min(workers, n)
    return [b for b in np.array_split(np.arange(n), workers) if len(b)]


def _local_step(alg, clients, server, problem, hp, pool, blocks):
    if pool is None:
        return alg.local_step(clients, server, problem, hp)
    parts = [clients.block(b) for b in blocks]
    done = list(pool.map(lambda c: alg.local_step(c, server, problem, hp), parts))
    # barrier: every block has finished before the caller may sync
    return ClientStates.concat(done)


def _metric_view(name: str, clients, server, x_now, x_next, eta: float, hp: HyperParams):
    """(m̄_t, A_t diagonal, rho) so that x̄_{t+1} = x̄_t - eta A^{-1} m̄_t.

    FAFED has these explicitly.  The baselines have no shared
    preconditioner, so A = I, rho = 1 and m̄_t is the realised direction.
    """
    if name == "fafed":
        return client_mean(clients.m), server.adaptive_diag, hp.rho
    return (x_now - x_next) / eta, np.ones_like(x_now), 1.0


def _a_range(name: str, clients, server):
    if name == "fafed":
        return float(server.adaptive_diag.min()), float(server.adaptive_diag.max())
    if name == "naive-adaptive":
        root = np.sqrt(clients.v)
        return float(root.min()), float(root.max())
    return 1.0, 1.0


def run_experiment(cfg: RunConfig) -> RunRecord:
    problem, hp = cfg.problem, cfg.hp
    alg = get_algorithm(cfg.algorithm)
    N = problem.n_clients
    T = cfg.total_steps
    if alpha_clamps(hp) and alg.name == "fafed":
        log.warning("c * eta_0^2 = %.3g > 1: momentum weight is clamped to 1",
                    hp.c * eta_schedule(0, hp) ** 2)

    full = problem.samples_per_client if hp.full_batch else None
    t0 = time.perf_counter()
    clients, server = alg.init(problem, hp, cfg.seed, cfg.x0)

    audit = None
    if cfg.audit:
        if alg.name == "fafed":
            init_bound = float(np.abs(clients.g).max())
        elif alg.name == "naive-adaptive":
            init_bound = math.sqrt(hp.v0)
        else:
            init_bound = 0.0
        audit = AuditTrace(hp.rho, hp.q, init_bound, alg.name)
        audit.states.append((clients.x.copy(), clients.m.copy(), clients.v.copy()))

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and N > 1 else None
    blocks = _blocks(N, cfg.workers)
    rows = []
    diverged_at = stopped_at = None
    window_sum = 0.0
    t = 0
    try:
        for t in range(1, T + 1):
            before = clients.x
            record = t == 1 or t % cfg.record_every == 0 or t == T
            if audit is not None and (t - 1) % hp.q == 0:
                window_sum = 0.0

            server = replace(server, t=t)
            clients = _local_step(alg, clients, server, problem, hp, pool, blocks)
            if audit is not None:
                window_rhs = (hp.q - 1) * window_sum
                window_sum += consensus_error(before - clients.x)
            is_sync = t % hp.q == 0
            if is_sync:
                clients, server = alg.sync(clients, server, problem, hp)
            bad = _diverged(clients.x, clients.m, clients.v)
            if not (record or bad or audit is not None):
                continue

            x_now = client_mean(before)
            x_next = client_mean(clients.x)
            cons = consensus_error(before)
            g_now = client_mean(client_grads(problem, np.broadcast_to(x_now, (N, problem.dim))))
            grad_norm = float(np.linalg.norm(g_now))
            eta = eta_schedule(t, hp)
            with np.errstate(all="ignore"):
                m_bar, A, rho = _metric_view(alg.name, clients, server, x_now, x_next, eta, hp)
                move = float(np.linalg.norm(x_next - x_now)) / eta
                err = float(np.linalg.norm(g_now - m_bar)) / rho
                mt = 0.25 * (move * move + err * err)

            if audit is not None:
                a_min, a_max = _a_range(alg.name, clients, server)
                audit.append(
                    grad_norm=grad_norm, a_norm=float(np.max(A)), move=move, err=err,
                    metric_mt=mt, consensus=cons, window_rhs=window_rhs, a_min=a_min, a_max=a_max,
                    grad_abs_max=float(np.abs(clients.g).max()), is_sync=is_sync,
                    x_spread=_spread(clients.x), m_spread=_spread(clients.m),
                    v_spread=_spread(clients.v),
                )
                audit.states.append((clients.x.copy(), clients.m.copy(), clients.v.copy()))

            # early stopping is checked on recorded rows only
            stop = record and cfg.stop_grad_norm is not None and grad_norm <= cfg.stop_grad_norm
            if record or bad:
                samples, comms = sample_accounting(alg.name, N, hp, t, full)
                wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
                rows.append(Row(t, global_loss(problem, x_now), grad_norm, mt, cons,
                                samples, comms, wall))
            if bad:
                diverged_at = t
                log.info("run diverged at step %d", t)
                break
            if stop:
                stopped_at = t
                break
    finally:
        if pool is not None:
            pool.shutdown()

    samples, comms = sample_accounting(alg.name, N, hp, t, full)
    return RunRecord(cfg, rows, client_mean(clients.x), samples, comms,
                     diverged_at, stopped_at, audit)


# ---------------------------------------------------------------------------
# grid search

_HP_FIELDS = set(HyperParams.__dataclass_fields__)


def _apply(cfg: RunConfig, params: dict) -> RunConfig:
    hp_updates = {k: v for k, v in params.items() if k in _HP_FIELDS}
    run_updates = {k: v for k, v in params.items() if k not in _HP_FIELDS}
    bad = set(run_updates) - set(RunConfig.__dataclass_fields__)
    if bad:
        raise ValueError(f"unknown grid key {sorted(bad)[0]!r}")
    return replace(cfg, hp=replace(cfg.hp, **hp_updates), **run_updates)


def score_record(rec: RunRecord, score: str = "final_loss", threshold: float | None = None) -> float:
    if score == "final_loss":
        if rec.diverged or not rec.rows:
            return math.inf
        v = rec.rows[-1].loss
        return v if math.isfinite(v) else math.inf
    if score == "samples_to_threshold":
        if threshold is None:
            raise ValueError("samples_to_threshold needs a threshold")
        row = rec.first_reaching(threshold)
        return math.inf if row is None else float(row.samples)
    raise ValueError(f"unknown score {score!r}; choose from {', '.join(SCORES)}")


@dataclass
class GridResult:
    best: RunRecord
    best_params: dict
    table: list  # (params, score) in lexicographic parameter order


def grid_search(cfg: RunConfig, grid: dict, score: str = "final_loss",
                threshold: float | None = None, workers: int = 1) -> GridResult:
    """Run every combination and keep the lowest score.

    Combinations are enumerated with keys sorted by name and each key's
    values sorted, so ties go to the lexicographically first parameters.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be nonempty")
    if score not in SCORES:
        raise ValueError(f"unknown score {score!r}; choose from {', '.join(SCORES)}")
    keys = sorted(grid)
    combos = [dict(zip(keys, vals))
              for vals in itertools.product(*(sorted(grid[k]) for k in keys))]
    configs = [_apply(cfg, p) for p in combos]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(run_experiment, configs))
    else:
        records = [run_experiment(c) for c in configs]

    table = [(p, score_record(r, score, threshold)) for p, r in zip(combos, records)]
    best_i = min(range(len(table)), key=lambda i: (table[i][1], i))
    return GridResult(records[best_i], combos[best_i], table)
