"""Per-client objective families, gradient oracles and assumption probes.

A problem is a finite family of client objectives f_1..f_N over R^d whose
global objective is their plain average.  Three kinds exist:

* ``counterexample`` - the three piecewise 1-D functions on which naive local
  adaptive averaging drifts away from the optimum.
* ``quadratic`` - diagonal quadratics with client-specific curvatures and
  centers, plus a finite per-client dataset of additive gradient noise.
* ``logistic`` - l2-regularized binary logistic regression with label skew.

Problems are immutable after construction.  All oracles come in a block form
taking stacked client rows, which is what the optimizers use; the per-client
functions are thin wrappers around it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

LOGISTIC_REG = 1e-4
# radius on which the logistic gradient bound G is reported (the l2 term is
# unbounded globally)
LOGISTIC_G_RADIUS = 100.0


class ProblemKind(str, enum.Enum):
    COUNTEREXAMPLE = "counterexample"
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared constants of the standing assumptions.

    ``None`` means unknown and ``math.inf`` means unbounded over R^d.
    For quadratics ``noise_sigma`` is the per-coordinate standard deviation of
    one sample's additive gradient noise; for logistic problems it is a bound
    on the norm of a sample gradient's deviation from the exact one.
    ``zeta_estimate`` is an empirical lower bound on the heterogeneity over a
    probe region, attached when the declared value is only a loose bound.
    """

    smoothness_L: float | None
    noise_sigma: float
    heterogeneity_zeta: float
    grad_bound_G: float
    lower_bound_fstar: float | None
    zeta_estimate: float | None = None


@dataclass(frozen=True)
class MiniBatch:
    client_id: int
    sample_ids: np.ndarray
    draw_tag: object = None

    def __post_init__(self):
        if len(self.sample_ids) == 0:
            raise ValueError("mini-batch must not be empty")


@dataclass(frozen=True, eq=False)
class QuadraticData:
    curvature: np.ndarray  # (N, d), diagonal of Q_i
    centers: np.ndarray  # (N, d)
    noise: np.ndarray  # (N, S, d), centered per client


@dataclass(frozen=True, eq=False)
class LogisticData:
    features: np.ndarray  # (N, S, d)
    labels: np.ndarray  # (N, S), entries in {-1, +1}
    reg: float = LOGISTIC_REG


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: ProblemKind
    n_clients: int
    dim: int
    metadata: AssumptionConstants
    data: object = None
    x0: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n_clients < 1 or self.dim < 1:
            raise ValueError("n_clients and dim must be >= 1")
        if self.kind is ProblemKind.COUNTEREXAMPLE and (self.n_clients, self.dim) != (3, 1):
            raise ValueError("the counter-example has exactly 3 clients in 1 dimension")
        if self.x0 is None:
            object.__setattr__(self, "x0", np.zeros(self.dim))
        _freeze(self.x0)

    @property
    def samples_per_client(self) -> int:
        if self.kind is ProblemKind.QUADRATIC:
            return self.data.noise.shape[1]
        if self.kind is ProblemKind.LOGISTIC:
            return self.data.labels.shape[1]
        return 1

    @property
    def deterministic(self) -> bool:
        return self.metadata.noise_sigma == 0.0 and self.kind is not ProblemKind.LOGISTIC


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


# ---------------------------------------------------------------------------
# constructors


def make_counterexample() -> ProblemSpec:
    meta = AssumptionConstants(
        smoothness_L=6.0,
        noise_sigma=0.0,
        heterogeneity_zeta=8.0,
        grad_bound_G=6.0,
        lower_bound_fstar=0.0,
    )
    return ProblemSpec(ProblemKind.COUNTEREXAMPLE, 3, 1, meta, None, np.array([10.0]))


def quadratic_from_arrays(
    curvature, centers, noise_sigma: float = 0.0, samples_per_client: int = 1000,
    seed: int = 0, shared_noise: bool = False,
) -> ProblemSpec:
    """Diagonal quadratic f_i(x) = 1/2 (x - b_i)^T Q_i (x - b_i) from explicit arrays."""
    Q = np.array(curvature, dtype=float, ndmin=2)
    C = np.array(centers, dtype=float, ndmin=2)
    if Q.shape != C.shape:
        raise ValueError("curvature and centers must have the same shape")
    if np.any(Q <= 0):
        raise ValueError("curvatures must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    n, d = Q.shape
    if noise_sigma > 0:
        rng = stream(seed, "problem", 1)
        n_draw = 1 if shared_noise else n
        noise = rng.normal(0.0, noise_sigma, size=(n_draw, samples_per_client, d))
        noise -= noise.mean(axis=1, keepdims=True)
        if shared_noise:
            noise = np.repeat(noise, n, axis=0)
    else:
        noise = np.zeros((n, 1, d))
    _freeze(Q, C, noise)

    denom = Q.sum(axis=0)
    x_star = (Q * C).sum(axis=0) / denom
    fstar = float(np.mean([0.5 * np.sum(Q[i] * (x_star - C[i]) ** 2) for i in range(n)]))
    identical = bool(np.all(Q == Q[0]) and np.all(C == C[0]))
    meta = AssumptionConstants(
        smoothness_L=float(Q.max()),
        noise_sigma=float(noise_sigma),
        heterogeneity_zeta=0.0 if identical else math.inf,
        grad_bound_G=math.inf,
        lower_bound_fstar=fstar,
    )
    spec = ProblemSpec(ProblemKind.QUADRATIC, n, d, meta, QuadraticData(Q, C, noise))
    if not identical:
        est = estimate_zeta(spec, n_probe_points=64, radius=1.0, seed=seed)
        object.__setattr__(spec, "metadata", _with_zeta_estimate(meta, est))
    return spec


def _with_zeta_estimate(meta: AssumptionConstants, est: float) -> AssumptionConstants:
    return AssumptionConstants(
        meta.smoothness_L, meta.noise_sigma, meta.heterogeneity_zeta,
        meta.grad_bound_G, meta.lower_bound_fstar, est,
    )


def make_quadratic(
    n_clients: int, dim: int, center_spread: float = 2.0,
    curvature_range: tuple = (1.0, 2.0), noise_sigma: float = 0.5, seed: int = 0,
    samples_per_client: int = 1000, identical_clients: bool = False,
) -> ProblemSpec:
    """Heterogeneous diagonal quadratics.

    Curvatures are uniform on ``curvature_range`` and centers gaussian with
    standard deviation ``center_spread``.  With ``identical_clients`` a single
    client is drawn and copied, noise dataset included.
    """
    lo, hi = curvature_range
    if not 0 < lo <= hi:
        raise ValueError("curvature_range must satisfy 0 < lo <= hi")
    if center_spread < 0:
        raise ValueError("center_spread must be >= 0")
    rng = stream(seed, "problem", 0)
    rows = 1 if identical_clients else n_clients
    Q = rng.uniform(lo, hi, size=(rows, dim))
    C = rng.normal(0.0, 1.0, size=(rows, dim)) * center_spread
    if identical_clients:
        Q = np.repeat(Q, n_clients, axis=0)
        C = np.repeat(C, n_clients, axis=0)
    return quadratic_from_arrays(
        Q, C, noise_sigma, samples_per_client, seed, shared_noise=identical_clients
    )


def make_logistic(
    n_clients: int, dim: int, samples_per_client: int = 200, label_skew: float = 0.5,
    seed: int = 0, identical_clients: bool = False, separation: float = 1.0,
) -> ProblemSpec:
    """Binary logistic regression with class-conditional gaussian features.

    Client i prefers label +1 when i is even and -1 otherwise; a sample carries
    the preferred label with probability (1 + label_skew) / 2.  Features are
    ``y * mu + N(0, I)`` with ``|mu| = separation``.
    """
    if samples_per_client < 1:
        raise ValueError("samples_per_client must be >= 1")
    if not 0.0 <= label_skew <= 1.0:
        raise ValueError("label_skew must lie in [0, 1]")
    rng = stream(seed, "problem", 0)
    mu = rng.normal(size=dim)
    mu *= separation / np.linalg.norm(mu)
    rows = 1 if identical_clients else n_clients
    feats = np.empty((rows, samples_per_client, dim))
    labels = np.empty((rows, samples_per_client))
    for i in range(rows):
        pref = 1.0 if i % 2 == 0 else -1.0
        keep = rng.random(samples_per_client) < 0.5 * (1.0 + label_skew)
        y = np.where(keep, pref, -pref)
        labels[i] = y
        feats[i] = y[:, None] * mu + rng.normal(size=(samples_per_client, dim))
    if identical_clients:
        feats = np.repeat(feats, n_clients, axis=0)
        labels = np.repeat(labels, n_clients, axis=0)
    _freeze(feats, labels)

    a_max = float(np.sqrt((feats**2).sum(axis=-1)).max())
    meta = AssumptionConstants(
        smoothness_L=0.25 * a_max**2 + LOGISTIC_REG,
        noise_sigma=2.0 * a_max,
        heterogeneity_zeta=0.0 if identical_clients else 2.0 * a_max,
        grad_bound_G=a_max + LOGISTIC_REG * LOGISTIC_G_RADIUS,
        lower_bound_fstar=None,
    )
    spec = ProblemSpec(ProblemKind.LOGISTIC, n_clients, dim, meta, LogisticData(feats, labels))
    if not identical_clients:
        est = estimate_zeta(spec, n_probe_points=16, radius=1.0, seed=seed)
        object.__setattr__(spec, "metadata", _with_zeta_estimate(meta, est))
    return spec


# ---------------------------------------------------------------------------
# block oracles


def _client_index(problem: ProblemSpec, clients) -> np.ndarray:
    if clients is None:
        return np.arange(problem.n_clients)
    idx = np.asarray(clients, dtype=np.intp).reshape(-1)
    if np.any(idx < 0) or np.any(idx >= problem.n_clients):
        raise ValueError(f"client index out of range [0, {problem.n_clients})")
    return idx


def _check_points(problem: ProblemSpec, X, n_rows: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape != (n_rows, problem.dim):
        raise ValueError(
            f"dimension mismatch: expected points of shape ({n_rows}, {problem.dim}), got {X.shape}"
        )
    return X


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def client_grads(problem: ProblemSpec, X, clients=None, sample_ids=None) -> np.ndarray:
    """Gradients of f_i at the rows of ``X`` for the listed clients.

    ``sample_ids`` of shape (n, b) selects a mini-batch per row; ``None`` gives
    the exact gradient.
    """
    idx = _client_index(problem, clients)
    X = _check_points(problem, X, len(idx))
    if sample_ids is not None:
        sample_ids = np.asarray(sample_ids)
        if sample_ids.ndim != 2 or sample_ids.shape[0] != len(idx):
            raise ValueError("sample_ids must have one row per client")
        if sample_ids.shape[1] == 0:
            raise ValueError("mini-batch must not be empty")

    kind = problem.kind
    if kind is ProblemKind.COUNTEREXAMPLE:
        x = X[:, 0]
        inner = np.abs(x) < 1.0
        slope = np.where(idx == 0, 6.0, -2.0)
        g = np.where(inner, slope * x, slope * np.sign(x))
        return g[:, None]

    if kind is ProblemKind.QUADRATIC:
        data = problem.data
        g = data.curvature[idx] * (X - data.centers[idx])
        if sample_ids is not None and problem.metadata.noise_sigma > 0:
            g = g + data.noise[idx[:, None], sample_ids].mean(axis=1)
        return g

    data = problem.data
    if sample_ids is None:
        A = data.features[idx]
        y = data.labels[idx]
    else:
        A = data.features[idx[:, None], sample_ids]
        y = data.labels[idx[:, None], sample_ids]
    z = y * (A * X[:, None, :]).sum(axis=-1)
    coef = -y * _sigmoid(-z)
    return (coef[..., None] * A).mean(axis=1) + data.reg * X


def client_losses(problem: ProblemSpec, X, clients=None) -> np.ndarray:
    idx = _client_index(problem, clients)
    X = _check_points(problem, X, len(idx))
    kind = problem.kind
    if kind is ProblemKind.COUNTEREXAMPLE:
        x = X[:, 0]
        ax = np.abs(x)
        inner = ax <= 1.0
        f1 = np.where(inner, 3.0 * x**2, 6.0 * ax - 2.0)
        f2 = np.where(inner, -(x**2), -2.0 * ax + 1.0)
        return np.where(idx == 0, f1, f2)
    if kind is ProblemKind.QUADRATIC:
        data = problem.data
        r = X - data.centers[idx]
        return 0.5 * (data.curvature[idx] * r * r).sum(axis=1)
    data = problem.data
    A = data.features[idx]
    y = data.labels[idx]
    z = y * (A * X[:, None, :]).sum(axis=-1)
    return np.logaddexp(0.0, -z).mean(axis=1) + 0.5 * data.reg * (X * X).sum(axis=1)


def _ordered_mean(rows: np.ndarray) -> np.ndarray:
    acc = np.array(rows[0], dtype=float, copy=True)
    for r in rows[1:]:
        acc += r
    return acc / len(rows)


# ---------------------------------------------------------------------------
# per-client and global oracles


def _as_vector(problem: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and problem.dim == 1:
        x = x.reshape(1)
    if x.shape != (problem.dim,):
        raise ValueError(f"dimension mismatch: expected length {problem.dim}, got shape {x.shape}")
    return x


def grad_exact(problem: ProblemSpec, client: int, x) -> np.ndarray:
    x = _as_vector(problem, x)
    return client_grads(problem, x[None, :], [client])[0]


def grad_minibatch(problem: ProblemSpec, client: int, x, batch: MiniBatch) -> np.ndarray:
    if batch.client_id != client:
        raise ValueError("mini-batch belongs to another client")
    x = _as_vector(problem, x)
    ids = np.asarray(batch.sample_ids)[None, :]
    return client_grads(problem, x[None, :], [client], ids)[0]


def loss(problem: ProblemSpec, client: int, x) -> float:
    x = _as_vector(problem, x)
    return float(client_losses(problem, x[None, :], [client])[0])


def global_loss(problem: ProblemSpec, x) -> float:
    x = _as_vector(problem, x)
    X = np.broadcast_to(x, (problem.n_clients, problem.dim))
    return float(_ordered_mean(client_losses(problem, X)))


def global_grad(problem: ProblemSpec, x) -> np.ndarray:
    x = _as_vector(problem, x)
    X = np.broadcast_to(x, (problem.n_clients, problem.dim))
    return _ordered_mean(client_grads(problem, X))


def draw_minibatch(
    problem: ProblemSpec, client: int, b: int, rng: np.random.Generator, draw_tag=None
) -> MiniBatch:
    """Draw ``b`` sample indices with replacement from the client's local data."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    ids = rng.integers(0, problem.samples_per_client, size=b)
    return MiniBatch(client, ids, draw_tag)


# ---------------------------------------------------------------------------
# probes


def _probe_points(problem: ProblemSpec, n: int, radius: float, seed: int) -> np.ndarray:
    rng = stream(seed, "probe", 0)
    return rng.normal(size=(n, problem.dim)) * radius


def estimate_zeta(problem: ProblemSpec, n_probe_points: int = 32, radius: float = 1.0,
                  seed: int = 0, points=None) -> float:
    """Max pairwise distance between exact client gradients over probe points.

    This is a lower bound on the heterogeneity constant over the probed
    region.  Explicit ``points`` (rows) replace the random gaussian probes.
    """
    if points is None:
        if n_probe_points < 1:
            raise ValueError("n_probe_points must be >= 1")
        points = _probe_points(problem, n_probe_points, radius, seed)
    else:
        points = np.asarray(points, dtype=float).reshape(-1, problem.dim)
    best = 0.0
    for x in points:
        G = client_grads(problem, np.broadcast_to(x, (problem.n_clients, problem.dim)))
        diff = G[:, None, :] - G[None, :, :]
        best = max(best, float(np.sqrt((diff**2).sum(axis=-1)).max()))
    return best


def check_smoothness(problem: ProblemSpec, n_probe_pairs: int = 64, seed: int = 0,
                     radius: float = 3.0) -> float:
    """Largest observed gradient Lipschitz ratio over random point pairs and clients."""
    rng = stream(seed, "probe", 1)
    N, d = problem.n_clients, problem.dim
    best = 0.0
    for _ in range(n_probe_pairs):
        x1 = rng.normal(size=d) * radius
        x2 = rng.normal(size=d) * radius
        dist = float(np.linalg.norm(x1 - x2))
        if dist == 0.0:
            continue
        g1 = client_grads(problem, np.broadcast_to(x1, (N, d)))
        g2 = client_grads(problem, np.broadcast_to(x2, (N, d)))
        best = max(best, float(np.linalg.norm(g1 - g2, axis=1).max()) / dist)
    return best


def describe(problem: ProblemSpec) -> dict:
    """Metadata as printable key/value pairs."""

    def fmt(v, missing):
        if v is None:
            return missing
        if isinstance(v, float) and math.isinf(v):
            return "unbounded-globally"
        return repr(float(v))

    m = problem.metadata
    out = {
        "kind": problem.kind.value,
        "n_clients": str(problem.n_clients),
        "dim": str(problem.dim),
        "samples_per_client": str(problem.samples_per_client),
        "smoothness_L": fmt(m.smoothness_L, "unknown"),
        "noise_sigma": fmt(m.noise_sigma, "unknown"),
        "heterogeneity_zeta": fmt(m.heterogeneity_zeta, "unknown"),
        "grad_bound_G": fmt(m.grad_bound_G, "unknown"),
        "lower_bound_fstar": fmt(m.lower_bound_fstar, "unknown"),
    }
    if m.zeta_estimate is not None:
        out["zeta_estimate"] = repr(m.zeta_estimate)
    return out
