import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fafedsim.engine import Row, RunConfig, run_experiment
from fafedsim.metrics import a_norm_certificate, chain_bound_holds, consensus_error, metric_Mt
from fafedsim.optimizers import (
    HyperParams,
    adaptive_matrix,
    alpha_schedule,
    ema_second_moment,
    eta_schedule,
    storm_estimate,
)
from fafedsim.problems import global_grad, grad_exact, make_quadratic
from fafedsim.results import format_csv, parse_csv

finite = st.floats(-1e6, 1e6, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
small = settings(max_examples=30, deadline=None)


@given(vec3, vec3, vec3, vec3, st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_metric_nonnegative_and_zero_iff_exact(xn, xc, g, m, eta, rho):
    v = metric_Mt(xn, xc, g, m, eta, rho)
    assert v >= 0
    assert metric_Mt(xc, xc, g, g, eta, rho) == 0.0


@given(arrays(np.float64, (4, 3), elements=finite))
def test_consensus_nonnegative(x):
    assert consensus_error(x) >= 0.0
    assert consensus_error(np.tile(x[0], (4, 1))) == 0.0


@given(arrays(np.float64, 5, elements=st.floats(0, 1e6)), arrays(np.float64, 5, elements=finite),
       st.floats(0.01, 0.99))
def test_ema_stays_between_bounds(v, g, beta):
    out = ema_second_moment(v, g, beta)
    assert np.all(out >= 0)
    assert np.all(out <= np.maximum(v, g * g) * (1 + 1e-12))


@given(arrays(np.float64, 4, elements=st.floats(0, 1e8)), st.floats(1e-6, 10))
def test_adaptive_floor(v, rho):
    assert np.all(adaptive_matrix(v, rho) >= rho)


@given(st.floats(0.1, 10), st.floats(1, 100), st.integers(0, 10_000))
def test_eta_nonincreasing(rho_hbar, w, t):
    hp = HyperParams(rho_hbar=rho_hbar, w=w)
    assert eta_schedule(t + 1, hp) <= eta_schedule(t, hp)
    assert eta_schedule(t, hp) > 0
    assert 0.0 <= alpha_schedule(t + 1, HyperParams(rho_hbar=rho_hbar, w=w, c=5.0)) <= 1.0


@given(vec3, vec3, vec3)
def test_storm_alpha_one(g, gp, m):
    assert np.array_equal(storm_estimate(g, gp, m, 1.0), g)


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1)),
                min_size=1, max_size=30))
def test_chain_bound_for_pointwise_feasible_records(steps):
    # any record with |grad| <= |A| (move + err) satisfies the averaged bound
    a = [s[0] for s in steps]
    move = [s[1] for s in steps]
    err = [s[2] for s in steps]
    grad = [s[3] * s[0] * (s[1] + s[2]) for s in steps]
    assert chain_bound_holds(a, move, err, grad)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(1e-4, 1))
def test_certificate_on_ema_paths(grads, rho):
    v, a_max = 0.0, []
    for g in grads:
        v = 0.9 * v + 0.1 * g * g
        a_max.append(np.sqrt(v) + rho)
    assert a_norm_certificate(a_max, np.abs(grads), rho)


row = st.builds(
    Row, st.integers(1, 10**9), st.floats(allow_nan=False), st.floats(allow_nan=False),
    st.floats(allow_nan=False), st.floats(0, allow_infinity=False), st.integers(0, 10**15),
    st.integers(0, 10**9), st.floats(0, 1e9),
)


@given(st.lists(row, max_size=10))
def test_csv_round_trip(rows):
    assert parse_csv(format_csv(rows)) == rows


@small
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32))
def test_global_gradient_is_mean(n, d, seed):
    p = make_quadratic(n, d, seed=seed)
    x = np.linspace(-1, 1, d)
    g = global_grad(p, x)
    mean = np.mean([grad_exact(p, i, x) for i in range(n)], axis=0)
    assert np.linalg.norm(g - mean) <= 1e-12 * (1 + np.linalg.norm(g))


@small
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**16),
       st.sampled_from(["fafed", "fedavg", "fedadam", "naive-adaptive"]))
def test_sync_consensus_and_skeletons(n, q, seed, algo):
    p = make_quadratic(n, 3, seed=seed)
    rec = run_experiment(RunConfig(algo, p, HyperParams(q=q), total_steps=4 * q, seed=seed, audit=True))
    s = rec.audit.series
    for k, sync in enumerate(s["is_sync"]):
        if sync:
            assert s["x_spread"][k] == 0.0
            if algo == "fafed":
                assert s["m_spread"][k] == 0.0 and s["v_spread"][k] == 0.0
    assert chain_bound_holds(s["a_norm"], s["move"], s["err"], s["grad_norm"])
    assert np.all(np.asarray(s["consensus"]) <= np.asarray(s["window_rhs"]) * (1 + 1e-9))


@small
@given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 2**16))
def test_workers_do_not_change_output(n, workers, seed):
    p = make_quadratic(n, 2, seed=seed)
    base = RunConfig("fafed", p, HyperParams(q=3), total_steps=12, seed=seed)
    par = RunConfig("fafed", p, HyperParams(q=3), total_steps=12, seed=seed, workers=workers)
    assert format_csv(run_experiment(base).rows) == format_csv(run_experiment(par).rows)
