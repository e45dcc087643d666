"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` (lines are printed either way).
"""

import math
import time
from dataclasses import replace

import numpy as np

from fafedsim.counterexample import counterexample_drift
from fafedsim.engine import RunConfig, grid_search, run_experiment
from fafedsim.metrics import (
    ALGEBRA_RTOL,
    FD_RTOL,
    a_norm_certificate,
    chain_bound_holds,
    finite_diff_check,
    consensus_window_holds,
)
from fafedsim.optimizers import HyperParams, fafed_init
from fafedsim.problems import (
    ProblemKind,
    client_grads,
    grad_exact,
    make_counterexample,
    make_logistic,
    make_quadratic,
)
from fafedsim.results import format_csv, write_csv
from fafedsim.rng import stream


def report(capsys, n: int, ok: bool, detail: str = ""):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}  {detail}")


# --- 1 ---------------------------------------------------------------------


def test_1_counterexample_drift(capsys):
    t0 = time.perf_counter()
    res = counterexample_drift(steps=50, eta=0.1, beta=0.5, x0=10.0)
    elapsed = time.perf_counter() - t0
    x1 = res.rows[0].x_bar
    c = res.first_clients
    ok = (
        10.046 <= x1 <= 10.048
        and abs(c[0] - 9.8586) <= 1e-3
        and abs(c[1] - 10.1414) <= 1e-3 and abs(c[2] - 10.1414) <= 1e-3
        and len(res.rows) == 50 and res.max_diff <= 1e-9
        and elapsed < 1.0
    )
    report(capsys, 1, ok, f"x1={x1:.10f} clients={np.round(c, 6).tolist()} "
                          f"max drift diff={res.max_diff:.2e} time={elapsed:.3f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------


def _fafed_counterexample(q: int):
    rec = run_experiment(RunConfig("fafed", make_counterexample(), HyperParams(q=q),
                                   total_steps=2000, audit=True))
    # x̄ after init and after each step; sync boundaries are 0, q, 2q, ...
    xs = [float(x.mean()) for x, _, _ in rec.audit.states]
    syncs = list(range(0, len(xs), q))
    wrong_sign = [(a, xs[a]) for a, b in zip(syncs, syncs[1:]) if xs[a] > 1 and xs[b] - xs[a] >= 0]
    return xs[-1], wrong_sign


def test_2_fafed_fixes_the_drift(capsys):
    t0 = time.perf_counter()
    details, ok = [], True
    for q in (1, 10):
        final, wrong = _fafed_counterexample(q)
        good = abs(final) <= 1e-2 and not wrong
        ok &= good
        details.append(f"q={q}: |x_T|={abs(final):.3g} nonneg-round-updates-above-1={len(wrong)}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 2.0  # two runs, each under 1 s
    report(capsys, 2, ok, "; ".join(details) + f" time={elapsed:.3f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------

SEEDS = range(5)
THRESHOLD = 1e-2
FEDAVG_GRID = {"eta": [0.001, 0.01, 0.02, 0.05, 0.1]}
FAFED_GRID = {"rho_hbar": [0.1, 0.3, 1.0], "c": [0.1, 1.0, 10.0]}


def _quadratic_comparison(seed: int):
    p = make_quadratic(8, 20, center_spread=2.0, noise_sigma=0.5, seed=seed)
    common = dict(seed=seed, record_every=10, stop_grad_norm=THRESHOLD, x0=tuple(np.zeros(20)))
    # equal budgets: FedAvg spends 40 samples per step, FAFED 80 plus 400 at init
    fedavg = grid_search(
        RunConfig("fedavg", p, HyperParams(q=10, b=5, eta_mode="constant"), total_steps=6000, **common),
        FEDAVG_GRID, score="samples_to_threshold", threshold=THRESHOLD)
    fafed = grid_search(
        RunConfig("fafed", p, HyperParams(q=10, b=5, init_batch=50), total_steps=3000, **common),
        FAFED_GRID, score="samples_to_threshold", threshold=THRESHOLD)
    s_avg = min(s for _, s in fedavg.table)
    s_fafed = min(s for _, s in fafed.table)
    mt = fafed.best.column("metric_mt")
    k = max(1, len(mt) // 10)
    ratio = float(np.median(mt[:k]) / np.median(mt[-k:]))
    return s_fafed, s_avg, ratio


def test_3_convergence_comparison(capsys):
    t0 = time.perf_counter()
    wins, decays, lines = 0, 0, []
    for seed in SEEDS:
        s_fafed, s_avg, ratio = _quadratic_comparison(seed)
        win = math.isfinite(s_fafed) and s_fafed <= s_avg
        wins += win
        decays += ratio >= 10.0
        lines.append(f"seed {seed}: fafed={s_fafed:.0f} fedavg={s_avg:.0f} Mt-ratio={ratio:.1f}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and decays == len(SEEDS) and elapsed < 60.0
    report(capsys, 3, ok, f"wins={wins}/5 Mt-decay={decays}/5 time={elapsed:.1f}s | " + " | ".join(lines))
    assert ok


# --- 4 ---------------------------------------------------------------------


def _audited(algo, problem, hp, steps=60, seed=0, x0=None):
    return run_experiment(RunConfig(algo, problem, hp, total_steps=steps, seed=seed, audit=True, x0=x0))


def _sync_exact(rec) -> bool:
    s = rec.audit.series
    return all(s["x_spread"][k] == s["m_spread"][k] == s["v_spread"][k] == 0.0
               for k, sync in enumerate(s["is_sync"]) if sync)


def _all_rows_equal(states) -> bool:
    return all(np.all(a == a[0]) for st in states for a in st)


def test_4_invariant_suite(capsys):
    quad = make_quadratic(6, 5, seed=1)
    logi = make_logistic(4, 3, samples_per_client=50, seed=2)
    fafed_runs = [_audited("fafed", p, HyperParams(q=q)) for p in (quad, logi) for q in (1, 4, 7)]
    fafed_runs.append(_audited("fafed", make_counterexample(), HyperParams(q=10), steps=300))

    a = all(_sync_exact(r) for r in fafed_runs)
    b = all(min(r.audit.series["a_min"]) >= r.audit.rho for r in fafed_runs)

    # (c) alpha = 1 and A = rho: FAFED from x1 equals local SGD at rate eta / rho
    det = make_quadratic(4, 3, noise_sigma=0.0, seed=3)
    hp = HyperParams(q=4, c=1e9, adaptive=False, eta_mode="constant", eta=0.001, full_batch=True)
    x1 = fafed_init(det, hp, 0)[1].x_bar
    f = _audited("fafed", det, hp, steps=40)
    g = _audited("fedavg", det, replace(hp, eta=hp.eta / hp.rho), steps=40, x0=tuple(x1))
    c = all(np.array_equal(s1[0], s2[0]) for s1, s2 in zip(f.audit.states, g.audit.states))

    # (d) homogeneous + full batch: every client holds the same state at every step
    homo = make_quadratic(5, 3, identical_clients=True, seed=4)
    d = all(_all_rows_equal(_audited(algo, homo, HyperParams(q=3, full_batch=True), steps=30).audit.states)
            for algo in ("fafed", "naive-adaptive", "fedavg", "fedadam"))

    # (e) sigma = 0, full batch: m_{t,i} = grad f_i at the point step t started from.
    # Init and every sync overwrite m_i with the client mean, so on heterogeneous
    # clients only the mean obeys the identity; per client it needs N = 1 or
    # identical clients.
    def telescoping(problem, q, steps=30, per_client=True):
        rec = _audited("fafed", problem, HyperParams(q=q, full_batch=True), steps=steps)
        starts = [np.tile(problem.x0, (problem.n_clients, 1))] + [st[0] for st in rec.audit.states[:-1]]
        worst = 0.0
        for x, (_, m, _) in zip(starts, rec.audit.states):
            exact = client_grads(problem, x)
            if per_client:
                worst = max(worst, float(np.max(np.abs(m - exact))))
            else:
                worst = max(worst, float(np.max(np.abs(m.mean(0) - exact.mean(0)))))
        return worst

    single = make_quadratic(1, 4, noise_sigma=0.0, seed=5)
    homo0 = make_quadratic(4, 4, noise_sigma=0.0, identical_clients=True, seed=5)
    hetero = make_quadratic(4, 4, noise_sigma=0.0, seed=5)
    tele = {
        "N=1": telescoping(single, 3),
        "homogeneous": telescoping(homo0, 3),
        "heterogeneous, client mean": telescoping(hetero, 3, per_client=False),
    }
    e = all(v <= 1e-12 for v in tele.values())

    ok = a and b and c and d and e
    tele_s = ", ".join(f"{k}:{v:.1e}" for k, v in tele.items())
    report(capsys, 4, ok, f"(a)={a} (b)={b} (c)={c} (d)={d} (e)={e} [{tele_s}]")
    assert ok


# --- 5 ---------------------------------------------------------------------


def test_5_analysis_skeletons(capsys):
    problems = [make_quadratic(5, 4, seed=6), make_logistic(4, 3, samples_per_client=40, seed=6),
                make_counterexample()]
    chain = window_ok = cert = True
    n_runs = 0
    for p in problems:
        for algo in ("fafed", "naive-adaptive", "fedavg", "fedadam"):
            for q in (1, 5):
                hp = HyperParams(q=q)
                if p.kind is ProblemKind.COUNTEREXAMPLE and algo == "naive-adaptive":
                    hp = HyperParams(q=q, eta_mode="constant", eta=0.1, beta=0.5)
                rec = _audited(algo, p, hp, steps=200, seed=q)
                s = rec.audit.series
                n_runs += 1
                chain &= chain_bound_holds(s["a_norm"], s["move"], s["err"], s["grad_norm"], ALGEBRA_RTOL)
                window_ok &= consensus_window_holds(s["consensus"], s["window_rhs"], ALGEBRA_RTOL)
                if algo in ("fafed", "naive-adaptive"):
                    cert &= a_norm_certificate(s["a_max"], s["grad_abs_max"], rec.audit.rho,
                                               rec.audit.init_bound)
    ok = chain and window_ok and cert
    report(capsys, 5, ok, f"runs={n_runs} chain={chain} consensus-bound={window_ok} certificate={cert}")
    assert ok


# --- 6 ---------------------------------------------------------------------


def _random_points(problem, rng, n=10):
    pts = []
    while len(pts) < n:
        if problem.kind is ProblemKind.COUNTEREXAMPLE:
            x = rng.uniform(-5, 5, size=1)
            if min(abs(abs(x[0]) - 1.0), abs(x[0])) < 0.05:
                continue
        else:
            x = rng.normal(size=problem.dim) * 2.0
        pts.append(x)
    return pts


def _unbiased(problem, client, x, b=5, draws=100_000, seed=0) -> bool:
    rng = stream(seed, "probe", client)
    ids = rng.integers(0, problem.samples_per_client, size=(draws, b))
    X = np.broadcast_to(x, (draws, problem.dim))
    g = client_grads(problem, X, np.full(draws, client), ids)
    # per-sample spread over the whole local dataset sets the 4-sigma tolerance
    every = np.arange(problem.samples_per_client)[:, None]
    per_sample = client_grads(problem, np.broadcast_to(x, (len(every), problem.dim)),
                              np.full(len(every), client), every)
    sigma = per_sample.std(axis=0)
    tol = 4.0 * sigma / math.sqrt(draws * b)
    return bool(np.all(np.abs(g.mean(axis=0) - grad_exact(problem, client, x)) <= tol + 1e-15))


def test_6_oracles(capsys):
    rng = stream(99, "probe")
    fd = {}
    for p in (make_quadratic(4, 6, seed=7), make_logistic(3, 5, samples_per_client=60, seed=7),
              make_counterexample()):
        fd[p.kind.value] = max(finite_diff_check(p, x) for x in _random_points(p, rng))
    quad = make_quadratic(3, 4, noise_sigma=0.5, seed=8)
    logi = make_logistic(3, 4, samples_per_client=100, seed=8)
    mc = all(_unbiased(p, i, np.full(p.dim, 0.3), seed=i) for p in (quad, logi) for i in range(3))
    ok = all(v <= FD_RTOL for v in fd.values()) and mc
    fd_s = ", ".join(f"{k}:{v:.1e}" for k, v in fd.items())
    report(capsys, 6, ok, f"finite-diff max rel err [{fd_s}] minibatch-unbiased={mc}")
    assert ok


# --- 7 ---------------------------------------------------------------------


def test_7_determinism(capsys, tmp_path):
    quad = make_quadratic(8, 10, seed=9)
    logi = make_logistic(6, 4, samples_per_client=40, seed=9)
    same = True
    for p in (quad, logi):
        for algo in ("fafed", "naive-adaptive", "fedavg", "fedadam"):
            texts = []
            for k, workers in enumerate((1, 1, 3, 8)):
                rec = run_experiment(RunConfig(algo, p, HyperParams(q=5), total_steps=120, seed=21,
                                               record_every=7, workers=workers))
                path = write_csv(rec, tmp_path / f"{p.kind.value}-{algo}-{k}.csv")
                texts.append(path.read_bytes())
            same &= len(set(texts)) == 1
            same &= texts[0] == format_csv(rec.rows).encode()
    report(capsys, 7, same, "byte-identical CSVs across repeats and 1/3/8 workers")
    assert same
