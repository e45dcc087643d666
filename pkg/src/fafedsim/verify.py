"""Deterministic invariant suite over a recorded run."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .engine import AuditTrace
from .metrics import a_norm_certificate, chain_bound_holds, gradient_chain_bound, consensus_window_holds


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str = ""


def _nondecreasing(v) -> bool:
    return bool(np.all(np.diff(np.asarray(v)) >= 0))


def check_rows(rows, q: int | None = None) -> list:
    t = [r.t for r in rows]
    checks = [
        Check("rows present", len(rows) > 0, f"{len(rows)} rows"),
        Check("steps increasing", bool(np.all(np.diff(t) > 0)) if t else False),
        Check("samples nondecreasing", _nondecreasing([r.samples for r in rows])),
        Check("comms nondecreasing", _nondecreasing([r.comms for r in rows])),
        Check("M_t nonnegative", all(r.metric_mt >= 0 for r in rows if r.metric_mt == r.metric_mt)),
        Check("consensus nonnegative", all(r.consensus_err >= 0 for r in rows)),
    ]
    if q is not None:
        ok = all(r.comms == 1 + r.t // q for r in rows)
        checks.append(Check("comms = 1 + floor(t/q)", ok))
    return checks


def check_audit(trace: AuditTrace) -> list:
    s = {k: np.asarray(v, dtype=float) for k, v in trace.series.items()}
    lhs, rhs = gradient_chain_bound(s["a_norm"], s["move"], s["err"], s["grad_norm"])
    checks = [
        Check("chain bound (every prefix)",
              chain_bound_holds(s["a_norm"], s["move"], s["err"], s["grad_norm"]),
              f"lhs={lhs:.6g} rhs={rhs:.6g}"),
        Check("consensus within Cauchy-Schwarz window bound",
              consensus_window_holds(s["consensus"], s["window_rhs"])),
    ]
    sync = s["is_sync"].astype(bool)
    checks.append(Check("post-sync x consensus exactly 0", bool(np.all(s["x_spread"][sync] == 0.0))))
    if trace.algorithm == "fafed":
        checks.append(Check("post-sync m, v consensus exactly 0",
                            bool(np.all(s["m_spread"][sync] == 0.0) and np.all(s["v_spread"][sync] == 0.0))))
        checks.append(Check("adaptive diagonal >= rho", bool(np.all(s["a_min"] >= trace.rho)),
                            f"min={s['a_min'].min():.6g}" if len(s["a_min"]) else ""))
    if trace.algorithm in ("fafed", "naive-adaptive"):
        checks.append(Check("A entries <= running max |g| + rho",
                            a_norm_certificate(s["a_max"], s["grad_abs_max"], trace.rho, trace.init_bound)))
    return checks


def verification_suite(rows, trace: AuditTrace | None) -> list:
    checks = check_rows(rows, None if trace is None else trace.q)
    if trace is None:
        checks.append(Check("audit sidecar present", False, "rerun with --audit"))
    else:
        checks.extend(check_audit(trace))
    return checks
