"""Exact desk-scale MILP solving by LP-based branch and bound.

Relaxations are solved with HiGHS through ``scipy.optimize.linprog``; the
search itself is deterministic best-bound with branching priorities that
follow the decision cascade (bid placement, then acceptance, then
fulfilment), so fixing upstream binaries collapses most of the downstream
structure. An always-feasible no-bid incumbent seeds pruning, and every
incumbent is polished by re-solving the LP with its binaries fixed.
"""

from __future__ import annotations

import heapq
import json
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import ConsistencyError, ModelBuildError
from .formulation import EQ, GE, LE, MilpModel, no_bid_values, var_name
from .markets import MARKETS

logger = logging.getLogger(__name__)

#: Instances with more binaries than this get a loud warning before solving.
BINARY_GUARDRAIL = 5000

_BRANCH_PRIORITY = {"x_bid": 0, "x_acc": 1, "w_ok": 2}


@dataclass(frozen=True)
class SolverOptions:
    gap_abs: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int = 500_000
    time_limit_s: float | None = None
    branch_rule: str = "most_fractional"   # or "first_fractional"
    deterministic: bool = True             # kept for interface parity; the
    # search is serial and therefore always deterministic.

    def __post_init__(self) -> None:
        if self.gap_abs <= 0 or self.int_tol <= 0:
            raise ModelBuildError("solver tolerances must be positive")
        if self.branch_rule not in ("most_fractional", "first_fractional"):
            raise ModelBuildError(f"unknown branch rule {self.branch_rule!r}")


@dataclass
class Solution:
    """A (near-)optimal assignment with bookkeeping.

    ``values`` maps canonical variable names to floats; binaries are rounded
    exactly to 0/1. ``objective`` is recomputed from ``values`` and the model
    objective at extraction time.
    """

    objective: float
    status: str                      # optimal | infeasible | bound_limit
    values: dict[str, float]
    gap: float = 0.0
    node_count: int = 0
    wall_time_s: float = 0.0

    def value(self, kind: str, **idx) -> float:
        return self.values[var_name(kind, **idx)]


@dataclass
class Compiled:
    """Matrix form of a model, reused across all LP relaxations."""

    c: np.ndarray                   # maximization objective
    a_ub: sp.csr_matrix | None
    b_ub: np.ndarray
    a_eq: sp.csr_matrix | None
    b_eq: np.ndarray
    bounds: np.ndarray              # (n, 2)
    binary_cols: np.ndarray
    priorities: np.ndarray          # per binary col


def compile_model(model: MilpModel) -> Compiled:
    n = model.n_variables
    c = np.zeros(n)
    for col, coef in model.objective.items():
        c[col] = coef
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for con in model.constraints:
        if con.sense == EQ:
            eq_rows.append((con.cols, con.coefs))
            eq_rhs.append(con.rhs)
        elif con.sense == LE:
            ub_rows.append((con.cols, con.coefs))
            ub_rhs.append(con.rhs)
        else:  # GE: negate into <=
            ub_rows.append((con.cols, tuple(-x for x in con.coefs)))
            ub_rhs.append(-con.rhs)

    def to_csr(rows):
        if not rows:
            return None
        data, ri, ci = [], [], []
        for r, (cols, coefs) in enumerate(rows):
            ri.extend([r] * len(cols))
            ci.extend(cols)
            data.extend(coefs)
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))

    bounds = np.empty((n, 2))
    for i, v in enumerate(model.variables):
        bounds[i] = (v.lb, v.ub)
    binary_cols = np.array([i for i, v in enumerate(model.variables) if v.is_integer],
                           dtype=int)
    priorities = np.array([_BRANCH_PRIORITY.get(model.variables[i].kind, 3)
                           for i in binary_cols], dtype=int)
    return Compiled(c=c, a_ub=to_csr(ub_rows), b_ub=np.array(ub_rhs),
                    a_eq=to_csr(eq_rows), b_eq=np.array(eq_rhs),
                    bounds=bounds, binary_cols=binary_cols, priorities=priorities)


def _solve_lp(comp: Compiled, bounds: np.ndarray):
    """Maximize over the LP relaxation; returns (objective, x) or (None, None)."""
    res = linprog(-comp.c, A_ub=comp.a_ub, b_ub=comp.b_ub if comp.a_ub is not None else None,
                  A_eq=comp.a_eq, b_eq=comp.b_eq if comp.a_eq is not None else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return None, None
    if res.status != 0:
        raise ConsistencyError(f"LP relaxation ended with status {res.status}: {res.message}")
    return -res.fun, res.x


@dataclass(order=True)
class _Node:
    sort_key: tuple
    patches: list = field(compare=False)


def solve_bb(model: MilpModel, opts: SolverOptions = SolverOptions()) -> Solution:
    """Branch and bound to proven optimality (within the absolute gap)."""
    start = time.perf_counter()
    comp = compile_model(model)
    if comp.binary_cols.size > BINARY_GUARDRAIL:
        logger.warning("instance has %d binaries (guardrail %d); consider exporting "
                       "to an industrial solver", comp.binary_cols.size, BINARY_GUARDRAIL)

    # Always-feasible incumbent: bid nowhere. Guarantees optimal >= its value.
    incumbent_x = model.values_to_vector(no_bid_values(model))
    incumbent_obj = float(comp.c @ incumbent_x)

    def materialize(patches) -> np.ndarray:
        b = comp.bounds.copy()
        for col, val in patches:
            b[col, 0] = b[col, 1] = val
        return b

    def polish(x: np.ndarray):
        """Fix binaries at rounded values of x, re-solve the continuous LP."""
        b = comp.bounds.copy()
        vals = np.round(x[comp.binary_cols])
        b[comp.binary_cols, 0] = vals
        b[comp.binary_cols, 1] = vals
        return _solve_lp(comp, b)

    meta = model.meta
    dive_cols = _dive_columns(model)

    def domain_dive(x: np.ndarray):
        """Feasible completion guided by the decision cascade: derive bids and
        acceptances from the relaxed prices, let the LP place the dispatch,
        then pin fulfilment flags to 1 only where no shortfall remained."""
        b = comp.bounds.copy()
        bid_cols, acc_cols, price_cols, ok_cols, thresholds = dive_cols
        for h in range(1, meta["H"] + 1):
            price = x[price_cols[h]]
            cols = bid_cols[h]
            vals = x[cols]
            pick = int(np.argmax(vals)) if vals.size and vals.max() >= 0.5 else -1
            for j, col in enumerate(cols):
                bid = 1.0 if j == pick else 0.0
                b[col, 0] = b[col, 1] = bid
                for s in range(meta["S"]):
                    acc = 1.0 if (bid == 1.0 and price <= thresholds[s, h - 1, j]) else 0.0
                    col_acc = acc_cols[s, h][j]
                    b[col_acc, 0] = b[col_acc, 1] = acc
        obj, y = _solve_lp(comp, b)
        if obj is None:
            return None, None
        for (s, h), col in ok_cols.items():
            ok = 1.0 if y[col] >= 1.0 - opts.int_tol else 0.0
            b[col, 0] = b[col, 1] = ok
        return _solve_lp(comp, b)

    def try_incumbent(obj: float, x: np.ndarray) -> None:
        nonlocal incumbent_obj, incumbent_x
        if obj > incumbent_obj + 1e-12:
            incumbent_obj, incumbent_x = obj, x

    def fractional(x: np.ndarray) -> np.ndarray:
        vals = x[comp.binary_cols]
        return np.abs(vals - np.round(vals)) > opts.int_tol

    def pick_branch(x: np.ndarray, frac_mask: np.ndarray) -> int:
        cand = np.flatnonzero(frac_mask)
        prio = comp.priorities[cand]
        cand = cand[prio == prio.min()]
        if opts.branch_rule == "most_fractional":
            dist = np.abs(x[comp.binary_cols[cand]] - 0.5)
            cand = cand[dist == dist.min()]
        return int(comp.binary_cols[cand[0]])

    node_count = 0
    seq = 0
    status = "optimal"
    heap: list[_Node] = []
    root = _Node(sort_key=(-np.inf, seq), patches=[])
    heap.append(root)
    best_open_bound = np.inf

    while heap:
        node = heapq.heappop(heap)
        parent_bound = -node.sort_key[0]
        if parent_bound <= incumbent_obj + opts.gap_abs:
            best_open_bound = parent_bound
            break
        if node_count >= opts.node_limit:
            status = "bound_limit"
            best_open_bound = parent_bound
            break
        if opts.time_limit_s is not None and time.perf_counter() - start > opts.time_limit_s:
            status = "bound_limit"
            best_open_bound = parent_bound
            break

        bounds = materialize(node.patches)
        obj, x = _solve_lp(comp, bounds)
        node_count += 1
        if obj is None:
            continue
        if obj <= incumbent_obj + opts.gap_abs:
            continue
        frac = fractional(x)
        if not frac.any():
            pobj, px = polish(x)
            if pobj is None:   # fixing at rounded values hit a tolerance edge
                pobj, px = obj, x
            try_incumbent(pobj, px)
            continue
        if node_count == 1 or node_count % 250 == 0:
            # Dive: complete the relaxation along the decision cascade; this
            # lands on (near-)optimal plans long before the tree does.
            pobj, px = domain_dive(x)
            if pobj is not None and not fractional(px).any():
                try_incumbent(pobj, px)
        col = pick_branch(x, frac)
        for val in (1.0, 0.0):
            seq += 1
            heapq.heappush(heap, _Node(sort_key=(-obj, seq),
                                       patches=node.patches + [(col, val)]))
    else:
        best_open_bound = incumbent_obj

    if not heap and status == "optimal":
        best_open_bound = incumbent_obj

    gap = max(0.0, best_open_bound - incumbent_obj)
    if status == "optimal":
        gap = min(gap, opts.gap_abs)

    # Extract, rounding binaries exactly and recomputing the objective.
    x = incumbent_x.copy()
    x[comp.binary_cols] = np.round(x[comp.binary_cols])
    objective = float(comp.c @ x)
    solution = Solution(objective=objective, status=status,
                        values=model.vector_to_values(x), gap=gap,
                        node_count=node_count,
                        wall_time_s=time.perf_counter() - start)
    report = validate(solution, model)
    if not report.ok:
        raise ConsistencyError(
            f"extracted solution violates the model it came from:\n{report}")
    return solution


def solve_with_fixed_binaries(model: MilpModel, fixed: dict[str, float]):
    """Solve the LP left after pinning the named binaries; None if infeasible.

    Returns ``(objective, values)``.
    """
    comp = compile_model(model)
    bounds = comp.bounds.copy()
    for name, val in fixed.items():
        col = model.col(name)
        bounds[col, 0] = bounds[col, 1] = float(val)
    obj, x = _solve_lp(comp, bounds)
    if obj is None:
        return None, None
    return obj, model.vector_to_values(x)


@dataclass
class ViolationReport:
    constraint_violations: list[tuple[str, int, float]]
    product_mismatches: list[tuple[str, float, float]]
    bound_violations: list[tuple[str, float]]
    integrality_violations: list[tuple[str, float]]
    objective_mismatch: float

    @property
    def ok(self) -> bool:
        return not (self.constraint_violations or self.product_mismatches
                    or self.bound_violations or self.integrality_violations
                    or self.objective_mismatch > 0)

    def __str__(self) -> str:
        if self.ok:
            return "no violations"
        parts = []
        for tag, idx, amount in self.constraint_violations[:20]:
            parts.append(f"constraint {tag}[{idx}] violated by {amount:.3e}")
        for label, got, expected in self.product_mismatches[:20]:
            parts.append(f"product {label}: {got!r} != {expected!r}")
        for name, amount in self.bound_violations[:20]:
            parts.append(f"bound on {name} violated by {amount:.3e}")
        for name, val in self.integrality_violations[:20]:
            parts.append(f"binary {name} is fractional: {val!r}")
        if self.objective_mismatch > 0:
            parts.append(f"objective mismatch {self.objective_mismatch:.3e}")
        return "\n".join(parts)


def validate(solution: Solution, model: MilpModel, tol: float = 1e-6) -> ViolationReport:
    """Check a solution against every constraint, bound, integrality flag and
    linearized-product definition of the model."""
    x = model.values_to_vector(solution.values)
    con_bad: list[tuple[str, int, float]] = []
    tag_counters: dict[str, int] = {}
    for con in model.constraints:
        k = tag_counters.get(con.tag, 0)
        tag_counters[con.tag] = k + 1
        lhs = float(sum(coef * x[col] for col, coef in zip(con.cols, con.coefs)))
        if con.sense == LE:
            excess = lhs - con.rhs
        elif con.sense == GE:
            excess = con.rhs - lhs
        else:
            excess = abs(lhs - con.rhs)
        if excess > tol:
            con_bad.append((con.tag, k, excess))

    bound_bad = []
    int_bad = []
    for i, v in enumerate(model.variables):
        if x[i] < v.lb - tol or x[i] > v.ub + tol:
            bound_bad.append((v.name, float(max(v.lb - x[i], x[i] - v.ub))))
        if v.is_integer and abs(x[i] - round(x[i])) > tol:
            int_bad.append((v.name, float(x[i])))

    obj = float(sum(coef * x[col] for col, coef in model.objective.items()))
    mismatch = abs(obj - solution.objective)
    return ViolationReport(
        constraint_violations=con_bad,
        product_mismatches=model.check_products(x, tol),
        bound_violations=bound_bad,
        integrality_violations=int_bad,
        objective_mismatch=mismatch if mismatch > tol else 0.0,
    )


def solution_to_json(solution: Solution, model: MilpModel, path: str | Path,
                     thin_dispatch: int = 1) -> None:
    """Dump decisions, dispatch and the SOC trajectory as JSON.

    ``thin_dispatch=k`` keeps every k-th step of the per-step series.
    """
    meta = model.meta
    S, H, T = meta["S"], meta["H"], meta["T"]
    step = meta["step_minutes"]
    get = solution.values.get
    scenarios = []
    for s in range(S):
        hours = []
        for h in range(1, H + 1):
            bid_market = None
            for mk in MARKETS:
                if get(var_name("x_bid", h=h, m=mk), 0.0) > 0.5:
                    bid_market = mk.value
            hours.append({
                "hour": h,
                "bid_market": bid_market,
                "bid_price": get(var_name("x_price", h=h), 0.0),
                "accepted": {mk.value: bool(get(var_name("x_acc", s=s, h=h, m=mk), 0.0) > 0.5)
                             for mk in MARKETS},
                "fulfilled": bool(get(var_name("w_ok", s=s, h=h), 0.0) > 0.5),
            })
        dispatch = []
        for t in range(1, T + 1, max(1, thin_dispatch)):
            dch = sum(get(var_name("z_dch", s=s, t=t, m=mk), 0.0) for mk in MARKETS)
            ch = sum(get(var_name("z_ch", s=s, t=t, m=mk), 0.0) for mk in MARKETS)
            net = sum(get(var_name("z_net", s=s, t=t, m=mk), 0.0) for mk in MARKETS)
            dispatch.append({
                "step": t,
                "minute": 1 + (t - 1) * step,
                "discharge_mwh": dch,
                "charge_mwh": ch,
                "soc_end_mwh": get(var_name("z_soc", s=s, t=t), 0.0) - net,
            })
        scenarios.append({"scenario": meta["scenario_ids"][s], "hours": hours,
                          "dispatch": dispatch})
    blob = {
        "objective_eur": solution.objective,
        "status": solution.status,
        "gap": solution.gap,
        "node_count": solution.node_count,
        "wall_time_s": solution.wall_time_s,
        "scenarios": scenarios,
    }
    Path(path).write_text(json.dumps(blob, indent=2) + "\n")
