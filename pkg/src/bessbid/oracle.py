"""Exhaustive reference optimizer for tiny instances.

Independent of the MILP pipeline: it enumerates every bid pattern and every
candidate bid price (price levels other than the scenario thresholds and the
floor can never change an acceptance, so the grid is exact), derives forced
acceptances by threshold comparison, and completes each scenario exactly by
trying, per hour, the honored delivery and the deliberate-default
alternatives. Dispatch freedom on defaulted hours reduces to one bounded
scalar per hour (the within-hour walk is monotone), so the remaining
continuous problem is a tiny chain program solved by exact vertex
enumeration — settlement arithmetic only, no LP.

An admissible hour-separable bound (battery limits ignored) prunes the
enumeration without giving up exactness.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .droop import EnergyRequirement
from .errors import EnumerationLimitError, ValidationError
from .markets import (FREQUENCY_MARKETS, MARKETS, MARKET_INDEX, BessConfig,
                      DegradationSchedule, Market)
from .formulation import var_name
from .scenarios import ScenarioSet
from .solver import Solution

MAX_HOURS = 4
MAX_SCENARIOS = 2
MIN_STEP_MINUTES = 15

_NONE, _FULFIL, _FAIL = "none", "fulfil", "fail"


def candidate_prices(scenarios: ScenarioSet, config: BessConfig, h: int,
                     market: Market) -> list[float]:
    """Bid-price grid for one hour and market: the floor plus every scenario
    threshold that the configured price bounds allow."""
    bid_max = config.resolve_bid_max(scenarios.max_threshold())
    cands = {config.bid_min_eur}
    for s in range(scenarios.n_scenarios):
        th = scenarios.threshold(s, h, market)
        if config.bid_min_eur <= th <= bid_max:
            cands.add(th)
    return sorted(cands)


@dataclass
class _HourData:
    """Per (scenario, hour, market) aggregates driving the completion."""

    threshold: float
    u: float                 # total energy the hour obliges (MWh)
    direction: int           # +1 discharge, -1 charge, 0 idle
    mixed: bool
    total_net: float         # signed net obligation of an honored hour
    walk_max: float          # extremes of the honored within-hour SOC drop
    walk_min: float
    settle_fulfil: float     # balancing settlement of exact delivery
    pay_fulfil: float        # price-independent payment of an honored hour
    c_y: float               # settlement per MWh dispatched while defaulting
    deg: float               # degradation charge of an accepted hour


def brute_force(scenarios: ScenarioSet,
                req: EnergyRequirement,
                deg: DegradationSchedule,
                config: BessConfig,
                *,
                enabled_markets: tuple[Market, ...] | None = None,
                include_spot_charge_cost: bool = True,
                max_combo_evals: int = 500_000) -> Solution:
    """Provably optimal plan for a desk-toy instance by full enumeration."""
    S, H = scenarios.n_scenarios, scenarios.horizon_hours
    steps = scenarios.steps_per_hour
    if H > MAX_HOURS or S > MAX_SCENARIOS or scenarios.step_minutes < MIN_STEP_MINUTES:
        raise EnumerationLimitError(
            f"instance (S={S}, H={H}, step={scenarios.step_minutes}) exceeds the "
            f"enumeration bounds (S<={MAX_SCENARIOS}, H<={MAX_HOURS}, "
            f"step>={MIN_STEP_MINUTES})")
    enabled = tuple(MARKETS) if enabled_markets is None else tuple(enabled_markets)
    e_spot = config.e_spot_mwh
    bid_max = config.resolve_bid_max(scenarios.max_threshold())
    if bid_max < config.bid_min_eur:
        raise ValidationError("resolved bid ceiling sits below the bid floor")
    probs = scenarios.probabilities

    c_up = np.stack([sc.prices.balancing_up for sc in scenarios.scenarios])
    c_dn = np.stack([sc.prices.balancing_down for sc in scenarios.scenarios])

    hour_data: dict[tuple[int, int, Market], _HourData] = {}
    for s in range(S):
        for h in range(1, H + 1):
            lo, hi = (h - 1) * steps, h * steps
            for mk in MARKETS:
                m = MARKET_INDEX[mk]
                e_d = req.e_dch[s, lo:hi, m]
                e_c = req.e_ch[s, lo:hi, m]
                dch, ch = float(e_d.sum()), float(e_c.sum())
                mixed = dch > 0 and ch > 0
                if mixed and scenarios.step_minutes < 60:
                    raise EnumerationLimitError(
                        "mixed-direction obligations within one hour need hourly steps "
                        "for exact enumeration")
                walk = np.cumsum(e_d - e_c)
                up, dn = float(c_up[s, h - 1]), float(c_dn[s, h - 1])
                if mk.is_frequency:
                    settle = up * dch - dn * ch
                    pay = 0.0
                    c_y = up if dch > 0 else (-dn if ch > 0 else 0.0)
                else:
                    settle = 0.0
                    th = scenarios.threshold(s, h, mk)
                    pay = e_spot * th if mk is Market.S_DCH else (
                        -e_spot * th if include_spot_charge_cost else 0.0)
                    c_y = 0.0
                hour_data[s, h, mk] = _HourData(
                    threshold=scenarios.threshold(s, h, mk),
                    u=dch + ch,
                    direction=1 if dch > 0 else (-1 if ch > 0 else 0),
                    mixed=mixed,
                    total_net=dch - ch,
                    walk_max=float(walk.max(initial=0.0)),
                    walk_min=float(walk.min(initial=0.0)),
                    settle_fulfil=settle,
                    pay_fulfil=pay,
                    c_y=c_y,
                    deg=deg.hour_total(s, h, m, steps),
                )

    # Choice table: 0 = no bid; otherwise (market, price level). Levels outside
    # the legal price band collapse onto the floor (duplicates are harmless).
    levels = S + 1
    choices: list[tuple[Market, int] | None] = [None]
    for mk in enabled:
        for lvl in range(levels):
            choices.append((mk, lvl))
    J = len(choices)

    def level_price(h: int, mk: Market, lvl: int) -> float:
        if lvl == 0:
            return config.bid_min_eur
        th = scenarios.threshold(lvl - 1, h, mk)
        if config.bid_min_eur <= th <= bid_max:
            return th
        return config.bid_min_eur

    # --- phase 1: hour-separable admissible bound over all assignments ------

    def accepted_case_values(s: int, h: int, mk: Market, price: float):
        """(fulfil value, fail value or None) for an accepted hour, SOC ignored."""
        d = hour_data[s, h, mk]
        avail = config.p_max_mw * price if mk.is_frequency else 0.0
        pen = (float(c_up[s, h - 1]) + float(c_dn[s, h - 1])) * e_spot
        fulfil = avail + d.pay_fulfil + d.settle_fulfil - d.deg
        fail = None
        if d.u > 0:
            fail = -avail - pen + max(d.c_y, 0.0) * d.u - d.deg
        return fulfil, fail

    bound = np.zeros((S, H, J))
    for s in range(S):
        for h in range(1, H + 1):
            for j in range(1, J):
                mk, lvl = choices[j]
                price = level_price(h, mk, lvl)
                th = hour_data[s, h, mk].threshold
                if price > th:
                    val = 0.0
                else:
                    fulfil, fail = accepted_case_values(s, h, mk, price)
                    val = fulfil if fail is None else max(fulfil, fail)
                    if price == th:          # boundary: rejecting is also legal
                        val = max(val, 0.0)
                bound[s, h - 1, j] = val

    weighted = np.tensordot(probs, bound, axes=1)        # (H, J)
    grids = np.meshgrid(*([np.arange(J)] * H), indexing="ij")
    assignments = np.stack([g.ravel() for g in grids], axis=1)   # (N, H)
    totals = sum(weighted[h, assignments[:, h]] for h in range(H))
    order = np.argsort(-totals, kind="stable")

    # --- phase 2: exact completion of the most promising assignments --------

    def hour_cases(s: int, asg_row) -> list[list[tuple]]:
        cases_per_hour = []
        for h in range(1, H + 1):
            j = int(asg_row[h - 1])
            if j == 0:
                cases_per_hour.append([(_NONE, None, 0.0)])
                continue
            mk, lvl = choices[j]
            price = level_price(h, mk, lvl)
            th = hour_data[s, h, mk].threshold
            if price > th:
                cases_per_hour.append([(_NONE, mk, price)])
                continue
            cases: list[tuple] = []
            if price == th:
                cases.append((_NONE, mk, price))
            cases.append((_FULFIL, mk, price))
            if hour_data[s, h, mk].u > 0:
                cases.append((_FAIL, mk, price))
            cases_per_hour.append(cases)
        return cases_per_hour

    combo_budget = [max_combo_evals]

    def complete(s: int, asg_row):
        """Exact best completion of one scenario; returns (value, detail)."""
        best_val, best_detail = -np.inf, None
        for combo in itertools.product(*hour_cases(s, asg_row)):
            combo_budget[0] -= 1
            if combo_budget[0] < 0:
                raise EnumerationLimitError("completion enumeration budget exhausted")
            const_val = 0.0
            free: list[tuple[int, float, float, int]] = []  # (hour, u, c_y, direction)
            checkpoints: list[tuple[float, dict[int, float], float, float]] = []
            soc_const = config.soc_init_mwh
            coef: dict[int, float] = {}
            feasible = True
            for h, (kind, mk, price) in enumerate(combo, start=1):
                if kind == _NONE:
                    continue
                d = hour_data[s, h, mk]
                fulfil, fail = accepted_case_values(s, h, mk, price)
                if kind == _FULFIL:
                    # SOC before the hour must leave the whole walk in range.
                    checkpoints.append((soc_const, dict(coef),
                                        config.e_min_mwh + d.walk_max,
                                        config.e_max_mwh + d.walk_min))
                    soc_const -= d.total_net
                    const_val += fulfil
                else:
                    base_fail = fail - max(d.c_y, 0.0) * d.u
                    const_val += base_fail
                    idx = len(free)
                    free.append((h, d.u, d.c_y, d.direction))
                    coef = dict(coef)
                    coef[idx] = coef.get(idx, 0.0) - d.direction
                    checkpoints.append((soc_const, dict(coef),
                                        config.e_min_mwh, config.e_max_mwh))
            k = len(free)
            if k == 0:
                ok = all(lo - 1e-9 <= const <= hi + 1e-9
                         for const, _, lo, hi in checkpoints)
                if ok and const_val > best_val:
                    best_val, best_detail = const_val, (combo, ())
                continue
            # c_y already carries the sign of the settlement per unit y.
            c_vec = np.array([f[2] for f in free])
            u_vec = np.array([f[1] for f in free])
            rows, rhs = [], []
            for i in range(k):
                e = np.zeros(k)
                e[i] = 1.0
                rows.append(e)
                rhs.append(u_vec[i])
                rows.append(-e)
                rhs.append(0.0)
            for const, cf, lo, hi in checkpoints:
                g = np.zeros(k)
                for idx, val in cf.items():
                    g[idx] = -val          # expr = const + cf . y
                rows.append(g)             # expr >= lo  ->  -cf.y <= const - lo
                rhs.append(const - lo)
                rows.append(-g)
                rhs.append(hi - const)
            G = np.stack(rows)
            dvec = np.array(rhs)
            y_best, v_best = _max_over_vertices(c_vec, G, dvec, k)
            if y_best is None:
                continue
            val = const_val + v_best
            if val > best_val:
                best_val, best_detail = val, (combo, tuple(y_best))
        return best_val, best_detail

    best_total = -np.inf
    best = None
    for idx in order:
        if totals[idx] <= best_total + 1e-9 and best is not None:
            break
        row = assignments[idx]
        total = 0.0
        details = []
        for s in range(S):
            val, detail = complete(s, row)
            total += probs[s] * val
            details.append(detail)
        if total > best_total + 1e-12:
            best_total, best = total, (row, details)

    assert best is not None
    return _to_solution(best_total, best, scenarios, req, deg, config,
                        choices, level_price, include_spot_charge_cost)


def _max_over_vertices(c: np.ndarray, G: np.ndarray, d: np.ndarray, k: int):
    """Maximize c.y over {G y <= d} by enumerating basic feasible points."""
    best_y, best_v = None, -np.inf
    R = G.shape[0]
    for subset in itertools.combinations(range(R), k):
        M = G[list(subset)]
        try:
            y = np.linalg.solve(M, d[list(subset)])
        except np.linalg.LinAlgError:
            continue
        if np.all(G @ y <= d + 1e-9):
            v = float(c @ y)
            if v > best_v:
                best_y, best_v = y, v
    return best_y, best_v


def _to_solution(objective: float, best, scenarios: ScenarioSet,
                 req: EnergyRequirement, deg: DegradationSchedule,
                 config: BessConfig, choices, level_price,
                 include_spot_charge_cost: bool) -> Solution:
    """Materialize the winning plan as model-aligned variable values."""
    row, details = best
    S, H = scenarios.n_scenarios, scenarios.horizon_hours
    steps = scenarios.steps_per_hour
    T = scenarios.n_steps
    e_spot = config.e_spot_mwh
    values: dict[str, float] = {}

    prices = np.zeros(H + 1)
    bid_of: list[Market | None] = [None] * (H + 1)
    for h in range(1, H + 1):
        j = int(row[h - 1])
        if j == 0:
            continue
        mk, lvl = choices[j]
        bid_of[h] = mk
        prices[h] = level_price(h, mk, lvl)
        values[var_name("x_bid", h=h, m=mk)] = 1.0
    for h in range(1, H + 1):
        values[var_name("x_price", h=h)] = float(prices[h])

    for s in range(S):
        combo, ys = details[s]
        sc = scenarios.scenarios[s]
        y_iter = list(ys)
        free_pos = 0
        z_dch = np.zeros((T, len(MARKETS)))
        z_ch = np.zeros((T, len(MARKETS)))
        acc = np.zeros((H + 1, len(MARKETS)), dtype=bool)
        ok = np.ones(H + 1, dtype=bool)
        for h, (kind, mk, price) in enumerate(combo, start=1):
            if kind == _NONE or mk is None:
                continue
            m = MARKET_INDEX[mk]
            lo, hi = (h - 1) * steps, h * steps
            if kind == _FULFIL:
                acc[h, m] = True
                z_dch[lo:hi, m] = req.e_dch[s, lo:hi, m]
                z_ch[lo:hi, m] = req.e_ch[s, lo:hi, m]
            elif kind == _FAIL:
                acc[h, m] = True
                ok[h] = False
                y = y_iter[free_pos]
                free_pos += 1
                for t in range(lo, hi):
                    cap = float(req.e_dch[s, t, m] + req.e_ch[s, t, m])
                    take = min(cap, max(y, 0.0))
                    if req.e_dch[s, t, m] > 0:
                        z_dch[t, m] = take
                    else:
                        z_ch[t, m] = take
                    y -= take

        up = sc.prices.balancing_up
        dn = sc.prices.balancing_down
        soc = config.soc_init_mwh
        for t in range(1, T + 1):
            values[var_name("z_soc", s=s, t=t)] = soc
            net_t = 0.0
            h = (t - 1) * scenarios.step_minutes // 60 + 1
            for mk in MARKETS:
                m = MARKET_INDEX[mk]
                zd, zc = float(z_dch[t - 1, m]), float(z_ch[t - 1, m])
                a = 1.0 if acc[h, m] else 0.0
                values[var_name("z_dch", s=s, t=t, m=mk)] = zd
                values[var_name("z_ch", s=s, t=t, m=mk)] = zc
                values[var_name("z_net", s=s, t=t, m=mk)] = zd - zc
                values[var_name("s_dch", s=s, t=t, m=mk)] = a * float(req.e_dch[s, t - 1, m]) - zd
                values[var_name("s_ch", s=s, t=t, m=mk)] = a * float(req.e_ch[s, t - 1, m]) - zc
                net_t += zd - zc
            soc -= net_t

        for h in range(1, H + 1):
            lo, hi = (h - 1) * steps, h * steps
            okv = 1.0 if ok[h] else 0.0
            values[var_name("w_ok", s=s, h=h)] = okv
            freq_acc = any(acc[h, MARKET_INDEX[mk]] for mk in FREQUENCY_MARKETS)
            avail = config.p_max_mw * float(prices[h]) if freq_acc else 0.0
            spot_dch = (e_spot * scenarios.threshold(s, h, Market.S_DCH)
                        if acc[h, MARKET_INDEX[Market.S_DCH]] else 0.0)
            spot_ch = (e_spot * scenarios.threshold(s, h, Market.S_CH)
                       if acc[h, MARKET_INDEX[Market.S_CH]] else 0.0)
            energy = 0.0
            for mk in FREQUENCY_MARKETS:
                m = MARKET_INDEX[mk]
                energy += float(up[h - 1]) * float(z_dch[lo:hi, m].sum())
                energy -= float(dn[h - 1]) * float(z_ch[lo:hi, m].sum())
            values[var_name("w_avail", s=s, h=h)] = avail
            values[var_name("w_spot_dch", s=s, h=h)] = spot_dch
            values[var_name("w_spot_ch", s=s, h=h)] = spot_ch
            values[var_name("w_won_avail", s=s, h=h)] = avail * okv
            values[var_name("w_lost_avail", s=s, h=h)] = avail * (1 - okv)
            values[var_name("w_won_spot_dch", s=s, h=h)] = spot_dch * okv
            values[var_name("w_lost_spot_dch", s=s, h=h)] = (
                float(up[h - 1]) * e_spot * (1 - okv))
            values[var_name("w_lost_spot_ch", s=s, h=h)] = (
                float(dn[h - 1]) * e_spot * (1 - okv))
            if include_spot_charge_cost:
                values[var_name("w_won_spot_ch", s=s, h=h)] = spot_ch * okv
            values[var_name("w_energy", s=s, h=h)] = energy
            for mk in MARKETS:
                if acc[h, MARKET_INDEX[mk]]:
                    values[var_name("x_acc", s=s, h=h, m=mk)] = 1.0

    return Solution(objective=float(objective), status="optimal", values=values)
