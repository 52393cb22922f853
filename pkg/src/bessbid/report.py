"""Settlement recomputation and result artifacts.

Everything here is derived from first principles — prices times decisions
times quantities read off the solution — through a code path that shares no
coefficient tables with the model builder. The recomputed expected total
must land on the solver objective exactly; any drift flags a linearization
or solver bug.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .droop import EnergyRequirement
from .errors import ConsistencyError
from .formulation import var_name
from .markets import (FREQUENCY_MARKETS, MARKETS, MARKET_INDEX, BessConfig,
                      DegradationSchedule, Market)
from .scenarios import ScenarioSet
from .solver import Solution


@dataclass
class SettlementReport:
    """Per (scenario, hour) revenue decomposition plus participation shares.

    All money arrays are (S, H) in EUR; ``expected_total_eur`` is the
    probability-weighted sum of every component with its objective sign.
    """

    scenario_ids: list[str]
    probabilities: np.ndarray
    availability_won: np.ndarray
    availability_lost: np.ndarray
    spot_dch_won: np.ndarray
    spot_dch_penalty: np.ndarray
    spot_ch_cost: np.ndarray
    spot_ch_penalty: np.ndarray
    energy_settlement: np.ndarray
    degradation_cost: np.ndarray
    pct_hours_bid: dict[str, float]                 # per market, first stage
    pct_hours_accepted: dict[str, np.ndarray]       # per market, per scenario
    dispatch_discharge: np.ndarray                  # (S, T) MWh per step
    dispatch_charge: np.ndarray                     # (S, T)
    soc_end: np.ndarray                             # (S, T) after each step
    step_minutes: int
    expected_total_eur: float = 0.0

    def hour_net(self) -> np.ndarray:
        return (self.availability_won - self.availability_lost
                + self.spot_dch_won - self.spot_dch_penalty
                - self.spot_ch_cost - self.spot_ch_penalty
                + self.energy_settlement - self.degradation_cost)

    def scenario_totals(self) -> np.ndarray:
        return self.hour_net().sum(axis=1)

    def pct_idle(self) -> float:
        return 100.0 - sum(self.pct_hours_bid.values())

    def as_json(self) -> dict:
        return {
            "expected_total_eur": self.expected_total_eur,
            "scenario_totals_eur": {sid: float(v) for sid, v
                                    in zip(self.scenario_ids, self.scenario_totals())},
            "pct_hours_bid": self.pct_hours_bid,
            "pct_hours_accepted": {m: {sid: float(v) for sid, v
                                       in zip(self.scenario_ids, arr)}
                                   for m, arr in self.pct_hours_accepted.items()},
            "pct_hours_idle": self.pct_idle(),
            "components_eur": {
                "availability_won": float(self.availability_won.sum()),
                "availability_lost": float(self.availability_lost.sum()),
                "spot_dch_won": float(self.spot_dch_won.sum()),
                "spot_dch_penalty": float(self.spot_dch_penalty.sum()),
                "spot_ch_cost": float(self.spot_ch_cost.sum()),
                "spot_ch_penalty": float(self.spot_ch_penalty.sum()),
                "energy_settlement": float(self.energy_settlement.sum()),
                "degradation_cost": float(self.degradation_cost.sum()),
            },
        }


def settle(solution: Solution,
           scenarios: ScenarioSet,
           req: EnergyRequirement,
           deg: DegradationSchedule,
           config: BessConfig,
           *,
           include_spot_charge_cost: bool = True,
           tol: float = 1e-6) -> SettlementReport:
    """Recompute every revenue stream from the raw decisions in ``solution``.

    Raises :class:`ConsistencyError` when a recomputed component disagrees
    with the solver's linearized value beyond ``tol``.
    """
    S, H, T = scenarios.n_scenarios, scenarios.horizon_hours, scenarios.n_steps
    steps = scenarios.steps_per_hour
    e_spot = config.e_spot_mwh
    get = solution.values.get

    shape = (S, H)
    avail_won = np.zeros(shape)
    avail_lost = np.zeros(shape)
    sd_won = np.zeros(shape)
    sd_pen = np.zeros(shape)
    sc_cost = np.zeros(shape)
    sc_pen = np.zeros(shape)
    energy = np.zeros(shape)
    deg_cost = np.zeros(shape)
    dispatch_d = np.zeros((S, T))
    dispatch_c = np.zeros((S, T))
    soc_end = np.zeros((S, T))
    mismatches: list[str] = []

    def check(label: str, recomputed: float, solver_name: str) -> None:
        solver_val = get(solver_name)
        if solver_val is None:
            return
        if abs(solver_val - recomputed) > tol:
            mismatches.append(f"{label}: settlement {recomputed!r} vs solver {solver_val!r}")

    bid = {(h, mk): get(var_name("x_bid", h=h, m=mk), 0.0) > 0.5
           for h in range(1, H + 1) for mk in MARKETS}

    for s in range(S):
        sc = scenarios.scenarios[s]
        up, dn = sc.prices.balancing_up, sc.prices.balancing_down
        for h in range(1, H + 1):
            price = get(var_name("x_price", h=h), 0.0)
            ok = get(var_name("w_ok", s=s, h=h), 0.0) > 0.5
            acc = {mk: get(var_name("x_acc", s=s, h=h, m=mk), 0.0) > 0.5 for mk in MARKETS}
            freq_accepted = any(acc[mk] for mk in FREQUENCY_MARKETS)
            avail = config.p_max_mw * price if freq_accepted else 0.0
            spot_dch_pay = (e_spot * sc.prices.threshold[h - 1, MARKET_INDEX[Market.S_DCH]]
                            if acc[Market.S_DCH] else 0.0)
            spot_ch_pay = (e_spot * sc.prices.threshold[h - 1, MARKET_INDEX[Market.S_CH]]
                           if acc[Market.S_CH] else 0.0)

            avail_won[s, h - 1] = avail if ok else 0.0
            avail_lost[s, h - 1] = 0.0 if ok else avail
            sd_won[s, h - 1] = spot_dch_pay if ok else 0.0
            sd_pen[s, h - 1] = 0.0 if ok else float(up[h - 1]) * e_spot
            if include_spot_charge_cost:
                sc_cost[s, h - 1] = spot_ch_pay if ok else 0.0
            sc_pen[s, h - 1] = 0.0 if ok else float(dn[h - 1]) * e_spot

            e_val = 0.0
            for t in range((h - 1) * steps + 1, h * steps + 1):
                for mk in FREQUENCY_MARKETS:
                    e_val += float(up[h - 1]) * get(var_name("z_dch", s=s, t=t, m=mk), 0.0)
                    e_val -= float(dn[h - 1]) * get(var_name("z_ch", s=s, t=t, m=mk), 0.0)
            energy[s, h - 1] = e_val

            d_val = 0.0
            for t in range((h - 1) * steps + 1, h * steps + 1):
                for mk in MARKETS:
                    if acc[mk]:
                        d_val += float(deg.cost[s, t - 1, MARKET_INDEX[mk]])
            deg_cost[s, h - 1] = d_val

            tag = f"[{sc.id},h{h}]"
            check(f"availability_won{tag}", avail_won[s, h - 1],
                  var_name("w_won_avail", s=s, h=h))
            check(f"availability_lost{tag}", avail_lost[s, h - 1],
                  var_name("w_lost_avail", s=s, h=h))
            check(f"spot_dch_won{tag}", sd_won[s, h - 1],
                  var_name("w_won_spot_dch", s=s, h=h))
            check(f"spot_dch_penalty{tag}", sd_pen[s, h - 1],
                  var_name("w_lost_spot_dch", s=s, h=h))
            check(f"spot_ch_penalty{tag}", sc_pen[s, h - 1],
                  var_name("w_lost_spot_ch", s=s, h=h))
            if include_spot_charge_cost:
                check(f"spot_ch_cost{tag}", sc_cost[s, h - 1],
                      var_name("w_won_spot_ch", s=s, h=h))
            check(f"energy_settlement{tag}", energy[s, h - 1],
                  var_name("w_energy", s=s, h=h))

        for t in range(1, T + 1):
            zd = sum(get(var_name("z_dch", s=s, t=t, m=mk), 0.0) for mk in MARKETS)
            zc = sum(get(var_name("z_ch", s=s, t=t, m=mk), 0.0) for mk in MARKETS)
            dispatch_d[s, t - 1] = zd
            dispatch_c[s, t - 1] = zc
            soc_end[s, t - 1] = get(var_name("z_soc", s=s, t=t), 0.0) - (zd - zc)

    if mismatches:
        raise ConsistencyError(
            "settlement disagrees with the solver's linearized values:\n  "
            + "\n  ".join(mismatches[:20]))

    pct_bid = {mk.value: 100.0 * sum(bid[h, mk] for h in range(1, H + 1)) / H
               for mk in MARKETS}
    pct_acc = {}
    for mk in MARKETS:
        arr = np.zeros(S)
        for s in range(S):
            n = sum(get(var_name("x_acc", s=s, h=h, m=mk), 0.0) > 0.5
                    for h in range(1, H + 1))
            arr[s] = 100.0 * n / H
        pct_acc[mk.value] = arr

    probs = scenarios.probabilities
    report = SettlementReport(
        scenario_ids=[sc.id for sc in scenarios.scenarios],
        probabilities=probs,
        availability_won=avail_won,
        availability_lost=avail_lost,
        spot_dch_won=sd_won,
        spot_dch_penalty=sd_pen,
        spot_ch_cost=sc_cost,
        spot_ch_penalty=sc_pen,
        energy_settlement=energy,
        degradation_cost=deg_cost,
        pct_hours_bid=pct_bid,
        pct_hours_accepted=pct_acc,
        dispatch_discharge=dispatch_d,
        dispatch_charge=dispatch_c,
        soc_end=soc_end,
        step_minutes=scenarios.step_minutes,
    )
    report.expected_total_eur = float(probs @ report.scenario_totals())
    return report


def emit(report: SettlementReport, out_dir: str | Path) -> list[Path]:
    """Write ``participation.csv``, ``earnings.csv``, ``dispatch.csv`` and a
    JSON summary into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "participation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["market", "scenario", "pct_bid", "pct_accepted"])
        for mk in MARKETS:
            for s, sid in enumerate(report.scenario_ids):
                w.writerow([mk.value, sid,
                            f"{report.pct_hours_bid[mk.value]:.1f}",
                            f"{report.pct_hours_accepted[mk.value][s]:.1f}"])
    written.append(path)

    path = out / "earnings.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "hour", "availability_won", "availability_lost",
                    "spot_dch_won", "spot_dch_penalty", "spot_ch_cost",
                    "spot_ch_penalty", "energy_settlement", "degradation_cost",
                    "net"])
        net = report.hour_net()
        for s, sid in enumerate(report.scenario_ids):
            for h in range(net.shape[1]):
                w.writerow([sid, h + 1] + [repr(float(a[s, h])) for a in (
                    report.availability_won, report.availability_lost,
                    report.spot_dch_won, report.spot_dch_penalty,
                    report.spot_ch_cost, report.spot_ch_penalty,
                    report.energy_settlement, report.degradation_cost, net)])
    written.append(path)

    path = out / "dispatch.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "step", "minute", "discharge_mwh", "charge_mwh",
                    "soc_mwh"])
        for s, sid in enumerate(report.scenario_ids):
            for t in range(report.dispatch_discharge.shape[1]):
                w.writerow([sid, t + 1, 1 + t * report.step_minutes,
                            repr(float(report.dispatch_discharge[s, t])),
                            repr(float(report.dispatch_charge[s, t])),
                            repr(float(report.soc_end[s, t]))])
    written.append(path)

    path = out / "settlement.json"
    path.write_text(json.dumps(report.as_json(), indent=2) + "\n")
    written.append(path)
    return written
