"""Solver-agnostic MILP of the hourly bidding problem.

First-stage binaries pick at most one market to bid per hour and a shared
bid price; per-scenario binaries record acceptance (forced whenever the bid
price clears the scenario threshold) and whether the hour's energy promise
is honored. Continuous dispatch, shortfall slacks and a battery SOC chain
tie the hours together, and every product of a binary with a bounded
expression is replaced by a three-inequality big-M envelope so the payoff
(availability pay, spot settlement, penalties, balancing-energy settlement,
degradation) is exactly linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .droop import DROOP_BREAKPOINTS, EnergyRequirement
from .errors import ModelBuildError, ValidationError
from .markets import (FREQUENCY_MARKETS, MARKETS, MARKET_INDEX, BessConfig,
                      BigMBounds, DegradationSchedule, Market, tight_big_m)
from .scenarios import ScenarioSet

MAX_NAME_LEN = 255

LE, GE, EQ = "<=", ">=", "="


class Domain(Enum):
    BINARY = "binary"
    NONNEG = "nonneg"
    FREE = "free"


@dataclass(frozen=True)
class Variable:
    kind: str
    idx: tuple
    name: str
    domain: Domain
    lb: float
    ub: float

    @property
    def is_integer(self) -> bool:
        return self.domain is Domain.BINARY


@dataclass(frozen=True)
class LinearConstraint:
    cols: tuple[int, ...]
    coefs: tuple[float, ...]
    sense: str
    rhs: float
    tag: str

    def __post_init__(self) -> None:
        if not self.cols:
            raise ModelBuildError(f"empty constraint in family {self.tag}")
        if not all(np.isfinite(self.coefs)) or not np.isfinite(self.rhs):
            raise ModelBuildError(f"non-finite coefficient in family {self.tag}")


@dataclass(frozen=True)
class ProductCheck:
    """Defining product of one linearized variable: the envelope must force
    ``x[w] == scale * (x[cont] or 1) * g`` where ``g`` is the (possibly
    complemented) sum of the listed binaries."""

    w: int
    scale: float
    cont: int | None
    bins: tuple[int, ...]
    complement: bool
    label: str


@dataclass(frozen=True)
class ModelOptions:
    """Formulation switches.

    ``include_spot_charge_cost`` charges the clearing price for a fulfilled
    buy block (with a matching linearized term); switching it off reproduces
    the plain objective in which a fulfilled purchase is costless.
    ``conditional_zero_all`` also pins charge and net dispatch to zero above
    the discharge band, which force-fails every down-activation hour.
    ``energy_nonnegative`` restricts the hourly balancing settlement to be
    a gain. A SOC target adds soft penalties on end-of-hour deviations.
    """

    include_spot_charge_cost: bool = True
    conditional_zero_all: bool = False
    energy_nonnegative: bool = False
    soc_target_mwh: float | None = None
    soc_target_weight: float = 0.0


@dataclass
class MilpModel:
    """Variables, constraints and a maximization objective, plus metadata."""

    variables: list[Variable]
    constraints: list[LinearConstraint]
    objective: dict[int, float]
    products: list[ProductCheck]
    meta: dict

    _by_name: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._by_name:
            self._by_name = {v.name: i for i, v in enumerate(self.variables)}

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @property
    def n_binaries(self) -> int:
        return sum(1 for v in self.variables if v.is_integer)

    def col(self, name: str) -> int:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def values_to_vector(self, values: dict[str, float]) -> np.ndarray:
        x = np.zeros(self.n_variables)
        for name, val in values.items():
            x[self._by_name[name]] = val
        return x

    def vector_to_values(self, x: np.ndarray) -> dict[str, float]:
        return {v.name: float(x[i]) for i, v in enumerate(self.variables)}

    def census(self) -> dict:
        """Exact per-kind variable and per-family constraint counts."""
        var_counts: dict[str, int] = {}
        for v in self.variables:
            var_counts[v.kind] = var_counts.get(v.kind, 0) + 1
        con_counts: dict[str, int] = {}
        for c in self.constraints:
            con_counts[c.tag] = con_counts.get(c.tag, 0) + 1
        return {"variables": var_counts, "constraints": con_counts,
                "n_variables": self.n_variables, "n_constraints": self.n_constraints,
                "n_binaries": self.n_binaries}

    def check_products(self, values: dict[str, float] | np.ndarray,
                       tol: float = 1e-6) -> list[tuple[str, float, float]]:
        """Mismatches between each linearized variable and its defining product."""
        x = values if isinstance(values, np.ndarray) else self.values_to_vector(values)
        bad = []
        for p in self.products:
            g = sum(x[b] for b in p.bins)
            if p.complement:
                g = 1.0 - g
            expected = p.scale * (x[p.cont] if p.cont is not None else 1.0) * g
            got = x[p.w]
            if abs(got - expected) > tol:
                bad.append((p.label, float(got), float(expected)))
        return bad


def var_name(kind: str, *, s: int | None = None, h: int | None = None,
             t: int | None = None, m: Market | None = None) -> str:
    """Canonical variable name, e.g. ``xacc_s1_h3_FCRN`` (1-based indices)."""
    parts = [kind.replace("_", "")]
    if s is not None:
        parts.append(f"s{s + 1}")
    if h is not None:
        parts.append(f"h{h}")
    if t is not None:
        parts.append(f"t{t}")
    if m is not None:
        parts.append(m.value)
    return "_".join(parts)


INF = float("inf")


class _Builder:
    def __init__(self) -> None:
        self.variables: list[Variable] = []
        self.constraints: list[LinearConstraint] = []
        self.objective: dict[int, float] = {}
        self.products: list[ProductCheck] = []
        self._by_name: dict[str, int] = {}

    def add_var(self, kind: str, idx: tuple, domain: Domain,
                ub: float | None = None, **name_idx) -> int:
        name = var_name(kind, **name_idx)
        if len(name) > MAX_NAME_LEN:
            raise ModelBuildError(f"variable name too long: {name!r}")
        if name in self._by_name:
            raise ModelBuildError(f"duplicate variable {name!r}")
        if domain is Domain.BINARY:
            lo, hi = 0.0, 1.0
        elif domain is Domain.NONNEG:
            lo, hi = 0.0, INF
        else:
            lo, hi = -INF, INF
        if ub is not None:
            hi = min(hi, ub)
        col = len(self.variables)
        self.variables.append(Variable(kind, idx, name, domain, lo, hi))
        self._by_name[name] = col
        return col

    def add_con(self, terms: list[tuple[int, float]], sense: str, rhs: float, tag: str) -> None:
        # Merge repeated columns so exports stay canonical.
        acc: dict[int, float] = {}
        for col, coef in terms:
            acc[col] = acc.get(col, 0.0) + coef
        cols = tuple(sorted(acc))
        self.constraints.append(LinearConstraint(
            cols=cols, coefs=tuple(acc[c] for c in cols), sense=sense, rhs=rhs, tag=tag))

    def add_obj(self, col: int, coef: float) -> None:
        self.objective[col] = self.objective.get(col, 0.0) + coef


def build_model(scenarios: ScenarioSet,
                req: EnergyRequirement,
                deg: DegradationSchedule,
                config: BessConfig,
                *,
                enabled_markets: tuple[Market, ...] | None = None,
                big_m: BigMBounds | None = None,
                options: ModelOptions = ModelOptions()) -> MilpModel:
    """Assemble the full hourly bidding MILP for the given scenario set."""
    S = scenarios.n_scenarios
    H = scenarios.horizon_hours
    T = scenarios.n_steps
    M = len(MARKETS)
    steps = scenarios.steps_per_hour
    if req.e_dch.shape != (S, T, M):
        raise ModelBuildError(f"energy requirement shape {req.e_dch.shape} does not match "
                              f"scenario dimensions {(S, T, M)}")
    if deg.cost.shape != (S, T, M):
        raise ModelBuildError(f"degradation schedule shape {deg.cost.shape} does not match "
                              f"scenario dimensions {(S, T, M)}")
    if options.soc_target_mwh is not None and not (
            config.e_min_mwh <= options.soc_target_mwh <= config.e_max_mwh):
        raise ModelBuildError("SOC target must sit inside the SOC bounds")
    enabled = tuple(MARKETS) if enabled_markets is None else tuple(enabled_markets)
    if big_m is None:
        big_m = tight_big_m(config, scenarios, req)
    spot_cols = [MARKET_INDEX[mk] for mk in MARKETS if mk.is_spot]
    spot_min = min(float(sc.prices.threshold[:, spot_cols].min())
                   for sc in scenarios.scenarios)
    if spot_min < 0:
        # The unconditional payment cap w <= e_spot * price would make the
        # whole model infeasible for a negative clearing price.
        raise ModelBuildError(
            f"negative spot threshold {spot_min} is not representable; "
            f"clamp or drop those hours upstream")
    bid_max = config.resolve_bid_max(scenarios.max_threshold())
    probs = scenarios.probabilities
    thresholds = np.stack([sc.prices.threshold for sc in scenarios.scenarios])  # (S, H, M)
    c_up = np.stack([sc.prices.balancing_up for sc in scenarios.scenarios])     # (S, H)
    c_dn = np.stack([sc.prices.balancing_down for sc in scenarios.scenarios])   # (S, H)
    hour_of_t = [(t - 1) * scenarios.step_minutes // 60 + 1 for t in range(1, T + 1)]

    b = _Builder()

    # --- variables, kind-major in canonical order ---------------------------
    x_bid = {(h, m): b.add_var("x_bid", (h, mk), Domain.BINARY,
                               ub=(1.0 if mk in enabled else 0.0), h=h, m=mk)
             for h in range(1, H + 1) for m, mk in enumerate(MARKETS)}
    x_price = {h: b.add_var("x_price", (h,), Domain.NONNEG, h=h) for h in range(1, H + 1)}
    x_acc = {(s, h, m): b.add_var("x_acc", (s, h, mk), Domain.BINARY, s=s, h=h, m=mk)
             for s in range(S) for h in range(1, H + 1) for m, mk in enumerate(MARKETS)}
    z_soc = {(s, t): b.add_var("z_soc", (s, t), Domain.NONNEG, s=s, t=t)
             for s in range(S) for t in range(1, T + 1)}
    z_dch = {(s, t, m): b.add_var("z_dch", (s, t, mk), Domain.NONNEG, s=s, t=t, m=mk)
             for s in range(S) for t in range(1, T + 1) for m, mk in enumerate(MARKETS)}
    z_ch = {(s, t, m): b.add_var("z_ch", (s, t, mk), Domain.NONNEG, s=s, t=t, m=mk)
            for s in range(S) for t in range(1, T + 1) for m, mk in enumerate(MARKETS)}
    z_net = {(s, t, m): b.add_var("z_net", (s, t, mk), Domain.FREE, s=s, t=t, m=mk)
             for s in range(S) for t in range(1, T + 1) for m, mk in enumerate(MARKETS)}
    s_dch = {(s, t, m): b.add_var("s_dch", (s, t, mk), Domain.NONNEG, s=s, t=t, m=mk)
             for s in range(S) for t in range(1, T + 1) for m, mk in enumerate(MARKETS)}
    s_ch = {(s, t, m): b.add_var("s_ch", (s, t, mk), Domain.NONNEG, s=s, t=t, m=mk)
            for s in range(S) for t in range(1, T + 1) for m, mk in enumerate(MARKETS)}
    w_ok = {(s, h): b.add_var("w_ok", (s, h), Domain.BINARY, s=s, h=h)
            for s in range(S) for h in range(1, H + 1)}

    def hourly(kind: str) -> dict[tuple[int, int], int]:
        return {(s, h): b.add_var(kind, (s, h), Domain.NONNEG, s=s, h=h)
                for s in range(S) for h in range(1, H + 1)}

    w_avail = hourly("w_avail")
    w_spot_dch = hourly("w_spot_dch")
    w_spot_ch = hourly("w_spot_ch")
    w_won_avail = hourly("w_won_avail")
    w_lost_avail = hourly("w_lost_avail")
    w_won_spot_dch = hourly("w_won_spot_dch")
    w_lost_spot_dch = hourly("w_lost_spot_dch")
    w_lost_spot_ch = hourly("w_lost_spot_ch")
    w_won_spot_ch = hourly("w_won_spot_ch") if options.include_spot_charge_cost else {}
    energy_domain = Domain.NONNEG if options.energy_nonnegative else Domain.FREE
    w_energy = {(s, h): b.add_var("w_energy", (s, h), energy_domain, s=s, h=h)
                for s in range(S) for h in range(1, H + 1)}

    soc_target_on = options.soc_target_mwh is not None and options.soc_target_weight > 0.0
    hour_end_steps = [k * steps for k in range(1, H)]
    s_tgt_plus: dict[tuple[int, int], int] = {}
    s_tgt_minus: dict[tuple[int, int], int] = {}
    if soc_target_on:
        s_tgt_plus = {(s, t): b.add_var("s_soc_target_plus", (s, t), Domain.NONNEG, s=s, t=t)
                      for s in range(S) for t in hour_end_steps}
        s_tgt_minus = {(s, t): b.add_var("s_soc_target_minus", (s, t), Domain.NONNEG, s=s, t=t)
                       for s in range(S) for t in hour_end_steps}

    freq_cols = [MARKET_INDEX[mk] for mk in FREQUENCY_MARKETS]
    sdch_col = MARKET_INDEX[Market.S_DCH]
    sch_col = MARKET_INDEX[Market.S_CH]

    # --- (a) at most one market bid per hour --------------------------------
    for h in range(1, H + 1):
        b.add_con([(x_bid[h, m], 1.0) for m in range(M)], LE, 1.0, "one_bid_per_hour")

    # --- (b) acceptance implies a standing bid ------------------------------
    for s in range(S):
        for h in range(1, H + 1):
            for m in range(M):
                b.add_con([(x_acc[s, h, m], 1.0), (x_bid[h, m], -1.0)], LE, 0.0,
                          "acceptance_implies_bid")

    # --- (c) a bid priced under the threshold must be accepted --------------
    # Big-M constants are tightened per row (the family-level constant from
    # tight_big_m stays a valid fallback and is what exports report).
    for s in range(S):
        for h in range(1, H + 1):
            m_c = max(0.0, float(thresholds[s, h - 1].max()))
            terms = [(x_bid[h, m], float(thresholds[s, h - 1, m])) for m in range(M)]
            terms.append((x_price[h], -1.0))
            terms += [(x_acc[s, h, m], -m_c) for m in range(M)]
            b.add_con(terms, LE, 0.0, "forced_acceptance")

    # --- (d) a bid priced over the threshold cannot be accepted -------------
    for s in range(S):
        for h in range(1, H + 1):
            for m in range(M):
                th = float(thresholds[s, h - 1, m])
                m_d = max(0.0, bid_max - th)
                b.add_con([(x_price[h], 1.0), (x_acc[s, h, m], m_d)], LE,
                          th + m_d, "acceptance_threshold")

    # --- (e) bid-price bounds ------------------------------------------------
    for h in range(1, H + 1):
        b.add_con([(x_price[h], 1.0)], LE, bid_max, "price_upper")
        b.add_con([(x_price[h], 1.0)] + [(x_bid[h, m], -config.bid_min_eur) for m in range(M)],
                  GE, 0.0, "price_lower")

    # --- (f) dispatch + shortfall equals the accepted obligation ------------
    for s in range(S):
        for t in range(1, T + 1):
            h = hour_of_t[t - 1]
            for m in range(M):
                b.add_con([(z_dch[s, t, m], 1.0), (s_dch[s, t, m], 1.0),
                           (x_acc[s, h, m], -float(req.e_dch[s, t - 1, m]))], EQ, 0.0,
                          "dispatch_link_dch")
                b.add_con([(z_ch[s, t, m], 1.0), (s_ch[s, t, m], 1.0),
                           (x_acc[s, h, m], -float(req.e_ch[s, t - 1, m]))], EQ, 0.0,
                          "dispatch_link_ch")

    # --- (g) net dispatch -----------------------------------------------------
    for s in range(S):
        for t in range(1, T + 1):
            for m in range(M):
                b.add_con([(z_net[s, t, m], 1.0), (z_dch[s, t, m], -1.0),
                           (z_ch[s, t, m], 1.0)], EQ, 0.0, "net_dispatch")

    # --- (h) SOC chain and window ---------------------------------------------
    for s in range(S):
        b.add_con([(z_soc[s, 1], 1.0)], EQ, config.soc_init_mwh, "soc_initial")
        for t in range(2, T + 1):
            b.add_con([(z_soc[s, t], 1.0), (z_soc[s, t - 1], -1.0)]
                      + [(z_net[s, t - 1, m], 1.0) for m in range(M)], EQ, 0.0,
                      "soc_recursion")
        for t in range(1, T + 1):
            terms = [(z_soc[s, t], 1.0)] + [(z_net[s, t, m], -1.0) for m in range(M)]
            b.add_con(terms, GE, config.e_min_mwh, "soc_window_lo")
            b.add_con(terms, LE, config.e_max_mwh, "soc_window_hi")

    # --- (i) an honored hour has no shortfall --------------------------------
    hourly_req = (req.e_dch + req.e_ch).reshape(S, H, steps, M).sum(axis=(2, 3))
    for s in range(S):
        for h in range(1, H + 1):
            m_sh = float(hourly_req[s, h - 1])
            terms = [(s_dch[s, t, m], 1.0) for t in _hour_steps(h, steps) for m in range(M)]
            terms += [(s_ch[s, t, m], 1.0) for t in _hour_steps(h, steps) for m in range(M)]
            terms.append((w_ok[s, h], m_sh))
            b.add_con(terms, LE, m_sh, "fulfilment_link")

    # Per-step sharpening of the same link: skipping any single obligation
    # already voids the hour. Implied for integral points by the families
    # above, but it removes the relaxation's cheap fractional defaults.
    for s in range(S):
        for t in range(1, T + 1):
            h = hour_of_t[t - 1]
            for m in range(M):
                e_d = float(req.e_dch[s, t - 1, m])
                if e_d > 0.0:
                    b.add_con([(s_dch[s, t, m], 1.0), (w_ok[s, h], e_d)], LE, e_d,
                              "fulfilment_link_step")
                e_c = float(req.e_ch[s, t - 1, m])
                if e_c > 0.0:
                    b.add_con([(s_ch[s, t, m], 1.0), (w_ok[s, h], e_c)], LE, e_c,
                              "fulfilment_link_step")

    # --- (j) availability payment envelope ------------------------------------
    # The acceptance cap prices each acceptance at its own clipped threshold
    # (the bid can never clear above it), which keeps the relaxation tight.
    avail_cap = np.clip(thresholds, 0.0, bid_max) * config.p_max_mw   # (S, H, M)
    for s in range(S):
        for h in range(1, H + 1):
            acc_freq = [x_acc[s, h, m] for m in freq_cols]
            m_avail_sh = max(float(avail_cap[s, h - 1, m]) for m in freq_cols)
            b.add_con([(w_avail[s, h], 1.0), (x_price[h], -config.p_max_mw)], LE, 0.0,
                      "avail_cap_price")
            b.add_con([(w_avail[s, h], 1.0)]
                      + [(x_acc[s, h, m], -float(avail_cap[s, h - 1, m]))
                         for m in freq_cols], LE, 0.0,
                      "avail_cap_acc")
            b.add_con([(w_avail[s, h], 1.0), (x_price[h], -config.p_max_mw)]
                      + [(c, -big_m.m_avail) for c in acc_freq], GE, -big_m.m_avail,
                      "avail_floor")
            b.products.append(ProductCheck(
                w=w_avail[s, h], scale=config.p_max_mw, cont=x_price[h],
                bins=tuple(acc_freq), complement=False,
                label=f"w_avail[s{s + 1},h{h}]"))

    # --- (k) spot payment envelopes --------------------------------------------
    # With the payment constant itself as the big-M, the envelope pins the
    # payment to payment * acceptance already in the relaxation.
    for s in range(S):
        for h in range(1, H + 1):
            for tag, col, w_var in (("spot_dch", sdch_col, w_spot_dch),
                                    ("spot_ch", sch_col, w_spot_ch)):
                pay = config.e_spot_mwh * float(thresholds[s, h - 1, col])
                acc = x_acc[s, h, col]
                b.add_con([(w_var[s, h], 1.0)], LE, pay, f"{tag}_cap_price")
                b.add_con([(w_var[s, h], 1.0), (acc, -pay)], LE, 0.0,
                          f"{tag}_cap_acc")
                b.add_con([(w_var[s, h], 1.0), (acc, -pay)], GE, 0.0,
                          f"{tag}_floor")
                b.products.append(ProductCheck(
                    w=w_var[s, h], scale=pay, cont=None, bins=(acc,),
                    complement=False, label=f"w_{tag}[s{s + 1},h{h}]"))

    # --- (l) won/lost settlement envelopes -------------------------------------
    def envelope(w_col: int, base_col: int | None, base_const: float, ok_col: int,
                 m_bound: float, when_ok: bool, tag: str, label: str) -> None:
        """w = base * ok (when_ok) or w = base * (1 - ok); base is a variable
        or a constant."""
        base_terms = [(base_col, -1.0)] if base_col is not None else []
        base_rhs = base_const if base_col is None else 0.0
        b.add_con([(w_col, 1.0)] + base_terms, LE, base_rhs, f"{tag}_cap_base")
        if when_ok:
            b.add_con([(w_col, 1.0), (ok_col, -m_bound)], LE, 0.0, f"{tag}_cap_ok")
            b.add_con([(w_col, 1.0), (ok_col, -m_bound)] + base_terms, GE,
                      base_rhs - m_bound, f"{tag}_floor")
        else:
            b.add_con([(w_col, 1.0), (ok_col, m_bound)], LE, m_bound, f"{tag}_cap_ok")
            b.add_con([(w_col, 1.0), (ok_col, m_bound)] + base_terms, GE,
                      base_rhs, f"{tag}_floor")
        b.products.append(ProductCheck(
            w=w_col, scale=base_const if base_col is None else 1.0, cont=base_col,
            bins=(ok_col,), complement=not when_ok, label=label))

    for s in range(S):
        for h in range(1, H + 1):
            ok = w_ok[s, h]
            tag_sh = f"[s{s + 1},h{h}]"
            m_avail_sh = max(float(avail_cap[s, h - 1, m]) for m in freq_cols)
            pay_dch = config.e_spot_mwh * float(thresholds[s, h - 1, sdch_col])
            pay_ch = config.e_spot_mwh * float(thresholds[s, h - 1, sch_col])
            envelope(w_won_avail[s, h], w_avail[s, h], 0.0, ok, m_avail_sh,
                     True, "won_avail", f"w_won_avail{tag_sh}")
            envelope(w_lost_avail[s, h], w_avail[s, h], 0.0, ok, m_avail_sh,
                     False, "lost_avail", f"w_lost_avail{tag_sh}")
            envelope(w_won_spot_dch[s, h], w_spot_dch[s, h], 0.0, ok, pay_dch,
                     True, "won_spot_dch", f"w_won_spot_dch{tag_sh}")
            envelope(w_lost_spot_dch[s, h], None,
                     float(c_up[s, h - 1]) * config.e_spot_mwh, ok,
                     float(c_up[s, h - 1]) * config.e_spot_mwh,
                     False, "lost_spot_dch", f"w_lost_spot_dch{tag_sh}")
            envelope(w_lost_spot_ch[s, h], None,
                     float(c_dn[s, h - 1]) * config.e_spot_mwh, ok,
                     float(c_dn[s, h - 1]) * config.e_spot_mwh,
                     False, "lost_spot_ch", f"w_lost_spot_ch{tag_sh}")
            if options.include_spot_charge_cost:
                envelope(w_won_spot_ch[s, h], w_spot_ch[s, h], 0.0, ok, pay_ch,
                         True, "won_spot_ch", f"w_won_spot_ch{tag_sh}")

    # --- (m) balancing-energy settlement of activated reserve ------------------
    for s in range(S):
        for h in range(1, H + 1):
            terms = [(w_energy[s, h], 1.0)]
            for t in _hour_steps(h, steps):
                for m in freq_cols:
                    terms.append((z_dch[s, t, m], -float(c_up[s, h - 1])))
                    terms.append((z_ch[s, t, m], float(c_dn[s, h - 1])))
            b.add_con(terms, EQ, 0.0, "energy_settlement")

    # --- conditional idling above the discharge band ----------------------------
    freqs = scenarios.frequency_matrix()
    for s in range(S):
        for t in range(1, T + 1):
            for mk in FREQUENCY_MARKETS:
                if freqs[s, t - 1] > DROOP_BREAKPOINTS[mk][1]:
                    m = MARKET_INDEX[mk]
                    b.add_con([(z_dch[s, t, m], 1.0)], EQ, 0.0, "forced_idle_dch")
                    if options.conditional_zero_all:
                        b.add_con([(z_ch[s, t, m], 1.0)], EQ, 0.0, "forced_idle_ch")
                        b.add_con([(z_net[s, t, m], 1.0)], EQ, 0.0, "forced_idle_net")

    # --- optional soft end-of-hour SOC target -----------------------------------
    if soc_target_on:
        for s in range(S):
            for t in hour_end_steps:
                terms = [(z_soc[s, t], 1.0)] + [(z_net[s, t, m], -1.0) for m in range(M)]
                terms += [(s_tgt_plus[s, t], 1.0), (s_tgt_minus[s, t], -1.0)]
                b.add_con(terms, EQ, float(options.soc_target_mwh), "soc_target")

    # --- objective ---------------------------------------------------------------
    for s in range(S):
        p = float(probs[s])
        for h in range(1, H + 1):
            b.add_obj(w_won_avail[s, h], p)
            b.add_obj(w_won_spot_dch[s, h], p)
            if options.include_spot_charge_cost:
                b.add_obj(w_won_spot_ch[s, h], -p)
            b.add_obj(w_lost_avail[s, h], -p)
            b.add_obj(w_lost_spot_dch[s, h], -p)
            b.add_obj(w_lost_spot_ch[s, h], -p)
            b.add_obj(w_energy[s, h], p)
        for t in range(1, T + 1):
            h = hour_of_t[t - 1]
            for m in range(M):
                cost = float(deg.cost[s, t - 1, m])
                if cost != 0.0:
                    b.add_obj(x_acc[s, h, m], -p * cost)
        if soc_target_on:
            for t in hour_end_steps:
                b.add_obj(s_tgt_plus[s, t], -p * options.soc_target_weight)
                b.add_obj(s_tgt_minus[s, t], -p * options.soc_target_weight)

    meta = {
        "S": S, "H": H, "T": T, "M": M,
        "steps_per_hour": steps,
        "step_minutes": scenarios.step_minutes,
        "scenario_ids": [sc.id for sc in scenarios.scenarios],
        "probabilities": probs,
        "markets": [mk.value for mk in MARKETS],
        "enabled_markets": [mk.value for mk in enabled],
        "thresholds": thresholds,
        "balancing_up": c_up,
        "balancing_down": c_dn,
        "p_max_mw": config.p_max_mw,
        "e_spot_mwh": config.e_spot_mwh,
        "e_min_mwh": config.e_min_mwh,
        "e_max_mwh": config.e_max_mwh,
        "soc_init_mwh": config.soc_init_mwh,
        "bid_min_eur": config.bid_min_eur,
        "bid_max_eur": bid_max,
        "c_deg_eur_per_mwh": config.c_deg_eur_per_mwh,
        "big_m": big_m.as_dict(),
        "options": options,
    }
    return MilpModel(variables=b.variables, constraints=b.constraints,
                     objective=b.objective, products=b.products, meta=meta)


def _hour_steps(h: int, steps_per_hour: int) -> range:
    return range((h - 1) * steps_per_hour + 1, h * steps_per_hour + 1)


def expected_census(S: int, H: int, M: int, steps_per_hour: int,
                    n_forced_idle: int = 0,
                    n_step_links: int = 0,
                    options: ModelOptions = ModelOptions()) -> dict:
    """Closed-form census for a model with the given dimensions.

    Two families are data-dependent and passed as counts: ``n_forced_idle``
    is the number of (scenario, step, frequency-market) triples whose
    frequency sits above the discharge band, and ``n_step_links`` the number
    of nonzero per-step obligations (both directions counted separately).
    """
    T = H * steps_per_hour
    soc_target_on = options.soc_target_mwh is not None and options.soc_target_weight > 0.0
    variables = {
        "x_bid": H * M,
        "x_price": H,
        "x_acc": S * H * M,
        "z_soc": S * T,
        "z_dch": S * T * M,
        "z_ch": S * T * M,
        "z_net": S * T * M,
        "s_dch": S * T * M,
        "s_ch": S * T * M,
        "w_ok": S * H,
        "w_avail": S * H,
        "w_spot_dch": S * H,
        "w_spot_ch": S * H,
        "w_won_avail": S * H,
        "w_lost_avail": S * H,
        "w_won_spot_dch": S * H,
        "w_lost_spot_dch": S * H,
        "w_lost_spot_ch": S * H,
        "w_energy": S * H,
    }
    if options.include_spot_charge_cost:
        variables["w_won_spot_ch"] = S * H
    if soc_target_on:
        variables["s_soc_target_plus"] = S * (H - 1)
        variables["s_soc_target_minus"] = S * (H - 1)

    constraints = {
        "one_bid_per_hour": H,
        "acceptance_implies_bid": S * H * M,
        "forced_acceptance": S * H,
        "acceptance_threshold": S * H * M,
        "price_upper": H,
        "price_lower": H,
        "dispatch_link_dch": S * T * M,
        "dispatch_link_ch": S * T * M,
        "net_dispatch": S * T * M,
        "soc_initial": S,
        "soc_recursion": S * (T - 1),
        "soc_window_lo": S * T,
        "soc_window_hi": S * T,
        "fulfilment_link": S * H,
        "energy_settlement": S * H,
    }
    for tag in ("avail_cap_price", "avail_cap_acc", "avail_floor"):
        constraints[tag] = S * H
    for stem in ("spot_dch", "spot_ch"):
        for suffix in ("cap_price", "cap_acc", "floor"):
            constraints[f"{stem}_{suffix}"] = S * H
    stems = ["won_avail", "lost_avail", "won_spot_dch", "lost_spot_dch", "lost_spot_ch"]
    if options.include_spot_charge_cost:
        stems.append("won_spot_ch")
    for stem in stems:
        for suffix in ("cap_base", "cap_ok", "floor"):
            constraints[f"{stem}_{suffix}"] = S * H
    if n_step_links:
        constraints["fulfilment_link_step"] = n_step_links
    if n_forced_idle:
        constraints["forced_idle_dch"] = n_forced_idle
        if options.conditional_zero_all:
            constraints["forced_idle_ch"] = n_forced_idle
            constraints["forced_idle_net"] = n_forced_idle
    if soc_target_on:
        constraints["soc_target"] = S * (H - 1)

    return {"variables": variables, "constraints": constraints,
            "n_variables": sum(variables.values()),
            "n_constraints": sum(constraints.values()),
            "n_binaries": variables["x_bid"] + variables["x_acc"] + variables["w_ok"]}


def count_forced_idle(scenarios: ScenarioSet) -> int:
    """Triples (s, t, frequency market) with frequency above the discharge band."""
    freqs = scenarios.frequency_matrix()
    return int(sum((freqs > DROOP_BREAKPOINTS[mk][1]).sum() for mk in FREQUENCY_MARKETS))


def count_step_links(req: EnergyRequirement) -> int:
    """Nonzero per-step obligations, each direction counted separately."""
    return int((req.e_dch > 0).sum() + (req.e_ch > 0).sum())


def no_bid_values(model: MilpModel) -> dict[str, float]:
    """The always-feasible plan: bid nowhere, honor everything, earn zero
    (minus any soft SOC-target penalty on the resting state of charge)."""
    values = {v.name: 0.0 for v in model.variables}
    S, T = model.meta["S"], model.meta["T"]
    soc_init = model.meta["soc_init_mwh"]
    for s in range(S):
        for t in range(1, T + 1):
            values[var_name("z_soc", s=s, t=t)] = soc_init
        for h in range(1, model.meta["H"] + 1):
            values[var_name("w_ok", s=s, h=h)] = 1.0
    options: ModelOptions = model.meta["options"]
    if options.soc_target_mwh is not None and options.soc_target_weight > 0.0:
        gap = options.soc_target_mwh - soc_init
        steps = model.meta["steps_per_hour"]
        for s in range(S):
            for k in range(1, model.meta["H"]):
                t = k * steps
                values[var_name("s_soc_target_plus", s=s, t=t)] = max(gap, 0.0)
                values[var_name("s_soc_target_minus", s=s, t=t)] = max(-gap, 0.0)
    return values
