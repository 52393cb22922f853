"""Market taxonomy, battery parameters, degradation pricing and big-M sizing.

Four hourly markets are modelled: the two frequency-containment products
(symmetric normal-band reserve and up-only disturbance reserve) paid
pay-as-bid per MW of reserved power, and the two day-ahead spot actions
(sell / buy one fixed energy block) settled pay-as-clear per MWh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError


class Market(Enum):
    """One biddable product; the value is its code in CSV/JSON interfaces."""

    FCR_N = "FCRN"
    FCR_D = "FCRD"
    S_DCH = "SDCH"
    S_CH = "SCH"

    @property
    def is_frequency(self) -> bool:
        return self in (Market.FCR_N, Market.FCR_D)

    @property
    def is_spot(self) -> bool:
        return not self.is_frequency


#: Canonical market ordering used for every (s, t, m) array axis.
MARKETS: tuple[Market, ...] = (Market.FCR_N, Market.FCR_D, Market.S_DCH, Market.S_CH)
FREQUENCY_MARKETS: tuple[Market, ...] = (Market.FCR_N, Market.FCR_D)
SPOT_MARKETS: tuple[Market, ...] = (Market.S_DCH, Market.S_CH)

MARKET_INDEX: dict[Market, int] = {m: i for i, m in enumerate(MARKETS)}

#: Accepted spellings on the command line (the CSV codes also work there).
CLI_MARKET_ALIASES: dict[str, Market] = {
    "N": Market.FCR_N,
    "D": Market.FCR_D,
    "FCRN": Market.FCR_N,
    "FCRD": Market.FCR_D,
    "SDCH": Market.S_DCH,
    "SCH": Market.S_CH,
}


def parse_market_subset(spec: str) -> tuple[Market, ...]:
    """Parse a comma-separated market list such as ``N,D,SDCH``."""
    out: list[Market] = []
    for token in spec.split(","):
        token = token.strip().upper()
        if not token:
            continue
        if token not in CLI_MARKET_ALIASES:
            raise ValidationError(f"unknown market code {token!r}; expected one of "
                                  f"{sorted(set(CLI_MARKET_ALIASES))}")
        market = CLI_MARKET_ALIASES[token]
        if market not in out:
            out.append(market)
    if not out:
        raise ValidationError("market subset is empty")
    return tuple(out)


@dataclass(frozen=True)
class BessConfig:
    """Battery and bidding parameters.

    Energies are MWh, power is MW, prices are EUR/MW (frequency markets)
    or EUR/MWh (spot and degradation). ``bid_max_eur=None`` means "resolve
    to twice the largest scenario threshold when the model is built".
    """

    p_max_mw: float = 0.9
    e_spot_mwh: float = 0.4
    e_min_mwh: float = 0.1
    e_max_mwh: float = 1.0
    soc_init_mwh: float = 0.5
    bid_min_eur: float = 0.0
    bid_max_eur: float | None = None
    c_deg_eur_per_mwh: float = 20.0
    step_minutes: int = 60

    def __post_init__(self) -> None:
        if not (0.0 <= self.e_min_mwh <= self.soc_init_mwh <= self.e_max_mwh):
            raise ValidationError(
                f"SOC bounds must satisfy 0 <= e_min <= soc_init <= e_max, got "
                f"e_min={self.e_min_mwh}, soc_init={self.soc_init_mwh}, e_max={self.e_max_mwh}")
        if self.p_max_mw <= 0:
            raise ValidationError(f"p_max_mw must be positive, got {self.p_max_mw}")
        if self.e_spot_mwh <= 0:
            raise ValidationError(f"e_spot_mwh must be positive, got {self.e_spot_mwh}")
        if self.bid_min_eur < 0:
            raise ValidationError(f"bid_min_eur must be >= 0, got {self.bid_min_eur}")
        if self.bid_max_eur is not None and self.bid_max_eur < self.bid_min_eur:
            raise ValidationError(
                f"bid bounds must satisfy bid_min <= bid_max, got "
                f"[{self.bid_min_eur}, {self.bid_max_eur}]")
        if self.c_deg_eur_per_mwh < 0:
            raise ValidationError(f"c_deg_eur_per_mwh must be >= 0, got {self.c_deg_eur_per_mwh}")
        if self.step_minutes <= 0 or 60 % self.step_minutes != 0:
            raise ValidationError(
                f"step_minutes must be a positive divisor of 60, got {self.step_minutes}")

    def resolve_bid_max(self, max_threshold: float) -> float:
        """Concrete bid-price ceiling; the default must not clip the optimum."""
        if self.bid_max_eur is not None:
            return self.bid_max_eur
        return max(0.0, 2.0 * max_threshold)

    def with_overrides(self, **changes) -> "BessConfig":
        return replace(self, **changes)

    @classmethod
    def from_json(cls, path: str | Path) -> "BessConfig":
        """Load from a JSON object whose keys mirror the field names."""
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}; "
                                  f"expected a subset of {sorted(known)}")
        return cls(**raw)


@dataclass(frozen=True)
class DegradationSchedule:
    """Wear cost (EUR) charged per step and market if that hour's bid is accepted.

    ``cost[s, t, m]`` is throughput-proportional: the configured EUR/MWh rate
    times the energy the accepted market obliges in that step.
    """

    cost: np.ndarray  # (S, T, M)

    def __post_init__(self) -> None:
        if np.any(self.cost < 0):
            raise ValidationError("degradation costs must be nonnegative")

    def hour_total(self, s: int, hour: int, m: int, steps_per_hour: int) -> float:
        lo = (hour - 1) * steps_per_hour
        return float(self.cost[s, lo:lo + steps_per_hour, m].sum())


def degradation_costs(req, config: BessConfig) -> DegradationSchedule:
    """Price every obliged MWh of throughput at the configured wear rate."""
    return DegradationSchedule(cost=config.c_deg_eur_per_mwh * (req.e_dch + req.e_ch))


@dataclass(frozen=True)
class BigMBounds:
    """Per-constraint-family big-M constants, each a valid upper bound on the
    expression its family relaxes."""

    m_avail: float      # availability payment: p_max * bid price
    m_spot: float       # spot payment: e_spot * largest spot threshold
    m_pen_up: float     # up-regulation penalty: e_spot * largest C_up
    m_pen_dn: float     # down-regulation penalty: e_spot * largest C_down
    m_price: float      # bid-price / threshold gap in acceptance coupling
    m_slack: float      # largest possible hourly shortfall sum

    def as_dict(self) -> dict[str, float]:
        return {
            "m_avail": self.m_avail,
            "m_spot": self.m_spot,
            "m_pen_up": self.m_pen_up,
            "m_pen_dn": self.m_pen_dn,
            "m_price": self.m_price,
            "m_slack": self.m_slack,
        }


def tight_big_m(config: BessConfig, scenarios, req=None) -> BigMBounds:
    """Size each big-M family from the data it has to dominate.

    Tight per-family constants keep the LP relaxation well conditioned.
    When the energy requirements are passed, the fulfilment-slack bound uses
    the actual worst hour; otherwise a closed-form worst case (every market
    fully activated all hour) is used.
    """
    if not scenarios.scenarios:
        raise ValidationError("scenario set is empty")
    thresholds = np.stack([sc.prices.threshold for sc in scenarios.scenarios])  # (S, H, M)
    spot_cols = [MARKET_INDEX[m] for m in SPOT_MARKETS]
    max_threshold = float(thresholds.max())
    min_threshold = float(thresholds.min())
    max_spot = float(thresholds[:, :, spot_cols].max())
    max_up = max(float(sc.prices.balancing_up.max()) for sc in scenarios.scenarios)
    max_dn = max(float(sc.prices.balancing_down.max()) for sc in scenarios.scenarios)
    bid_max = config.resolve_bid_max(max_threshold)

    if req is not None:
        steps = scenarios.steps_per_hour
        per_hour = req.e_dch + req.e_ch  # (S, T, M)
        S, T, M = per_hour.shape
        hourly = per_hour.reshape(S, T // steps, steps, M).sum(axis=(2, 3))
        m_slack = float(hourly.max()) if hourly.size else 0.0
    else:
        m_slack = 2.0 * config.p_max_mw + 2.0 * config.e_spot_mwh

    return BigMBounds(
        m_avail=config.p_max_mw * bid_max,
        m_spot=config.e_spot_mwh * max(0.0, max_spot),
        m_pen_up=config.e_spot_mwh * max_up,
        m_pen_dn=config.e_spot_mwh * max_dn,
        # Must dominate both (threshold - price) and (price - threshold).
        m_price=bid_max + max(0.0, max_threshold) + max(0.0, -min_threshold),
        m_slack=m_slack,
    )
