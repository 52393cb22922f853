"""Droop control service: frequency traces to per-step energy obligations.

Each frequency market is described by four breakpoints ``f1 <= f2 <= f3 <= f4``
anchoring the droop line at (f1, +p_max), (f2, 0), (f3, 0), (f4, -p_max):
below the dead band the battery must discharge, above it charge, ramping
linearly across [f1, f2] and [f3, f4] and saturating at full power outside.
Spot products oblige a flat energy block instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .markets import MARKETS, MARKET_INDEX, BessConfig, Market
from .scenarios import ScenarioSet

#: Droop breakpoints (Hz) for the two frequency products. The normal-band
#: product is symmetric with a zero-width dead band at 50 Hz; the disturbance
#: product ramps over [49.5, 49.9] and is procured up-only.
DROOP_BREAKPOINTS: dict[Market, tuple[float, float, float, float]] = {
    Market.FCR_N: (49.9, 50.0, 50.0, 50.1),
    Market.FCR_D: (49.5, 49.9, 50.1, 50.5),
}

#: Markets whose charge-direction obligation is kept (up-only products drop it).
SYMMETRIC_MARKETS = frozenset({Market.FCR_N})


@dataclass(frozen=True)
class DroopCurve:
    """Piecewise-linear frequency-to-power mapping for one reserve product."""

    f1: float
    f2: float
    f3: float
    f4: float
    p_max_mw: float

    def __post_init__(self) -> None:
        if not self.f1 <= self.f2 <= self.f3 <= self.f4:
            raise ValidationError(
                f"droop breakpoints must be ordered, got "
                f"({self.f1}, {self.f2}, {self.f3}, {self.f4})")
        if self.p_max_mw <= 0:
            raise ValidationError(f"p_max_mw must be positive, got {self.p_max_mw}")

    @classmethod
    def for_market(cls, market: Market, p_max_mw: float) -> "DroopCurve":
        if market not in DROOP_BREAKPOINTS:
            raise ValidationError(f"{market.value} is not a frequency market")
        return cls(*DROOP_BREAKPOINTS[market], p_max_mw=p_max_mw)


def fcr_requirement(f, curve: DroopCurve, step_minutes: int,
                    full_activation_below_band: bool = True):
    """Energy (MWh) a reserve product obliges during one step at frequency ``f``.

    Returns ``(e_dch, e_ch)``; at most one is nonzero. Accepts scalars or
    arrays. With ``full_activation_below_band`` (the default) the curve
    saturates at +/- full power outside [f1, f4]; the alternative reading
    zeroes the obligation outside the ramp intervals entirely.

    A zero-width ramp degenerates to a step function counted as fully
    activated on its boundary frequency.
    """
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValidationError("frequency must be finite")
    scale = curve.p_max_mw * step_minutes / 60.0

    if curve.f2 > curve.f1:
        frac_dch = np.clip((curve.f2 - f) / (curve.f2 - curve.f1), 0.0, 1.0)
    else:
        frac_dch = np.where(f <= curve.f1, 1.0, 0.0)
    if curve.f4 > curve.f3:
        frac_ch = np.clip((f - curve.f3) / (curve.f4 - curve.f3), 0.0, 1.0)
    else:
        frac_ch = np.where(f >= curve.f4, 1.0, 0.0)

    if not full_activation_below_band:
        frac_dch = np.where(f < curve.f1, 0.0, frac_dch)
        frac_ch = np.where(f > curve.f4, 0.0, frac_ch)

    e_dch = scale * frac_dch
    e_ch = scale * frac_ch
    if f.ndim == 0:
        return float(e_dch), float(e_ch)
    return e_dch, e_ch


def spot_requirement(market: Market, e_spot_mwh: float, step_minutes: int) -> tuple[float, float]:
    """Energy (MWh) one step of an accepted spot block obliges."""
    if e_spot_mwh <= 0:
        raise ValidationError(f"e_spot_mwh must be positive, got {e_spot_mwh}")
    block = e_spot_mwh * step_minutes / 60.0
    if market is Market.S_DCH:
        return block, 0.0
    if market is Market.S_CH:
        return 0.0, block
    raise ValidationError(f"{market.value} is not a spot market")


@dataclass(frozen=True)
class EnergyRequirement:
    """Per-step delivery obligations ``e_dch[s, t, m]`` / ``e_ch[s, t, m]`` (MWh).

    Entries are what the battery must move in step ``t`` if the hour's bid in
    market ``m`` was accepted in scenario ``s``; both directions are never
    obliged at once.
    """

    e_dch: np.ndarray   # (S, T, M)
    e_ch: np.ndarray    # (S, T, M)
    step_minutes: int

    def __post_init__(self) -> None:
        if self.e_dch.shape != self.e_ch.shape or self.e_dch.ndim != 3:
            raise ValidationError(f"requirement arrays must share an (S, T, M) shape, got "
                                  f"{self.e_dch.shape} and {self.e_ch.shape}")
        if self.e_dch.min(initial=0.0) < 0 or self.e_ch.min(initial=0.0) < 0:
            raise ValidationError("energy requirements must be nonnegative")
        if np.any((self.e_dch > 0) & (self.e_ch > 0)):
            raise ValidationError("a step may oblige charging or discharging, never both")
        d_col = MARKET_INDEX[Market.FCR_D]
        if np.any(self.e_ch[:, :, d_col] != 0.0):
            raise ValidationError("the up-only disturbance product cannot oblige charging")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.e_dch.shape


def build_requirements(scenarios: ScenarioSet, config: BessConfig,
                       full_activation_below_band: bool = True) -> EnergyRequirement:
    """Evaluate every market's obligation on every scenario step."""
    if config.step_minutes != scenarios.step_minutes:
        raise ValidationError(
            f"config step_minutes={config.step_minutes} does not match the scenario "
            f"grid ({scenarios.step_minutes})")
    S, T = scenarios.n_scenarios, scenarios.n_steps
    e_dch = np.zeros((S, T, len(MARKETS)))
    e_ch = np.zeros((S, T, len(MARKETS)))
    freqs = scenarios.frequency_matrix()
    for market in MARKETS:
        m = MARKET_INDEX[market]
        if market.is_frequency:
            curve = DroopCurve.for_market(market, config.p_max_mw)
            dch, ch = fcr_requirement(freqs, curve, scenarios.step_minutes,
                                      full_activation_below_band)
            e_dch[:, :, m] = dch
            if market in SYMMETRIC_MARKETS:
                e_ch[:, :, m] = ch
        else:
            dch, ch = spot_requirement(market, config.e_spot_mwh, scenarios.step_minutes)
            e_dch[:, :, m] = dch
            e_ch[:, :, m] = ch
    return EnergyRequirement(e_dch=e_dch, e_ch=e_ch, step_minutes=scenarios.step_minutes)


def write_requirements_csv(req: EnergyRequirement, scenarios: ScenarioSet,
                           path: str | Path) -> None:
    """Dump obligations as ``scenario_id,minute,market,e_dch_mwh,e_ch_mwh``."""
    step = scenarios.step_minutes
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "minute", "market", "e_dch_mwh", "e_ch_mwh"])
        for s, sc in enumerate(scenarios.scenarios):
            for t in range(scenarios.n_steps):
                for m, market in enumerate(MARKETS):
                    w.writerow([sc.id, 1 + t * step, market.value,
                                repr(float(req.e_dch[s, t, m])),
                                repr(float(req.e_ch[s, t, m]))])
