"""Market-price scenarios and grid-frequency traces.

A scenario is one representative day: a frequency trace sampled on a fixed
step grid plus hourly prices per market, weighted by a probability. Loading
validates everything up front; synthesis produces deterministic seeded data
as a stand-in for historical days.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .markets import MARKETS, MARKET_INDEX, Market

MINUTES_PER_DAY = 1440
HOURS_PER_DAY = 24

FREQ_HEADER = ["scenario_id", "minute", "freq_hz"]
PRICE_HEADER = ["scenario_id", "hour", "market",
                "threshold_price", "balancing_up", "balancing_down"]
PROB_HEADER = ["scenario_id", "probability"]

#: Hard sanity band for any frequency sample (Hz).
FREQ_BAND = (47.0, 53.0)


def hour_of(t: int, step_minutes: int, n_steps: int | None = None) -> int:
    """Map a 1-based step index to its 1-based hour.

    ``hour = floor((t-1) * step_minutes / 60) + 1``. The upper range check
    uses ``n_steps`` when given, otherwise a full day.
    """
    limit = n_steps if n_steps is not None else MINUTES_PER_DAY // step_minutes
    if not 1 <= t <= limit:
        raise ValidationError(f"step index {t} outside 1..{limit}")
    return (t - 1) * step_minutes // 60 + 1


@dataclass(frozen=True)
class FrequencyTrace:
    """Grid frequency for one scenario, one sample per step."""

    scenario_id: str
    samples: np.ndarray          # (n_steps,), Hz
    step_minutes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.step_minutes <= 0 or 60 % self.step_minutes != 0:
            raise ValidationError(
                f"scenario {self.scenario_id}: step_minutes must divide 60, "
                f"got {self.step_minutes}")
        total = self.samples.size * self.step_minutes
        if self.samples.size == 0 or total % 60 != 0:
            raise ValidationError(
                f"scenario {self.scenario_id}: trace covers {total} minutes, "
                f"not a whole number of hours")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError(f"scenario {self.scenario_id}: non-finite frequency sample")
        lo, hi = FREQ_BAND
        if self.samples.min() < lo or self.samples.max() > hi:
            raise ValidationError(
                f"scenario {self.scenario_id}: frequency outside sanity band "
                f"[{lo}, {hi}] Hz")

    @property
    def n_steps(self) -> int:
        return int(self.samples.size)

    @property
    def horizon_hours(self) -> int:
        return self.n_steps * self.step_minutes // 60

    def require_full_day(self) -> None:
        total = self.n_steps * self.step_minutes
        if total != MINUTES_PER_DAY:
            raise ValidationError(
                f"scenario {self.scenario_id}: incomplete day "
                f"({total} of {MINUTES_PER_DAY} minutes)")


@dataclass(frozen=True)
class PriceSet:
    """Hourly prices for one scenario.

    ``threshold[h, m]`` is the market's acceptance threshold: the scenario's
    clearing price for spot products (EUR/MWh) and the marginal accepted
    availability bid for frequency products (EUR/MW). ``balancing_up`` and
    ``balancing_down`` (EUR/MWh) settle activated reserve energy and price
    non-delivery penalties.
    """

    scenario_id: str
    threshold: np.ndarray        # (H, M) in canonical market order
    balancing_up: np.ndarray     # (H,)
    balancing_down: np.ndarray   # (H,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "threshold", np.asarray(self.threshold, dtype=float))
        object.__setattr__(self, "balancing_up", np.asarray(self.balancing_up, dtype=float))
        object.__setattr__(self, "balancing_down", np.asarray(self.balancing_down, dtype=float))
        H = self.threshold.shape[0]
        if self.threshold.ndim != 2 or self.threshold.shape[1] != len(MARKETS):
            raise ValidationError(
                f"scenario {self.scenario_id}: threshold array must be (hours, "
                f"{len(MARKETS)}), got {self.threshold.shape}")
        if self.balancing_up.shape != (H,) or self.balancing_down.shape != (H,):
            raise ValidationError(
                f"scenario {self.scenario_id}: balancing series must have {H} hourly entries")
        for name, arr in (("threshold", self.threshold),
                          ("balancing_up", self.balancing_up),
                          ("balancing_down", self.balancing_down)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"scenario {self.scenario_id}: non-finite {name}")
        if self.balancing_up.min(initial=0.0) < 0 or self.balancing_down.min(initial=0.0) < 0:
            raise ValidationError(
                f"scenario {self.scenario_id}: balancing prices must be nonnegative")

    @property
    def horizon_hours(self) -> int:
        return int(self.threshold.shape[0])


@dataclass(frozen=True)
class Scenario:
    """One representative day with its probability weight."""

    id: str
    probability: float
    frequency: FrequencyTrace
    prices: PriceSet

    def __post_init__(self) -> None:
        if not 0.0 < self.probability <= 1.0:
            raise ValidationError(
                f"scenario {self.id}: probability must be in (0, 1], got {self.probability}")
        if self.frequency.horizon_hours != self.prices.horizon_hours:
            raise ValidationError(
                f"scenario {self.id}: trace covers {self.frequency.horizon_hours} h "
                f"but prices cover {self.prices.horizon_hours} h")


@dataclass(frozen=True)
class ScenarioSet:
    """Validated, immutable collection of scenarios sharing one time grid."""

    scenarios: tuple[Scenario, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValidationError("scenario set is empty")
        step = self.scenarios[0].frequency.step_minutes
        horizon = self.scenarios[0].frequency.horizon_hours
        for sc in self.scenarios:
            if sc.frequency.step_minutes != step:
                raise ValidationError(f"scenario {sc.id}: step_minutes {sc.frequency.step_minutes} "
                                      f"differs from {step}")
            if sc.frequency.horizon_hours != horizon:
                raise ValidationError(f"scenario {sc.id}: horizon {sc.frequency.horizon_hours} h "
                                      f"differs from {horizon} h")
        total = sum(sc.probability for sc in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"scenario probabilities sum to {total!r}, expected 1")

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def step_minutes(self) -> int:
        return self.scenarios[0].frequency.step_minutes

    @property
    def horizon_hours(self) -> int:
        return self.scenarios[0].frequency.horizon_hours

    @property
    def n_steps(self) -> int:
        return self.scenarios[0].frequency.n_steps

    @property
    def steps_per_hour(self) -> int:
        return 60 // self.step_minutes

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([sc.probability for sc in self.scenarios])

    def frequency_matrix(self) -> np.ndarray:
        """(S, T) array of frequency samples."""
        return np.stack([sc.frequency.samples for sc in self.scenarios])

    def threshold(self, s: int, hour: int, market: Market) -> float:
        return float(self.scenarios[s].prices.threshold[hour - 1, MARKET_INDEX[market]])

    def max_threshold(self) -> float:
        return max(float(sc.prices.threshold.max()) for sc in self.scenarios)


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_rows(path: str | Path, header: list[str]) -> list[tuple[int, dict[str, str]]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=str(path)) from None
        if [c.strip() for c in got] != header:
            raise ParseError(f"expected header {','.join(header)!r}, got {','.join(got)!r}",
                             path=str(path), line=1)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}",
                                 path=str(path), line=line_no)
            rows.append((line_no, dict(zip(header, (c.strip() for c in row)))))
    return rows


def _parse_float(value: str, field_name: str, path: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"field {field_name!r} is not a number: {value!r}",
                         path=path, line=line) from None


def _parse_int(value: str, field_name: str, path: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"field {field_name!r} is not an integer: {value!r}",
                         path=path, line=line) from None


def load_scenarios(frequency_path: str | Path,
                   prices_path: str | Path,
                   probabilities_path: str | Path | None = None) -> ScenarioSet:
    """Load and validate a full-day scenario set from CSV files.

    The frequency file carries one row per step (``minute`` is the step's
    first minute of the day, so a 15-minute grid uses 1, 16, 31, ...); the
    step width is inferred from the spacing and must tile exactly one day.
    Without a probabilities file, scenarios are weighted uniformly; explicit
    probabilities must sum to one — they are never silently renormalized.
    """
    freq_rows = _read_rows(frequency_path, FREQ_HEADER)
    by_scenario: dict[str, list[tuple[int, int, float]]] = {}
    order: list[str] = []
    for line_no, row in freq_rows:
        sid = row["scenario_id"]
        minute = _parse_int(row["minute"], "minute", str(frequency_path), line_no)
        f = _parse_float(row["freq_hz"], "freq_hz", str(frequency_path), line_no)
        if not 1 <= minute <= MINUTES_PER_DAY:
            raise ParseError(f"minute {minute} outside 1..{MINUTES_PER_DAY}",
                             path=str(frequency_path), line=line_no)
        if sid not in by_scenario:
            order.append(sid)
        by_scenario.setdefault(sid, []).append((minute, line_no, f))

    traces: dict[str, FrequencyTrace] = {}
    for sid in order:
        entries = sorted(by_scenario[sid])
        minutes = [e[0] for e in entries]
        if len(set(minutes)) != len(minutes):
            raise ValidationError(f"scenario {sid}: duplicate minute rows in frequency file")
        if minutes[0] != 1:
            raise ValidationError(f"scenario {sid}: frequency trace must start at minute 1")
        if len(minutes) == 1:
            step = MINUTES_PER_DAY
        else:
            gaps = {b - a for a, b in zip(minutes, minutes[1:])}
            if len(gaps) != 1:
                raise ValidationError(f"scenario {sid}: non-uniform step spacing in frequency file")
            step = gaps.pop()
        if 60 % step != 0 and step != MINUTES_PER_DAY:
            raise ValidationError(f"scenario {sid}: inferred step of {step} minutes "
                                  f"does not divide an hour")
        if len(minutes) * step != MINUTES_PER_DAY:
            raise ValidationError(
                f"scenario {sid}: incomplete day ({len(minutes)} rows at "
                f"{step}-minute steps covers {len(minutes) * step} of {MINUTES_PER_DAY} minutes)")
        samples = np.array([e[2] for e in entries])
        trace = FrequencyTrace(scenario_id=sid, samples=samples,
                               step_minutes=step if step != MINUTES_PER_DAY else 60)
        # A single-row file would imply one 1440-minute step; reject clearly.
        if step == MINUTES_PER_DAY:
            raise ValidationError(f"scenario {sid}: incomplete day (1 row)")
        trace.require_full_day()
        traces[sid] = trace

    price_rows = _read_rows(prices_path, PRICE_HEADER)
    market_codes = {m.value: m for m in MARKETS}
    thresholds: dict[str, np.ndarray] = {}
    ups: dict[str, np.ndarray] = {}
    downs: dict[str, np.ndarray] = {}
    seen: dict[str, np.ndarray] = {}
    for line_no, row in price_rows:
        sid = row["scenario_id"]
        if sid not in traces:
            raise ValidationError(f"prices reference unknown scenario {sid!r} "
                                  f"(line {line_no} of {prices_path})")
        hour = _parse_int(row["hour"], "hour", str(prices_path), line_no)
        if not 1 <= hour <= HOURS_PER_DAY:
            raise ParseError(f"hour {hour} outside 1..{HOURS_PER_DAY}",
                             path=str(prices_path), line=line_no)
        code = row["market"]
        if code not in market_codes:
            raise ParseError(f"unknown market {code!r}; expected one of {sorted(market_codes)}",
                             path=str(prices_path), line=line_no)
        m = MARKET_INDEX[market_codes[code]]
        thr = _parse_float(row["threshold_price"], "threshold_price", str(prices_path), line_no)
        up = _parse_float(row["balancing_up"], "balancing_up", str(prices_path), line_no)
        dn = _parse_float(row["balancing_down"], "balancing_down", str(prices_path), line_no)
        if sid not in thresholds:
            thresholds[sid] = np.full((HOURS_PER_DAY, len(MARKETS)), np.nan)
            ups[sid] = np.full(HOURS_PER_DAY, np.nan)
            downs[sid] = np.full(HOURS_PER_DAY, np.nan)
            seen[sid] = np.zeros((HOURS_PER_DAY, len(MARKETS)), dtype=bool)
        if seen[sid][hour - 1, m]:
            raise ValidationError(f"scenario {sid}: duplicate price row for hour {hour}, "
                                  f"market {code}")
        seen[sid][hour - 1, m] = True
        thresholds[sid][hour - 1, m] = thr
        prev_up = ups[sid][hour - 1]
        if not np.isnan(prev_up) and (prev_up != up or downs[sid][hour - 1] != dn):
            raise ValidationError(f"scenario {sid}: balancing prices disagree across the "
                                  f"market rows of hour {hour}")
        ups[sid][hour - 1] = up
        downs[sid][hour - 1] = dn

    prices: dict[str, PriceSet] = {}
    for sid in order:
        if sid not in thresholds:
            raise ValidationError(f"scenario {sid}: no price rows")
        missing = np.argwhere(~seen[sid])
        if missing.size:
            h, m = missing[0]
            raise ValidationError(f"scenario {sid}: missing price for hour {h + 1}, "
                                  f"market {MARKETS[m].value}")
        prices[sid] = PriceSet(scenario_id=sid, threshold=thresholds[sid],
                               balancing_up=ups[sid], balancing_down=downs[sid])

    if probabilities_path is not None:
        prob_rows = _read_rows(probabilities_path, PROB_HEADER)
        probs: dict[str, float] = {}
        for line_no, row in prob_rows:
            sid = row["scenario_id"]
            if sid not in traces:
                raise ValidationError(f"probability row references unknown scenario {sid!r}")
            if sid in probs:
                raise ValidationError(f"scenario {sid}: duplicate probability row")
            probs[sid] = _parse_float(row["probability"], "probability",
                                      str(probabilities_path), line_no)
        missing_ids = [sid for sid in order if sid not in probs]
        if missing_ids:
            raise ValidationError(f"probability file misses scenarios {missing_ids}")
        weights = {sid: probs[sid] for sid in order}
    else:
        weights = {sid: 1.0 / len(order) for sid in order}

    return ScenarioSet(scenarios=tuple(
        Scenario(id=sid, probability=weights[sid], frequency=traces[sid], prices=prices[sid])
        for sid in order))


def save_scenarios(sset: ScenarioSet,
                   frequency_path: str | Path,
                   prices_path: str | Path,
                   probabilities_path: str | Path | None = None) -> None:
    """Write a scenario set back to the CSV formats ``load_scenarios`` reads.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    with Path(frequency_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FREQ_HEADER)
        for sc in sset.scenarios:
            step = sc.frequency.step_minutes
            for k, f in enumerate(sc.frequency.samples):
                w.writerow([sc.id, 1 + k * step, repr(float(f))])
    with Path(prices_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for sc in sset.scenarios:
            for h in range(sc.prices.horizon_hours):
                for m, market in enumerate(MARKETS):
                    w.writerow([sc.id, h + 1, market.value,
                                repr(float(sc.prices.threshold[h, m])),
                                repr(float(sc.prices.balancing_up[h])),
                                repr(float(sc.prices.balancing_down[h]))])
    if probabilities_path is not None:
        with Path(probabilities_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PROB_HEADER)
            for sc in sset.scenarios:
                w.writerow([sc.id, repr(float(sc.probability))])


# ---------------------------------------------------------------------------
# Synthesis


@dataclass(frozen=True)
class SynthesisParams:
    """Knobs for the seeded scenario generator.

    The frequency trace is a mean-reverting random walk around 50 Hz clipped
    to a band; prices follow a two-peak day shape with multiplicative spreads
    for the balancing series so that up-regulation clears above spot and
    down-regulation below it.
    """

    step_minutes: int = 60
    mean_reversion: float = 0.25         # pull toward 50 Hz per step
    noise_scale_hz: float = 0.04         # stddev of the per-step innovation
    clip_lo_hz: float = 49.0
    clip_hi_hz: float = 50.5
    spot_base_eur: float = 55.0          # midday spot level, EUR/MWh
    spot_swing_eur: float = 25.0         # peak/trough half-amplitude
    spot_noise_eur: float = 6.0
    fcrn_base_eur: float = 22.0          # availability threshold level, EUR/MW
    fcrn_swing_eur: float = 12.0
    fcrd_base_eur: float = 9.0
    fcrd_swing_eur: float = 5.0
    reserve_noise_eur: float = 3.0
    up_markup: float = 1.35              # C_up ~ markup * spot
    down_ratio: float = 0.45             # C_down ~ ratio * spot

    def __post_init__(self) -> None:
        if self.mean_reversion < 0:
            raise ValidationError(f"mean_reversion must be >= 0, got {self.mean_reversion}")
        if self.noise_scale_hz < 0:
            raise ValidationError(f"noise_scale_hz must be >= 0, got {self.noise_scale_hz}")
        if not 47.0 <= self.clip_lo_hz < self.clip_hi_hz <= 53.0:
            raise ValidationError(
                f"clip band [{self.clip_lo_hz}, {self.clip_hi_hz}] must be ordered and "
                f"inside [47, 53] Hz")
        if self.step_minutes <= 0 or 60 % self.step_minutes != 0:
            raise ValidationError(f"step_minutes must divide 60, got {self.step_minutes}")


#: Day shape with a morning and an evening peak, one weight per hour.
_DAY_SHAPE = np.array([
    -1.0, -1.2, -1.3, -1.3, -1.1, -0.6, 0.2, 0.8, 1.0, 0.7, 0.4, 0.2,
    0.0, -0.1, 0.0, 0.2, 0.5, 0.9, 1.2, 1.0, 0.6, 0.1, -0.4, -0.8,
])


def synthesize_scenarios(seed: int, days: int,
                         params: SynthesisParams = SynthesisParams()) -> ScenarioSet:
    """Generate ``days`` equally weighted day-scenarios from a fixed seed."""
    if days < 1:
        raise ValidationError(f"days must be >= 1, got {days}")
    rng = np.random.default_rng(seed)
    steps = MINUTES_PER_DAY // params.step_minutes
    scenarios = []
    for d in range(days):
        sid = f"day{d + 1}"
        f = np.empty(steps)
        level = 50.0
        innovations = rng.normal(0.0, params.noise_scale_hz, size=steps)
        for k in range(steps):
            level += params.mean_reversion * (50.0 - level) + innovations[k]
            level = min(max(level, params.clip_lo_hz), params.clip_hi_hz)
            f[k] = level
        if params.noise_scale_hz == 0.0:
            f[:] = 50.0

        spot = (params.spot_base_eur + params.spot_swing_eur * _DAY_SHAPE
                + rng.normal(0.0, params.spot_noise_eur, size=HOURS_PER_DAY))
        spot = np.maximum(spot, 1.0)
        fcrn = (params.fcrn_base_eur + params.fcrn_swing_eur * _DAY_SHAPE
                + rng.normal(0.0, params.reserve_noise_eur, size=HOURS_PER_DAY))
        fcrn = np.maximum(fcrn, 0.5)
        fcrd = (params.fcrd_base_eur + params.fcrd_swing_eur * _DAY_SHAPE
                + rng.normal(0.0, params.reserve_noise_eur, size=HOURS_PER_DAY))
        fcrd = np.maximum(fcrd, 0.5)
        threshold = np.empty((HOURS_PER_DAY, len(MARKETS)))
        threshold[:, MARKET_INDEX[Market.FCR_N]] = fcrn
        threshold[:, MARKET_INDEX[Market.FCR_D]] = fcrd
        threshold[:, MARKET_INDEX[Market.S_DCH]] = spot
        threshold[:, MARKET_INDEX[Market.S_CH]] = spot
        up = params.up_markup * spot + rng.uniform(0.0, 5.0, size=HOURS_PER_DAY)
        down = params.down_ratio * spot + rng.uniform(0.0, 3.0, size=HOURS_PER_DAY)

        scenarios.append(Scenario(
            id=sid,
            probability=1.0 / days,
            frequency=FrequencyTrace(scenario_id=sid, samples=f,
                                     step_minutes=params.step_minutes),
            prices=PriceSet(scenario_id=sid, threshold=threshold,
                            balancing_up=up, balancing_down=down),
        ))
    return ScenarioSet(scenarios=tuple(scenarios))


#: Seed of the synthetic week shipped with the package; referenced by the
#: regression suite and the README walkthrough.
BUNDLED_WEEK_SEED = 20240107


def bundled_week() -> ScenarioSet:
    """The canonical 7-scenario synthetic week at hourly resolution."""
    return synthesize_scenarios(BUNDLED_WEEK_SEED, days=7)


def bundled_calm_week() -> ScenarioSet:
    """A synthetic week whose frequency never leaves [49.93, 50.5] Hz.

    The disturbance-reserve droop band is never entered, so that product
    carries zero energy obligations for every scenario.
    """
    return synthesize_scenarios(
        BUNDLED_WEEK_SEED, days=7,
        params=SynthesisParams(clip_lo_hz=49.93))
