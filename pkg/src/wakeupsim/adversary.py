"""Packet-injection schedules and regime classification.

A schedule fixes, before any coin is flipped, how many packets the adversary
activates in which slot. Slot indexing starts at 1, the slot of the first
injection. Helpers classify a schedule by the quantities the analysis hinges
on: the last slot t* at which the active count still fits under w0/sqrt(C),
injection-free gaps of at least gamma slots, and the gamma threshold itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .errors import ConfigError
from .protocols import Phase, ProtocolConfig, Setting, sample_length

SCHEDULE_KINDS = (
    "all_at_once",
    "two_burst",
    "drip",
    "anti_gap",
    "spike_before_good_contention",
)


@dataclass(frozen=True)
class InjectionSchedule:
    """Ordered (slot, count) injection list; immutable once built."""

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ConfigError("schedule must contain at least one injection")
        prev_slot = 0
        for slot, count in self.entries:
            if not isinstance(slot, int) or not isinstance(count, int):
                raise ConfigError("schedule entries must be integer (slot, count) pairs")
            if slot <= prev_slot:
                raise ConfigError("injection slots must be strictly increasing")
            if count < 1:
                raise ConfigError("injection counts must be >= 1")
            prev_slot = slot
        if self.entries[0][0] != 1:
            raise ConfigError("the first injection must land in slot 1")

    @property
    def total_n(self) -> int:
        return sum(count for _, count in self.entries)

    @property
    def last_slot(self) -> int:
        return self.entries[-1][0]

    def active_count(self, slot: int) -> int:
        """n(t): packets injected at or before the given slot."""
        total = 0
        for s, count in self.entries:
            if s > slot:
                break
            total += count
        return total

    def to_json(self) -> str:
        return json.dumps({"entries": [[s, c] for s, c in self.entries]})

    @classmethod
    def from_json(cls, text: str) -> "InjectionSchedule":
        try:
            doc = json.loads(text)
            raw = [(slot, count) for slot, count in doc["entries"]]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"malformed schedule document: {exc}") from exc
        for slot, count in raw:
            if not isinstance(slot, int) or not isinstance(count, int):
                raise ConfigError(f"non-integer schedule entry [{slot}, {count}]")
        return cls(entries=tuple(raw))


@dataclass(frozen=True)
class RegimeReport:
    """Schedule classification: t*, its threshold, and (optionally) gaps."""

    t_star: float  # slot index, or math.inf when the threshold is never crossed
    threshold: float  # w0 / sqrt(C), inf if it overflows a float
    gamma: Optional[int] = None
    gaps: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def make_schedule(
    kind: str, n: int, params: Optional[Mapping[str, object]] = None
) -> InjectionSchedule:
    """Build one of the named schedule shapes for n packets."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    opts = dict(params or {})

    def take(name, default=None):
        if name in opts:
            return opts.pop(name)
        if default is not None:
            return default
        raise ConfigError(f"schedule kind {kind!r} requires parameter {name!r}")

    if kind == "all_at_once":
        entries = [(1, n)]
    elif kind == "two_burst":
        t2 = int(take("t2"))
        split = int(take("split"))
        if not 1 <= split < n:
            raise ConfigError("two_burst split must satisfy 1 <= split < n")
        if t2 < 2:
            raise ConfigError("two_burst t2 must be >= 2")
        entries = [(1, split), (t2, n - split)]
    elif kind == "drip":
        interval = int(take("interval"))
        if interval < 1:
            raise ConfigError("drip interval must be >= 1")
        entries = [(1 + i * interval, 1) for i in range(n)]
    elif kind == "anti_gap":
        gamma = int(take("gamma"))
        if gamma < 2:
            raise ConfigError("anti_gap gamma must be >= 2")
        entries = [(1 + i * (gamma - 1), 1) for i in range(n)]
    elif kind == "spike_before_good_contention":
        entries = _spike_entries(
            n,
            collision_cost=int(take("C")),
            epsilon=float(take("epsilon")),
            sample_scale=int(take("d")),
        )
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")

    if opts:
        raise ConfigError(f"unexpected parameters for {kind!r}: {sorted(opts)}")
    return InjectionSchedule(entries=tuple(entries))


def _spike_entries(
    n: int, collision_cost: int, epsilon: float, sample_scale: int
) -> list[tuple[int, int]]:
    """First batch of floor(w0/sqrt(C)) packets at slot 1; the rest land one slot
    before that batch's pure halving would first reach contention 3/sqrt(C)."""
    config = ProtocolConfig(
        collision_cost=collision_cost,
        epsilon=epsilon,
        sample_scale=sample_scale,
        setting=Setting.DYNAMIC,
    )
    head_log = config.initial_exponent - math.log2(collision_cost) / 2.0
    if head_log > 62:
        raise ConfigError("w0/sqrt(C) exceeds any feasible first batch; pick a smaller C or epsilon")
    head = math.floor(2.0**head_log)
    if head < 1:
        raise ConfigError("w0/sqrt(C) is below 1; no pre-spike batch exists")
    if n <= head:
        raise ConfigError(f"n must exceed the pre-spike batch size {head}")

    target = 3.0 / math.sqrt(collision_cost)
    big_sample = sample_length(config, config.initial_exponent, Phase.HALVING)
    x = config.initial_exponent
    samples_done = 0
    while x >= 1.0:
        if head * 2.0 ** (-x) >= target:
            trigger = 1 + samples_done * big_sample
            return [(1, head), (trigger - 1, n - head)]
        x -= 1.0
        samples_done += 1
    raise ConfigError("pure halving never reaches contention 3/sqrt(C) for these parameters")


def classify_t_star(
    schedule: InjectionSchedule, collision_cost: int, epsilon: float
) -> RegimeReport:
    """Largest slot t with n(t) <= w0/sqrt(C); inf if never exceeded, 0 if exceeded at slot 1."""
    if collision_cost < 4:
        raise ConfigError("C must be >= 4")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must be in (0, 1)")
    threshold_log = collision_cost**epsilon - math.log2(collision_cost) / 2.0
    threshold = 2.0**threshold_log if threshold_log < 1023 else math.inf
    cumulative = 0
    for slot, count in schedule.entries:
        cumulative += count
        # Compare in the log domain so a huge w0 never overflows.
        if math.log2(cumulative) > threshold_log:
            return RegimeReport(t_star=slot - 1, threshold=threshold)
    return RegimeReport(t_star=math.inf, threshold=threshold)


def gap_threshold(n: int, epsilon: float, kappa: float) -> int:
    """Minimum gap length gamma = ceil(kappa * (log2 n)**(1 + 1/(2 eps)) * log2 log2 n)."""
    if n < 4:
        raise ConfigError("n must be >= 4 so that log2 log2 n is positive")
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must be in (0, 1)")
    lg = math.log2(n)
    return math.ceil(kappa * lg ** (1.0 + 1.0 / (2.0 * epsilon)) * math.log2(lg))


def find_gaps(
    schedule: InjectionSchedule, gamma: int, horizon: int
) -> list[tuple[int, int]]:
    """Maximal injection-free intervals of length >= gamma within [1, horizon].

    Returned as (start_slot, length) pairs in slot order.
    """
    if gamma < 1:
        raise ConfigError("gamma must be >= 1")
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    gaps: list[tuple[int, int]] = []
    prev = 0  # virtual occupied slot before the timeline starts
    for slot, _ in schedule.entries:
        if slot > horizon:
            break
        length = slot - prev - 1
        if length >= gamma:
            gaps.append((prev + 1, length))
        prev = slot
    tail = horizon - prev
    if tail >= gamma:
        gaps.append((prev + 1, tail))
    return gaps


def full_regime_report(
    schedule: InjectionSchedule,
    collision_cost: int,
    epsilon: float,
    kappa: float,
    horizon: int,
) -> RegimeReport:
    """t*, threshold, gamma, and all gaps of a schedule in one report."""
    base = classify_t_star(schedule, collision_cost, epsilon)
    gamma = gap_threshold(schedule.total_n, epsilon, kappa)
    gaps = tuple(find_gaps(schedule, gamma, horizon))
    return RegimeReport(t_star=base.t_star, threshold=base.threshold, gamma=gamma, gaps=gaps)
