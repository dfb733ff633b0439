"""Per-packet sending state machines.

The main protocol starts each packet at a deliberately huge window (log2 size
C**epsilon), halves the window after every long sample without a success, and,
once the window cannot halve further, switches to classic doubling backoff from
window 4 in short samples. An iterated variant truncates the doubling phase of
cycle j to 2**j short samples and then restarts halving from the top. Two
baselines (per-slot halving of the probability, and a fixed sending
probability) share the same interface.

Windows are kept in log2 form: the send probability is 2**(-exponent), so the
initial window 2**(C**epsilon) never has to be materialised and every halving
or doubling is an exact +-1 on the exponent. A sample is a run of slots at a
fixed window; its length is d*sqrt(C)*ell slots while halving and d*ell slots
while doubling, where ell is ln(window) under a global clock (static setting)
and ln(C) when packets keep private clocks (dynamic setting).

All operations are pure: they take a state and return a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Optional

from .channel import MIN_UNIT_COST
from .errors import ConfigError, ProtocolStateError

LN2 = math.log(2.0)

#: Exponent of the window every doubling phase (re)starts from, i.e. window 4.
DOUBLING_ENTRY_EXPONENT = 2.0


class Setting(Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class ProtocolKind(Enum):
    AIM_HIGH = "aim-high"
    ITERATED_AIM_HIGH = "iterated-aim-high"
    BACKOFF_PER_SLOT = "backoff-per-slot"
    CONSTANT_PROB = "constant-prob"


WINDOW_KINDS = (ProtocolKind.AIM_HIGH, ProtocolKind.ITERATED_AIM_HIGH)


class Phase(Enum):
    HALVING = "halving"
    DOUBLING = "doubling"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class ProtocolConfig:
    """Parameters shared by every packet in a run.

    collision_cost is the known per-collision charge C (>= 4), epsilon the
    small exponent shaping the initial window, and sample_scale the constant d
    multiplying every sample length.
    """

    collision_cost: int
    epsilon: float = 0.4
    sample_scale: int = 8
    setting: Setting = Setting.STATIC
    kind: ProtocolKind = ProtocolKind.AIM_HIGH
    constant_prob: float = 0.5

    def __post_init__(self) -> None:
        if not isinstance(self.collision_cost, int) or isinstance(self.collision_cost, bool):
            raise ConfigError("C must be an integer")
        if self.collision_cost < MIN_UNIT_COST:
            raise ConfigError(f"C must be >= {MIN_UNIT_COST}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must be in (0, 1)")
        if not isinstance(self.sample_scale, int) or self.sample_scale < 1:
            raise ConfigError("d must be a positive integer")
        if self.kind is ProtocolKind.CONSTANT_PROB and not 0.0 < self.constant_prob <= 1.0:
            raise ConfigError("constant_prob must be in (0, 1]")

    @property
    def initial_exponent(self) -> float:
        """log2 of the starting window, C**epsilon."""
        return self.collision_cost**self.epsilon


@dataclass(frozen=True)
class PacketState:
    """One packet's position in the protocol.

    exponent is log2 of the current window (send probability 2**-exponent).
    iteration and doubling_samples_done only matter for the iterated variant:
    they count restart cycles and the short samples finished in the current
    truncated doubling phase.
    """

    phase: Phase
    exponent: float
    slot_in_sample: int
    sample_len: int
    activation_slot: int
    iteration: int = 0
    doubling_samples_done: int = 0


def sample_length(config: ProtocolConfig, exponent: float, phase: Phase) -> int:
    """Slots in one sample at the given window exponent, rounded up to an integer."""
    if phase is Phase.HALVING:
        if config.setting is Setting.STATIC and exponent < 1.0:
            raise ProtocolStateError("halving exponent below 1 is a misconfigured state")
        scale = config.sample_scale * math.sqrt(config.collision_cost)
    elif phase is Phase.DOUBLING:
        scale = float(config.sample_scale)
    else:
        raise ProtocolStateError("terminated packets have no sample")
    if config.setting is Setting.STATIC:
        ell = exponent * LN2  # ln of the current window
    else:
        ell = math.log(config.collision_cost)
    return math.ceil(scale * ell)


def init(config: ProtocolConfig, activation_slot: int = 1) -> PacketState:
    """State of a packet the moment it becomes active."""
    if config.kind in WINDOW_KINDS:
        x0 = config.initial_exponent
        return PacketState(
            phase=Phase.HALVING,
            exponent=x0,
            slot_in_sample=0,
            sample_len=sample_length(config, x0, Phase.HALVING),
            activation_slot=activation_slot,
        )
    # Baselines carry no window machinery; phase is a pass-through.
    return PacketState(
        phase=Phase.HALVING,
        exponent=0.0,
        slot_in_sample=0,
        sample_len=1,
        activation_slot=activation_slot,
    )


def send_probability(
    state: PacketState, config: ProtocolConfig, slots_since_activation: int = 0
) -> float:
    """Probability of transmitting in the current slot."""
    if state.phase is Phase.TERMINATED:
        return 0.0
    if config.kind is ProtocolKind.BACKOFF_PER_SLOT:
        if slots_since_activation < 0:
            raise ValueError("slots_since_activation must be nonnegative")
        return 2.0 ** (-slots_since_activation)
    if config.kind is ProtocolKind.CONSTANT_PROB:
        return config.constant_prob
    return 2.0 ** (-state.exponent)


def _next_sample(state: PacketState, config: ProtocolConfig) -> PacketState:
    """Window update at a sample boundary reached without a success."""
    if state.phase is Phase.HALVING:
        if state.exponent - 1.0 >= 1.0:
            phase, exponent = Phase.HALVING, state.exponent - 1.0
        else:
            phase, exponent = Phase.DOUBLING, DOUBLING_ENTRY_EXPONENT
        return replace(
            state,
            phase=phase,
            exponent=exponent,
            slot_in_sample=0,
            sample_len=sample_length(config, exponent, phase),
            doubling_samples_done=0,
        )
    # Doubling boundary.
    if config.kind is ProtocolKind.ITERATED_AIM_HIGH:
        done = state.doubling_samples_done + 1
        if done >= 2**state.iteration:
            x0 = config.initial_exponent
            return replace(
                state,
                phase=Phase.HALVING,
                exponent=x0,
                slot_in_sample=0,
                sample_len=sample_length(config, x0, Phase.HALVING),
                iteration=state.iteration + 1,
                doubling_samples_done=0,
            )
        exponent = state.exponent + 1.0
        return replace(
            state,
            exponent=exponent,
            slot_in_sample=0,
            sample_len=sample_length(config, exponent, Phase.DOUBLING),
            doubling_samples_done=done,
        )
    exponent = state.exponent + 1.0
    return replace(
        state,
        exponent=exponent,
        slot_in_sample=0,
        sample_len=sample_length(config, exponent, Phase.DOUBLING),
    )


def advance(state: PacketState, config: ProtocolConfig, success_observed: bool) -> PacketState:
    """Account for one elapsed slot and the shared one-bit success observation.

    The first success anywhere terminates every packet. Otherwise the packet
    moves one slot forward in its sample; completing a sample halves the window
    (or enters/continues doubling) per the protocol kind.
    """
    if state.phase is Phase.TERMINATED:
        raise ProtocolStateError("cannot advance a terminated packet")
    if success_observed:
        return replace(state, phase=Phase.TERMINATED)
    if config.kind not in WINDOW_KINDS:
        return state
    nxt = state.slot_in_sample + 1
    if nxt < state.sample_len:
        return replace(state, slot_in_sample=nxt)
    return _next_sample(state, config)


def iterated_advance(
    state: PacketState, config: ProtocolConfig, success_observed: bool
) -> PacketState:
    """advance() for the iterated variant (truncated doubling, halving restarts)."""
    if config.kind is not ProtocolKind.ITERATED_AIM_HIGH:
        raise ConfigError("iterated_advance requires the iterated protocol kind")
    return advance(state, config, success_observed)


def advance_many(state: PacketState, config: ProtocolConfig, n_slots: int) -> PacketState:
    """Fold advance() over n_slots success-free slots in O(1).

    n_slots may not cross more than one sample boundary, i.e. it must be at
    most slots_until_update(state, config).
    """
    if n_slots < 0:
        raise ValueError("n_slots must be nonnegative")
    if n_slots == 0:
        return state
    if state.phase is Phase.TERMINATED:
        raise ProtocolStateError("cannot advance a terminated packet")
    if config.kind not in WINDOW_KINDS:
        return state
    if n_slots > state.sample_len - state.slot_in_sample:
        raise ValueError("advance_many may not cross a sample boundary")
    jumped = replace(state, slot_in_sample=state.slot_in_sample + n_slots - 1)
    return advance(jumped, config, False)


def slots_until_update(state: PacketState, config: ProtocolConfig) -> Optional[int]:
    """Slots (current one included) for which the send probability stays fixed.

    None means it never changes again on its own (constant-rate senders and
    terminated packets).
    """
    if state.phase is Phase.TERMINATED or config.kind is ProtocolKind.CONSTANT_PROB:
        return None
    if config.kind is ProtocolKind.BACKOFF_PER_SLOT:
        return 1
    return state.sample_len - state.slot_in_sample


def halving_exponents(config: ProtocolConfig) -> Iterator[float]:
    """Window exponents the halving phase visits, in order."""
    x = config.initial_exponent
    while x >= 1.0:
        yield x
        x -= 1.0


def halving_slot_bound(config: ProtocolConfig, min_exponent: float = 1.0) -> int:
    """Total slots the halving phase spends at window exponents >= min_exponent."""
    return sum(
        sample_length(config, x, Phase.HALVING)
        for x in halving_exponents(config)
        if x >= min_exponent - 1e-12
    )
