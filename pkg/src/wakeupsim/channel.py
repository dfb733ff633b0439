"""Shared-channel slot semantics and collision-cost accounting.

A slot carries at most one packet: zero senders leave it empty, a lone sender
succeeds, and two or more senders collide and all fail. Every collision is
charged a fixed, known cost measured in slot-equivalents. Listeners learn only
whether a success occurred; an empty slot and a collision are indistinguishable
to them (that one-bit feedback rule is enforced by the engine).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Hashable, Iterable, Optional

from .errors import ConfigError

MIN_UNIT_COST = 4


class OutcomeKind(Enum):
    EMPTY = "empty"
    SUCCESS = "success"
    COLLISION = "collision"


def kind_for_count(sender_count: int) -> OutcomeKind:
    """Classify a slot purely by how many packets transmitted in it."""
    if sender_count < 0:
        raise ValueError("sender_count must be nonnegative")
    if sender_count == 0:
        return OutcomeKind.EMPTY
    if sender_count == 1:
        return OutcomeKind.SUCCESS
    return OutcomeKind.COLLISION


@dataclass(frozen=True)
class SlotOutcome:
    kind: OutcomeKind
    sender_count: int
    winner: Optional[Hashable] = None

    def __post_init__(self) -> None:
        if kind_for_count(self.sender_count) is not self.kind:
            raise ValueError(
                f"kind {self.kind.value!r} inconsistent with sender_count {self.sender_count}"
            )
        if (self.winner is not None) != (self.kind is OutcomeKind.SUCCESS):
            raise ValueError("winner must be present exactly when the slot is a success")


def resolve_slot(sender_ids: Iterable[Hashable]) -> SlotOutcome:
    """Resolve one slot from the set of senders."""
    senders = set(sender_ids)
    count = len(senders)
    winner = next(iter(senders)) if count == 1 else None
    return SlotOutcome(kind=kind_for_count(count), sender_count=count, winner=winner)


@dataclass(frozen=True)
class CostLedger:
    """Running collision tally; cost stays an exact integer multiple of the unit cost."""

    unit_cost: int
    collision_count: int = 0
    collision_cost: int = 0

    def __post_init__(self) -> None:
        if self.unit_cost < MIN_UNIT_COST:
            raise ConfigError(f"C must be >= {MIN_UNIT_COST}")
        if self.collision_count < 0:
            raise ValueError("collision_count must be nonnegative")
        if self.collision_cost != self.collision_count * self.unit_cost:
            raise ValueError("collision_cost must equal collision_count * unit_cost")


def accrue(ledger: CostLedger, outcome: SlotOutcome) -> CostLedger:
    """Charge one slot outcome to the ledger; only collisions cost anything."""
    if outcome.kind is not OutcomeKind.COLLISION:
        return ledger
    return replace(
        ledger,
        collision_count=ledger.collision_count + 1,
        collision_cost=ledger.collision_cost + ledger.unit_cost,
    )
