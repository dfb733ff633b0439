"""Slot-synchronous wakeup simulator for a shared channel with collision cost."""

from .adversary import InjectionSchedule, RegimeReport, make_schedule
from .channel import CostLedger, OutcomeKind, SlotOutcome, accrue, resolve_slot
from .engine import (
    EnsembleStats,
    RunRecord,
    Termination,
    run_ensemble,
    simulate,
    simulate_batched,
)
from .errors import ConfigError, ProtocolStateError, VerificationError
from .protocols import PacketState, Phase, ProtocolConfig, ProtocolKind, Setting

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CostLedger",
    "EnsembleStats",
    "InjectionSchedule",
    "OutcomeKind",
    "PacketState",
    "Phase",
    "ProtocolConfig",
    "ProtocolKind",
    "ProtocolStateError",
    "RegimeReport",
    "RunRecord",
    "Setting",
    "SlotOutcome",
    "Termination",
    "VerificationError",
    "accrue",
    "make_schedule",
    "resolve_slot",
    "run_ensemble",
    "simulate",
    "simulate_batched",
    "__version__",
]
