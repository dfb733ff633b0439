"""Slot-loop simulation engine.

Runs a schedule of packet batches against the shared channel: activates
batches, collects send decisions, resolves each slot, broadcasts the one-bit
"a success happened" observation, and advances every packet. Packets never
learn anything else about a slot; in particular they cannot tell an empty slot
from a collision.

Within a batch every packet follows the same deterministic probability
sequence, so a batch is simulated with one shared state. The per-packet path
draws an independent coin for every packet; the batched fast path draws one
binomial count per batch per slot, which has exactly the same law. Both paths
vectorise over the slots between consecutive probability changes (sample
boundaries, injections, the slot cap).

Ensembles derive the seed of trial i from a 64-bit master seed via the
SplitMix64 finalizer (see derive_run_seed), so results are reproducible and
independent of how many workers ran the trials.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import IO, Optional, Sequence

import numpy as np

from . import adversary, protocols
from .adversary import InjectionSchedule
from .channel import OutcomeKind
from .errors import ConfigError
from .protocols import (
    PacketState,
    Phase,
    ProtocolConfig,
    ProtocolKind,
    Setting,
    WINDOW_KINDS,
)

DEFAULT_SLOT_CAP = 10**8

_MASK64 = (1 << 64) - 1
# Memory guards: longest stretch of slots drawn in one vectorised block, and
# a cap on total drawn elements (rows x slots) per block.
_MAX_BLOCK_PACKET = 1 << 16
_MAX_BLOCK_BATCHED = 1 << 20
_MAX_BLOCK_ELEMENTS = 1 << 21

CSV_FIELDS = (
    "trial",
    "seed",
    "latency",
    "collisions",
    "collision_cost",
    "termination",
    "success_slot",
    "winner_batch",
)


class Termination(Enum):
    SUCCESS = "success"
    SLOT_CAP = "slot_cap"


def derive_run_seed(master_seed: int, trial_index: int) -> int:
    """Per-trial seed: SplitMix64 finalizer of master_seed + (i+1) * golden gamma."""
    z = (master_seed + (trial_index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class RunRecord:
    """Everything observable about one run.

    latency counts slots from the first injection to the first success
    inclusive; for capped runs it equals the slot cap (a lower bound on the
    true value). contention_sum / contention_sq_sum are the exact per-slot
    contention totals regardless of whether full traces were recorded.
    """

    latency: int
    collision_count: int
    collision_cost: int
    termination: Termination
    success_slot: int  # -1 when the run hit the slot cap
    winner_batch: int  # -1 when there was no success
    seed: int
    setting: Setting
    kind: ProtocolKind
    contention_sum: float
    contention_sq_sum: float
    success_exponent: Optional[float] = None
    success_phase: Optional[Phase] = None
    contention_trace: Optional[np.ndarray] = None
    outcome_trace: Optional[np.ndarray] = None  # int8: 0 empty, 1 success, 2 collision
    all_halving_trace: Optional[np.ndarray] = None


@dataclass
class _Batch:
    index: int
    size: int
    state: PacketState


def _draw_slot_counts(
    rng: np.random.Generator, size: int, prob: float, n_slots: int, per_packet: bool
) -> np.ndarray:
    """Sender counts for one batch over a block of slots.

    per_packet draws an independent Bernoulli coin for every packet; otherwise
    a single binomial per slot. Both give Binomial(size, prob) per slot.
    """
    if per_packet:
        return (rng.random((size, n_slots)) < prob).sum(axis=0)
    return rng.binomial(size, prob, size=n_slots)


def _simulate(
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    seed: int,
    slot_cap: int,
    *,
    per_packet: bool,
    record_traces: bool,
) -> RunRecord:
    if slot_cap < 1:
        raise ConfigError("slot_cap must be >= 1")
    if config.setting is Setting.STATIC and len(schedule.entries) > 1:
        raise ConfigError("static setting requires a single batch injected at slot 1")

    rng = np.random.default_rng(seed)
    entries = schedule.entries
    max_block = _MAX_BLOCK_PACKET if per_packet else _MAX_BLOCK_BATCHED

    batches: list[_Batch] = []
    next_entry = 0
    t = 1
    collisions = 0
    con_sum = 0.0
    con_sq_sum = 0.0
    con_chunks: list[np.ndarray] = []
    outcome_chunks: list[np.ndarray] = []
    halving_chunks: list[np.ndarray] = []

    termination = Termination.SLOT_CAP
    success_slot = -1
    winner_batch = -1
    success_exponent: Optional[float] = None
    success_phase: Optional[Phase] = None

    while t <= slot_cap:
        while next_entry < len(entries) and entries[next_entry][0] == t:
            slot, count = entries[next_entry]
            batches.append(_Batch(next_entry, count, protocols.init(config, slot)))
            next_entry += 1

        rows = sum(b.size for b in batches) if per_packet else len(batches)
        block = min(slot_cap - t + 1, max_block, max(1, _MAX_BLOCK_ELEMENTS // max(rows, 1)))
        if next_entry < len(entries):
            block = min(block, entries[next_entry][0] - t)
        probs = []
        for b in batches:
            rem = protocols.slots_until_update(b.state, config)
            if rem is not None:
                block = min(block, rem)
            probs.append(protocols.send_probability(b.state, config, t - b.state.activation_slot))

        counts = np.zeros(block, dtype=np.int64)
        per_batch = []
        for b, p in zip(batches, probs):
            c = _draw_slot_counts(rng, b.size, p, block, per_packet)
            per_batch.append(c)
            counts += c

        hits = np.nonzero(counts == 1)[0]
        success_here = hits.size > 0
        stop = int(hits[0]) if success_here else block - 1

        collisions += int(np.count_nonzero(counts[: stop + 1] >= 2))
        contention = math.fsum(b.size * p for b, p in zip(batches, probs))
        con_sum += (stop + 1) * contention
        con_sq_sum += (stop + 1) * contention * contention

        if record_traces:
            con_chunks.append(np.full(stop + 1, contention))
            outcome_chunks.append(np.minimum(counts[: stop + 1], 2).astype(np.int8))
            all_halving = all(b.state.phase is Phase.HALVING for b in batches)
            halving_chunks.append(np.full(stop + 1, all_halving, dtype=bool))

        if success_here:
            termination = Termination.SUCCESS
            success_slot = t + stop
            for b, c in zip(batches, per_batch):
                if c[stop] == 1:
                    winner_batch = b.index
                    if config.kind in WINDOW_KINDS:
                        success_exponent = b.state.exponent
                        success_phase = b.state.phase
                    break
            break

        for b in batches:
            b.state = protocols.advance_many(b.state, config, block)
        t += block

    latency = success_slot if termination is Termination.SUCCESS else slot_cap
    cost = collisions * config.collision_cost
    record = RunRecord(
        latency=latency,
        collision_count=collisions,
        collision_cost=cost,
        termination=termination,
        success_slot=success_slot,
        winner_batch=winner_batch,
        seed=seed,
        setting=config.setting,
        kind=config.kind,
        contention_sum=con_sum,
        contention_sq_sum=con_sq_sum,
        success_exponent=success_exponent,
        success_phase=success_phase,
    )
    if record_traces:
        record.contention_trace = (
            np.concatenate(con_chunks) if con_chunks else np.zeros(0)
        )
        record.outcome_trace = (
            np.concatenate(outcome_chunks) if outcome_chunks else np.zeros(0, dtype=np.int8)
        )
        record.all_halving_trace = (
            np.concatenate(halving_chunks) if halving_chunks else np.zeros(0, dtype=bool)
        )
    return record


def simulate(
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    seed: int,
    slot_cap: int = DEFAULT_SLOT_CAP,
    record_traces: bool = False,
) -> RunRecord:
    """One run with an independent coin per packet per slot."""
    return _simulate(
        config, schedule, seed, slot_cap, per_packet=True, record_traces=record_traces
    )


def simulate_batched(
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    seed: int,
    slot_cap: int = DEFAULT_SLOT_CAP,
    record_traces: bool = False,
) -> RunRecord:
    """One run drawing a binomial sender count per batch per slot.

    Distributionally identical to simulate(); the sample paths differ.
    """
    return _simulate(
        config, schedule, seed, slot_cap, per_packet=False, record_traces=record_traces
    )


def outcome_kinds(record: RunRecord) -> list[OutcomeKind]:
    """Decode a recorded outcome trace into channel outcome kinds."""
    if record.outcome_trace is None:
        raise ValueError("run was recorded without traces")
    mapping = (OutcomeKind.EMPTY, OutcomeKind.SUCCESS, OutcomeKind.COLLISION)
    return [mapping[v] for v in record.outcome_trace]


def good_window_marker(record: RunRecord, n: int, collision_cost: int) -> bool:
    """Did the run succeed while the common window was still >= n*sqrt(C)?

    Only meaningful for static runs of the window protocols, where the still-
    halving window shrinks toward the good band from above.
    """
    if record.setting is not Setting.STATIC:
        raise ConfigError("good-window classification is defined for static runs only")
    if record.kind not in WINDOW_KINDS:
        raise ConfigError("good-window classification requires a windowed protocol")
    if record.termination is not Termination.SUCCESS:
        return False
    threshold = math.log2(n) + math.log2(collision_cost) / 2.0
    return (
        record.success_phase is Phase.HALVING
        and record.success_exponent is not None
        and record.success_exponent >= threshold - 1e-12
    )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleStats:
    trials: int
    mean_latency: float
    mean_collisions: float
    mean_collision_cost: float
    latency_quantiles: dict[str, int]
    frac_terminated: float
    frac_success_at_or_before_good_window: Optional[float]

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "mean_latency": self.mean_latency,
            "mean_collisions": self.mean_collisions,
            "mean_collision_cost": self.mean_collision_cost,
            "latency_quantiles": dict(self.latency_quantiles),
            "frac_terminated": self.frac_terminated,
            "frac_success_at_or_before_good_window": self.frac_success_at_or_before_good_window,
        }


def resolve_workers(explicit: Optional[int] = None) -> int:
    """Worker count: explicit argument, else WAKEUP_SIM_THREADS (0 = auto), else 1."""
    if explicit is not None:
        return max(1, explicit)
    raw = os.environ.get("WAKEUP_SIM_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"WAKEUP_SIM_THREADS must be an integer, got {raw!r}") from exc
    if value == 0:
        return os.cpu_count() or 1
    return max(1, value)


def _run_chunk(args) -> list[RunRecord]:
    config, schedule, seeds, slot_cap, per_packet = args
    return [
        _simulate(config, schedule, s, slot_cap, per_packet=per_packet, record_traces=False)
        for s in seeds
    ]


def _quantile(sorted_values: Sequence[int], q: float) -> int:
    idx = max(0, math.ceil(q * len(sorted_values)) - 1)
    return sorted_values[idx]


def summarize_records(
    records: Sequence[RunRecord],
    config: ProtocolConfig,
    schedule: InjectionSchedule,
) -> EnsembleStats:
    n_trials = len(records)
    latencies = sorted(r.latency for r in records)
    good_frac = None
    if config.setting is Setting.STATIC and config.kind in WINDOW_KINDS:
        n = schedule.total_n
        good = sum(good_window_marker(r, n, config.collision_cost) for r in records)
        good_frac = good / n_trials
    return EnsembleStats(
        trials=n_trials,
        mean_latency=math.fsum(r.latency for r in records) / n_trials,
        mean_collisions=math.fsum(r.collision_count for r in records) / n_trials,
        mean_collision_cost=math.fsum(r.collision_cost for r in records) / n_trials,
        latency_quantiles={
            "p50": _quantile(latencies, 0.50),
            "p95": _quantile(latencies, 0.95),
            "p99": _quantile(latencies, 0.99),
        },
        frac_terminated=sum(r.termination is Termination.SUCCESS for r in records) / n_trials,
        frac_success_at_or_before_good_window=good_frac,
    )


def run_ensemble(
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    trials: int,
    master_seed: int,
    slot_cap: int = DEFAULT_SLOT_CAP,
    *,
    batched: bool = True,
    workers: Optional[int] = None,
) -> tuple[EnsembleStats, list[RunRecord]]:
    """Independent runs with per-trial seeds derived from the master seed.

    The aggregate is computed from records ordered by trial index, so it does
    not depend on the worker count or completion order.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    n_workers = resolve_workers(workers)
    seeds = [derive_run_seed(master_seed, i) for i in range(trials)]
    per_packet = not batched

    if n_workers <= 1 or trials < 4:
        records = _run_chunk((config, schedule, seeds, slot_cap, per_packet))
    else:
        chunk_size = max(1, math.ceil(trials / (4 * n_workers)))
        chunks = [
            (config, schedule, seeds[i : i + chunk_size], slot_cap, per_packet)
            for i in range(0, trials, chunk_size)
        ]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
            results = list(pool.map(_run_chunk, chunks))
        records = [r for chunk in results for r in chunk]

    return summarize_records(records, config, schedule), records


# ---------------------------------------------------------------------------
# Trace audits
# ---------------------------------------------------------------------------

@dataclass
class RewindAudit:
    """Result of checking the halved-window rewind relation on one trace.

    Every audited slot t (all packets halving, within the pre-t* regime,
    contention at least 3/sqrt(C), at least one large sample of history) must
    satisfy Con(t - s) in [Con(t)/3, Con(t)/2] for the large-sample length s.
    """

    audited_slots: int
    violations: int
    worst_margin: float  # smallest slack to either interval end; inf when nothing audited


def audit_rewind(
    record: RunRecord,
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    rel_tol: float = 1e-9,
) -> RewindAudit:
    if config.setting is not Setting.DYNAMIC:
        raise ConfigError("the rewind audit applies to dynamic runs")
    if config.kind is not ProtocolKind.AIM_HIGH:
        raise ConfigError("the rewind audit applies to the plain window protocol")
    if record.contention_trace is None or record.all_halving_trace is None:
        raise ConfigError("the rewind audit needs a run recorded with traces")

    con = record.contention_trace
    halving = record.all_halving_trace
    length = len(con)
    s = protocols.sample_length(config, config.initial_exponent, Phase.HALVING)
    report = adversary.classify_t_star(schedule, config.collision_cost, config.epsilon)
    target = 3.0 / math.sqrt(config.collision_cost)

    slots = np.arange(1, length + 1)
    mask = halving & (con >= target) & (slots > s)
    if math.isfinite(report.t_star):
        mask &= slots <= report.t_star
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return RewindAudit(audited_slots=0, violations=0, worst_margin=math.inf)

    cur = con[idx]
    prev = con[idx - s]
    lo = cur / 3.0
    hi = cur / 2.0
    ok = (prev >= lo * (1.0 - rel_tol)) & (prev <= hi * (1.0 + rel_tol))
    margins = np.minimum(prev - lo, hi - prev)
    return RewindAudit(
        audited_slots=int(idx.size),
        violations=int(np.count_nonzero(~ok)),
        worst_margin=float(margins.min()),
    )


def run_rewind_suite(
    config: ProtocolConfig,
    schedule: InjectionSchedule,
    trials: int,
    master_seed: int,
    slot_cap: int = DEFAULT_SLOT_CAP,
) -> dict:
    """Rewind audit over an ensemble; JSON-ready aggregate."""
    audited = 0
    violations = 0
    worst = math.inf
    for i in range(trials):
        seed = derive_run_seed(master_seed, i)
        record = simulate_batched(config, schedule, seed, slot_cap, record_traces=True)
        audit = audit_rewind(record, config, schedule)
        audited += audit.audited_slots
        violations += audit.violations
        worst = min(worst, audit.worst_margin)
    return {
        "lemma": "halving_rewind_window",
        "parameters_swept": f"{trials} dynamic runs, {audited} audited slots",
        "violations": violations,
        "worst_margin": worst if math.isfinite(worst) else None,
        "samples": audited,
    }


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def write_records_csv(
    stream: IO[str], records: Sequence[RunRecord], header_meta: Optional[dict] = None
) -> None:
    """RunRecord summaries as CSV; header_meta is echoed as a leading comment line."""
    if header_meta is not None:
        stream.write("# config: " + json.dumps(header_meta, sort_keys=True) + "\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for i, r in enumerate(records):
        writer.writerow(
            [
                i,
                r.seed,
                r.latency,
                r.collision_count,
                r.collision_cost,
                r.termination.value,
                r.success_slot,
                r.winner_batch,
            ]
        )


def write_trace_jsonl(stream: IO[str], record: RunRecord) -> None:
    """Full trace as line-delimited JSON, one object per slot."""
    if record.contention_trace is None or record.outcome_trace is None:
        raise ValueError("run was recorded without traces")
    names = ("empty", "success", "collision")
    for i in range(len(record.outcome_trace)):
        stream.write(
            json.dumps(
                {
                    "t": i + 1,
                    "con": float(record.contention_trace[i]),
                    "outcome": names[int(record.outcome_trace[i])],
                }
            )
            + "\n"
        )
