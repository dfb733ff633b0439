"""Command-line front end.

Three subcommands: `simulate` runs an ensemble and writes per-trial CSV rows
plus aggregate stats, `sweep` repeats that over a parameter list and fits
log-log slopes, and `verify` runs the closed-form bound suite or the dynamic
trace audits. Every run is reproducible from its flag set plus the master
seed; the flag set is echoed into the header of every output file. The
WAKEUP_SIM_THREADS environment variable caps worker processes (0 = one per
CPU). Exit codes: 0 ok, 1 bad configuration, 2 verification failure, 3 I/O
error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional, Sequence

from . import adversary, analytics, engine
from .adversary import InjectionSchedule
from .errors import ConfigError
from .protocols import ProtocolConfig, ProtocolKind, Setting

_PROTOCOLS = {kind.value: kind for kind in ProtocolKind}
_SETTINGS = {setting.value: setting for setting in Setting}
_SCHEDULE_KIND_FLAGS = {
    "all-at-once": "all_at_once",
    "two-burst": "two_burst",
    "drip": "drip",
    "anti-gap": "anti_gap",
    "spike": "spike_before_good_contention",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wakeup-sim",
        description="Shared-channel wakeup simulator with collision-cost accounting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_protocol_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--protocol", choices=sorted(_PROTOCOLS), default="aim-high")
        p.add_argument("--setting", choices=sorted(_SETTINGS), default="static")
        p.add_argument("--C", dest="C", type=int, required=True, help="collision cost, >= 4")
        p.add_argument("--epsilon", type=float, default=0.4)
        p.add_argument("--d", dest="d", type=int, default=8, help="sample-size constant")
        p.add_argument("--constant-p", type=float, default=0.5)

    def add_schedule_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--schedule", help="path to a schedule JSON document")
        p.add_argument("--schedule-kind", choices=sorted(_SCHEDULE_KIND_FLAGS), default="all-at-once")
        p.add_argument("--n", type=int, help="total packets (schedule kinds)")
        p.add_argument("--t2", type=int, help="second burst slot (two-burst)")
        p.add_argument("--split", type=int, help="first burst size (two-burst)")
        p.add_argument("--interval", type=int, help="slots between injections (drip)")
        p.add_argument("--gamma", type=int, help="gap length being defeated (anti-gap)")

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--seed", type=int, default=1, help="master seed")
        p.add_argument("--slot-cap", type=int, default=engine.DEFAULT_SLOT_CAP)
        p.add_argument("--run-path", choices=("batched", "packet"), default="batched")

    sim = sub.add_parser("simulate", help="run one ensemble")
    add_protocol_flags(sim)
    add_schedule_flags(sim)
    add_run_flags(sim)
    sim.add_argument("--out", help="per-trial CSV output path")
    sim.add_argument("--trace-out", help="full trace of trial 0 as JSON lines")

    swp = sub.add_parser("sweep", help="run ensembles over a parameter list and fit slopes")
    add_protocol_flags(swp)
    add_schedule_flags(swp)
    add_run_flags(swp)
    swp.add_argument("--param", choices=("C", "n", "epsilon", "d"), required=True)
    swp.add_argument("--values", required=True, help="comma-separated sweep values")
    swp.add_argument("--out", help="aggregate CSV output path")
    swp.add_argument("--report", help="slope report JSON output path")

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=("lemmas", "traces"))
    ver.add_argument("--report", help="JSON report output path")
    ver.add_argument("--seed", type=int, default=20260811)
    ver.add_argument("--C", dest="C", type=int, default=4096, help="collision cost (traces)")
    ver.add_argument("--epsilon", type=float, default=0.5)
    ver.add_argument("--d", dest="d", type=int, default=8)
    ver.add_argument("--schedule", help="schedule JSON path (traces)")
    ver.add_argument("--n", type=int, default=24, help="drip packet count (traces)")
    ver.add_argument("--interval", type=int, default=1000, help="drip interval (traces)")
    ver.add_argument("--kappa", type=float, default=2.0, help="gap threshold scale (traces)")
    ver.add_argument("--trials", type=int, default=10)
    ver.add_argument("--slot-cap", type=int, default=engine.DEFAULT_SLOT_CAP)

    return parser


def _config_from_args(args: argparse.Namespace) -> ProtocolConfig:
    return ProtocolConfig(
        collision_cost=args.C,
        epsilon=args.epsilon,
        sample_scale=args.d,
        setting=_SETTINGS[args.setting],
        kind=_PROTOCOLS[args.protocol],
        constant_prob=args.constant_p,
    )


def _schedule_params(args: argparse.Namespace, kind: str) -> dict:
    if kind == "two_burst":
        if args.t2 is None or args.split is None:
            raise ConfigError("two-burst needs --t2 and --split")
        return {"t2": args.t2, "split": args.split}
    if kind == "drip":
        if args.interval is None:
            raise ConfigError("drip needs --interval")
        return {"interval": args.interval}
    if kind == "anti_gap":
        if args.gamma is None:
            raise ConfigError("anti-gap needs --gamma")
        return {"gamma": args.gamma}
    if kind == "spike_before_good_contention":
        return {"C": args.C, "epsilon": args.epsilon, "d": args.d}
    return {}


def _schedule_from_args(args: argparse.Namespace) -> InjectionSchedule:
    if args.schedule:
        with open(args.schedule, "r", encoding="utf-8") as fh:
            return InjectionSchedule.from_json(fh.read())
    if args.n is None:
        raise ConfigError("either --schedule or --n is required")
    kind = _SCHEDULE_KIND_FLAGS[args.schedule_kind]
    return adversary.make_schedule(kind, args.n, _schedule_params(args, kind))


def _echo_config(args: argparse.Namespace, schedule: InjectionSchedule) -> dict:
    """Flag set echoed into output headers; worker count is an execution
    detail, not configuration, and is deliberately left out."""
    return {
        "protocol": args.protocol,
        "setting": args.setting,
        "C": args.C,
        "epsilon": args.epsilon,
        "d": args.d,
        "constant_p": args.constant_p,
        "schedule": {"entries": [[s, c] for s, c in schedule.entries]},
        "trials": args.trials,
        "seed": args.seed,
        "slot_cap": args.slot_cap,
        "run_path": args.run_path,
    }


def _dump_json(doc: dict, path: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    schedule = _schedule_from_args(args)
    batched = args.run_path == "batched"
    stats, records = engine.run_ensemble(
        config, schedule, args.trials, args.seed, args.slot_cap, batched=batched
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            engine.write_records_csv(fh, records, _echo_config(args, schedule))
    if args.trace_out:
        seed0 = engine.derive_run_seed(args.seed, 0)
        runner = engine.simulate_batched if batched else engine.simulate
        traced = runner(config, schedule, seed0, args.slot_cap, record_traces=True)
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            engine.write_trace_jsonl(fh, traced)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def _parse_sweep_values(param: str, raw: str) -> list:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if len(parts) < 2:
        raise ConfigError("sweep needs at least 2 values to fit a slope")
    caster = float if param == "epsilon" else int
    try:
        return [caster(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value in {raw!r}: {exc}") from exc


def cmd_sweep(args: argparse.Namespace) -> int:
    values = _parse_sweep_values(args.param, args.values)
    if args.param == "n" and args.schedule:
        raise ConfigError("sweeping n requires a --schedule-kind schedule, not a file")
    batched = args.run_path == "batched"

    rows = []
    for value in values:
        if args.param == "C":
            args_value = argparse.Namespace(**{**vars(args), "C": value})
        elif args.param == "n":
            args_value = argparse.Namespace(**{**vars(args), "n": value})
        elif args.param == "epsilon":
            args_value = argparse.Namespace(**{**vars(args), "epsilon": value})
        else:
            args_value = argparse.Namespace(**{**vars(args), "d": value})
        config = _config_from_args(args_value)
        schedule = _schedule_from_args(args_value)
        stats, _ = engine.run_ensemble(
            config, schedule, args.trials, args.seed, args.slot_cap, batched=batched
        )
        rows.append((value, stats))

    def fit(metric) -> Optional[float]:
        points = [(float(v), metric(s)) for v, s in rows]
        try:
            return analytics.fit_power_law(points)
        except ConfigError:
            return None  # a zero mean leaves the log-log fit undefined

    echoed = {
        k: v for k, v in vars(args).items() if k not in ("command", "out", "report")
    }
    report = {
        "param": args.param,
        "config": echoed,
        "points": [
            {
                "value": value,
                "trials": stats.trials,
                "mean_latency": stats.mean_latency,
                "mean_collisions": stats.mean_collisions,
                "mean_collision_cost": stats.mean_collision_cost,
                "latency_quantiles": stats.latency_quantiles,
                "frac_terminated": stats.frac_terminated,
            }
            for value, stats in rows
        ],
        "latency_slope": fit(lambda s: s.mean_latency),
        "collision_cost_slope": fit(lambda s: s.mean_collision_cost),
    }

    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write("# config: " + json.dumps(echoed, sort_keys=True, default=str) + "\n")
            fh.write(
                "value,trials,mean_latency,mean_collisions,mean_collision_cost,p50,p95,p99,frac_terminated\n"
            )
            for value, stats in rows:
                q = stats.latency_quantiles
                fh.write(
                    f"{value},{stats.trials},{stats.mean_latency},{stats.mean_collisions},"
                    f"{stats.mean_collision_cost},{q['p50']},{q['p95']},{q['p99']},"
                    f"{stats.frac_terminated}\n"
                )
    _dump_json(report, args.report)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    if args.suite == "lemmas":
        checks = analytics.run_lemma_suite(seed=args.seed)
        entries = [c.to_dict() for c in checks]
    else:
        config = ProtocolConfig(
            collision_cost=args.C,
            epsilon=args.epsilon,
            sample_scale=args.d,
            setting=Setting.DYNAMIC,
            kind=ProtocolKind.AIM_HIGH,
        )
        if args.schedule:
            with open(args.schedule, "r", encoding="utf-8") as fh:
                schedule = InjectionSchedule.from_json(fh.read())
        else:
            schedule = adversary.make_schedule("drip", args.n, {"interval": args.interval})
        entries = [
            engine.run_rewind_suite(config, schedule, args.trials, args.seed, args.slot_cap)
        ]

    total_violations = sum(e["violations"] for e in entries)
    doc = {"suite": args.suite, "checks": entries, "violations": total_violations}
    if args.suite == "traces" and schedule.total_n >= 4:
        regime = adversary.full_regime_report(
            schedule, args.C, args.epsilon, args.kappa, horizon=args.slot_cap
        )
        doc["regime"] = {
            "t_star": regime.t_star if regime.t_star != math.inf else None,
            "threshold": regime.threshold if regime.threshold != math.inf else None,
            "gamma": regime.gamma,
            "gaps": [list(g) for g in regime.gaps],
        }
    _dump_json(doc, args.report)
    if total_violations:
        failing = sorted(e["lemma"] for e in entries if e["violations"])
        print(f"verification failed: {', '.join(failing)}", file=sys.stderr)
        return 2
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"simulate": cmd_simulate, "sweep": cmd_sweep, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
