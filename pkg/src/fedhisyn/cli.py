"""Command line entry point.

    fedhisyn simulate --config exp.toml --out results/
    fedhisyn simulate --config exp.toml --out results/ --sweep fedhisyn,fedavg --seed 0 1 2
    fedhisyn default-config > exp.toml
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, ProtocolKind, load_config, serialize_config
from .devices import participant_count
from .engine import ExperimentResult, run_experiment
from .metrics import (
    count_units,
    rounds_to_target,
    units_to_target,
    write_csv,
    write_events,
    write_json,
)

log = logging.getLogger("fedhisyn")


def summarize(result: ExperimentResult) -> dict:
    cfg = result.config
    final = result.records[-1]
    counts = count_units(result.events)
    participants = participant_count(cfg.num_devices, cfg.participation)
    r_target = rounds_to_target(result.records, cfg.target_accuracy)
    u_target = units_to_target(result.records, cfg.target_accuracy)
    return {
        "protocol": cfg.protocol.value,
        "seed": cfg.seed,
        "rounds": len(result.records),
        "final_accuracy": final.test_accuracy,
        "final_train_loss": final.train_loss,
        "target_accuracy": cfg.target_accuracy,
        "rounds_to_target": "X" if r_target is None else r_target,
        "server_units_to_target": "X" if u_target is None else u_target,
        # one FedAvg round moves 2|S| models (down + up)
        "fedavg_rounds_to_target": "X" if u_target is None else u_target / (2 * participants),
        "server_units": counts.server_units,
        "server_units_per_round": counts.server_units_per_round,
        "d2d_units": counts.d2d_units,
        "virtual_time": final.virtual_time,
        "initial_model_sha256": result.initial_model_sha256,
    }


def run_many(base: ExperimentConfig, protocols: list[str], seeds: list[int], out: Path,
             events: bool = False) -> dict:
    runs = []
    for proto in protocols:
        for seed in seeds:
            cfg = base.replace(protocol=ProtocolKind(proto), seed=seed)
            log.info("running %s seed=%d", proto, seed)
            result = run_experiment(cfg)
            stem = proto if len(seeds) == 1 else f"{proto}_seed{seed}"
            write_csv(result.records, out / f"{stem}.csv")
            if events:
                write_events(result.events, out / f"{stem}.events.jsonl")
            runs.append(summarize(result))

    comparison = {}
    for proto in protocols:
        mine = [r for r in runs if r["protocol"] == proto]
        comparison[proto] = {
            "mean_final_accuracy": sum(r["final_accuracy"] for r in mine) / len(mine),
            "reached_target": sum(r["rounds_to_target"] != "X" for r in mine),
            "runs": len(mine),
        }
    summary = {"config": base.to_dict(), "runs": runs, "comparison": comparison}
    write_json(summary, out / "summary.json")
    return summary


def _protocol_list(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    for n in names:
        try:
            ProtocolKind(n)
        except ValueError:
            raise ConfigError("protocol", f"unknown protocol {n!r}") from None
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedhisyn", description="Virtual-time federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment or a sweep")
    sim.add_argument("--config", type=Path, help="flat key = value config file")
    sim.add_argument("--out", type=Path, required=True, help="output directory")
    sim.add_argument("--protocol", help="override the config's protocol")
    sim.add_argument("--seed", type=int, nargs="+", help="one or more seeds")
    sim.add_argument("--sweep", help="comma-separated protocols sharing one config")
    sim.add_argument("--dataset-dir", help="directory holding the IDX files")
    sim.add_argument("--rounds", type=int, help="override the config's round count")
    sim.add_argument("--events", action="store_true", help="also write the JSON-lines event log")

    sub.add_parser("default-config", help="print the default config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "default-config":
        sys.stdout.write(serialize_config(ExperimentConfig()))
        return 0

    try:
        base = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {}
        if args.protocol:
            overrides["protocol"] = ProtocolKind(_protocol_list(args.protocol)[0])
        if args.dataset_dir:
            overrides["dataset_dir"] = args.dataset_dir
        if args.rounds is not None:
            overrides["rounds"] = args.rounds
        if overrides:
            base = ExperimentConfig.from_dict({**base.to_dict(), **overrides,
                                               "protocol": overrides.get("protocol", base.protocol).value})
        protocols = _protocol_list(args.sweep) if args.sweep else [base.protocol.value]
        seeds = args.seed or [base.seed]
        summary = run_many(base, protocols, seeds, args.out, events=args.events)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    for proto, row in summary["comparison"].items():
        print(f"{proto:10s} final_acc={row['mean_final_accuracy']:.4f} "
              f"reached_target={row['reached_target']}/{row['runs']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
