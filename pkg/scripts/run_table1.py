"""One Table-1 style row: server units to target and final accuracy per protocol.

    python3 scripts/run_table1.py --config configs/table1_mnist.toml --out results/table1
"""
import argparse
import json
from dataclasses import asdict
from pathlib import Path

from fedhisyn.config import load_config
from fedhisyn.devices import participant_count
from fedhisyn.experiments import table_row

ALL = ["fedhisyn", "fedavg", "fedprox", "fedat", "scaffold", "tafedavg", "tfedavg"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--protocols", nargs="+", default=ALL)
    args = ap.parse_args()

    base = load_config(args.config)
    rows = table_row(base, args.protocols, participant_count(base.num_devices, base.participation))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "table1.json").write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    for r in rows:
        cost = "X" if r.fedavg_rounds is None else f"{r.fedavg_rounds:g}"
        print(f"{r.protocol:9s} {cost}({100 * r.final_accuracy:.2f}%)")


if __name__ == "__main__":
    main()
