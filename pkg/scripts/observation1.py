"""Mean device-model accuracy under the five server-free communication modes.

    python3 scripts/observation1.py --config configs/observation1.toml --out results/obs1
"""
import argparse
import json
from pathlib import Path

from fedhisyn.config import load_config
from fedhisyn.observations import MODES, communication_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--modes", nargs="+", default=list(MODES), choices=MODES)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    base = load_config(args.config)
    rows = []
    for seed in args.seeds:
        for mode in args.modes:
            res = communication_experiment(base.replace(seed=seed), mode)
            rows.append({"seed": seed, "mode": mode, "per_round": res.per_round, "final": res.final_mean})
            print(f"seed={seed} {mode:11s} final={res.final_mean:.4f}")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "observation1.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
