"""Final FedHiSyn accuracy as the number of speed classes K changes.

    python3 scripts/sweep_clusters.py --config configs/clusters.toml --out results/clusters
"""
import argparse
import json
from pathlib import Path

from fedhisyn.config import load_config
from fedhisyn.experiments import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--K", type=int, nargs="+", default=[1, 10, 50])
    ap.add_argument("--protocols", nargs="+", default=["fedhisyn"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    points = sweep(load_config(args.config), "K", args.K, args.protocols, args.seeds)
    rows = [{"protocol": p.protocol, "K": p.value, "mean_acc": p.mean, "per_seed": p.accuracies} for p in points]
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "clusters.json").write_text(json.dumps(rows, indent=2) + "\n")
    for r in rows:
        print(f"{r['protocol']:9s} K={r['K']:3d} acc={r['mean_acc']:.4f}")


if __name__ == "__main__":
    main()
