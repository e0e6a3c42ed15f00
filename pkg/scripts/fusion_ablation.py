"""Compare early, balanced and late fusion (pose/audio vs fusion layer split) on synthetic data.

Layer counts follow the named strategies (2/12, 7/7, 12/2), so this is the
most expensive script here; shrink --trials/--epochs for a quick look:

    python scripts/fusion_ablation.py --trials 10 --epochs 5 --out runs/fusion.json
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from mapnet.data import build_window_set
from mapnet.metrics import mpjae, mpjpe
from mapnet.model import FUSION_STRATEGIES, ModelConfig, build_model
from mapnet.noise import NoiseParams
from mapnet.synth import synth_generate
from mapnet.train import TrainConfig, predict, train

log = logging.getLogger("fusion")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--tau", type=float, default=0.33)
    p.add_argument("--h1", type=int, default=32)
    p.add_argument("--h2", type=int, default=25)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/fusion.json"))
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    trials = [(f"s{i:03d}",) + synth_generate(args.duration, seed=[args.seed, i]) for i in range(args.trials)]
    data = build_window_set(trials, NoiseParams(base_seed=args.seed), [args.tau], split_seed=args.seed)
    test = data.indices("test")
    sparse, audio, target = data.arrays(args.tau, test)
    result = {}
    for name in FUSION_STRATEGIES:
        torch.manual_seed(args.seed)
        cfg = ModelConfig.with_strategy(name, h1=args.h1, h2=args.h2, heads=4, ff_dim=2 * args.h1, tau=args.tau,
                                        dropout=0.0, decode_widths=[256, 256])
        model = build_model("mapnet", cfg)
        start = time.perf_counter()
        train(model, data, TrainConfig(batch_size=64, lr=args.lr, epochs=args.epochs, seed=args.seed, patience=8))
        pred = predict(model, sparse, audio).astype(np.float64)
        result[name] = {"mpjpe_mm": mpjpe(pred, target), "mpjae": mpjae(pred, target.reshape(len(test), -1, 13, 3))}
        log.info("%s: %s (%.0fs)", name, result[name], time.perf_counter() - start)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(result, indent=1) + "\n")
    for name, r in result.items():
        print(f"{name:9s} MPJPE {r['mpjpe_mm']:8.2f}  MPJAE {r['mpjae']:7.3f}")


if __name__ == "__main__":
    main()
