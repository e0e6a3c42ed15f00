"""Train MAPnet, PoT and MAPnet without rebalancing on synthetic trials and compare with SMA.

Writes a JSON summary of test MPJPE per (method, tau). Used by the slow
acceptance checks; run directly for a standalone report:

    python scripts/trend_experiment.py --out runs/trend.json
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from mapnet.baselines import sma_predict
from mapnet.data import build_window_set, tau_stride
from mapnet.metrics import mpjpe
from mapnet.model import ModelConfig, build_model
from mapnet.noise import NoiseParams
from mapnet.synth import synth_generate
from mapnet.train import TrainConfig, predict, train

log = logging.getLogger("trend")

RUNS = [("mapnet", 1.0), ("pot", 1.0), ("mapnet", 0.33), ("pot", 0.33), ("mapnet_norebal", 0.33)]


def model_config(tau: float, args) -> ModelConfig:
    return ModelConfig(
        h1=args.h1, h2=args.h2, pose_audio_layers=args.layers, fusion_layers=1, heads=4, ff_dim=2 * args.h1,
        decode_widths=[args.decode, args.decode], fusion_strategy="custom", tau=tau, dropout=0.0,
    )


def run(args) -> dict:
    t0 = time.perf_counter()
    trials = [(f"s{i:03d}",) + synth_generate(args.duration, seed=[args.seed, i]) for i in range(args.trials)]
    data = build_window_set(trials, NoiseParams(base_seed=args.seed), [1.0, 0.33], split_seed=args.seed, jobs=args.jobs)
    log.info("built %d windows in %.0fs", len(data), time.perf_counter() - t0)
    test = data.indices("test")
    result = {"config": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}, "test_windows": int(len(test)), "mpjpe": {}, "epochs": {}}
    for tau in (1.0, 0.33):
        sparse, _, target = data.arrays(tau, test)
        result["mpjpe"][f"sma@{tau}"] = mpjpe(sma_predict(sparse.astype(np.float64), tau_stride(tau)), target)
    for kind, tau in RUNS:
        torch.manual_seed(args.seed)
        model = build_model(kind, model_config(tau, args))
        tcfg = TrainConfig(batch_size=args.batch, lr=args.lr, epochs=args.epochs, seed=args.seed,
                           patience=args.patience, deterministic=True)
        start = time.perf_counter()
        ckpt = train(model, data, tcfg, tau)
        sparse, audio, target = data.arrays(tau, test)
        err = mpjpe(predict(model, sparse, audio if model.uses_audio else None).astype(np.float64), target)
        result["mpjpe"][f"{kind}@{tau}"] = err
        result["epochs"][f"{kind}@{tau}"] = ckpt.meta["epochs_run"]
        log.info("%s tau=%.2f test MPJPE %.2f mm (%d epochs, %.0fs)", kind, tau, err, ckpt.meta["epochs_run"],
                 time.perf_counter() - start)
    result["wall_s"] = time.perf_counter() - t0
    return result


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h1", type=int, default=32)
    p.add_argument("--h2", type=int, default=25)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--decode", type=int, default=256)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=8)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("runs/trend.json"))
    return p.parse_args(argv)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args = parse_args(argv)
    result = run(args)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    for key, v in result["mpjpe"].items():
        print(f"{key:22s} {v:8.2f}")


if __name__ == "__main__":
    main()
