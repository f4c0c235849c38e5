"""Run the default trend ladder and print seed-averaged trends.

    python3 scripts/run_ladder.py [--config configs/ladder_default.cfg] [--out runs/ladder]
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from arlab.ladder import load_ladder_config, run_ladder

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "ladder_default.cfg"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "ladder"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_ladder_config(args.config)
    t0 = time.perf_counter()
    rows = run_ladder(cfg, args.out)
    print(f"ladder finished in {time.perf_counter() - t0:.1f} s")
    cols = ["train_loss", "test_loss", "loss_gap", "test_err", "margin_iqr", "mean_sv_std",
            "loss_variation_mean", "adv_acc", "u_min", "bound"]
    print("eps    " + " ".join(f"{c[:12]:>12}" for c in cols))
    for eps in cfg.ar_strengths:
        cell = [r for r in rows if r["eps"] == eps and r["status"] == "ok"]
        means = [np.mean([r[c] for r in cell]) for c in cols]
        print(f"{eps:<6g} " + " ".join(f"{m:12.4f}" for m in means))
        stds = np.mean([r["sv_stds"] for r in cell], axis=0)
        print("       per-layer sv std: " + " ".join(f"{s:.4f}" for s in stds))


if __name__ == "__main__":
    main()
