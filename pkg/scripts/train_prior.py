"""Train the driving-motion filter network used by the experiment scripts.

    python3 scripts/train_prior.py --out runs/prior.bin
"""

import argparse
from dataclasses import replace
from pathlib import Path

from nefsac.cli import write_csv
from nefsac.evaluate import PriorSetup, train_prior
from nefsac.nnfilter import save_weights


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/prior.bin")
    ap.add_argument("--scenes", type=int, default=500)
    ap.add_argument("--samples-per-pair", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=1000)
    args = ap.parse_args()

    setup = PriorSetup(scenes=args.scenes, seed=args.seed, samples_per_pair=args.samples_per_pair)
    setup.train = replace(setup.train, epochs=args.epochs, seed=args.seed)
    net, history, seconds = train_prior(setup)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(net, out)
    rows = [dict(epoch=h["epoch"], train_loss=h["train_loss"], val_loss=h["val_loss"]) for h in history]
    write_csv(out.with_suffix(".log.csv"), "nefsac-train-log v1", ["epoch", "train_loss", "val_loss"], rows)
    print(f"trained {len(history)} epochs in {seconds / 60:.1f} min -> {out}")


if __name__ == "__main__":
    main()
