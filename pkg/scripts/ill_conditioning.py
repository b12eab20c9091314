"""Does the network down-score all-inlier samples with two nearly coincident points?

    python3 scripts/ill_conditioning.py --weights runs/prior.bin
"""

import argparse

import numpy as np
from scipy import stats

from nefsac.evaluate import conditioning_groups
from nefsac.nnfilter import load_weights
from nefsac.synth import SceneConfig, generate_scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", required=True)
    ap.add_argument("--scenes", type=int, default=100)
    ap.add_argument("--per-scene", type=int, default=30)
    ap.add_argument("--seed", type=int, default=2000)
    args = ap.parse_args()

    net = load_weights(args.weights, expected_m=5)
    scenes = generate_scenes(SceneConfig(outlier_ratio=0.5, motion="driving"), args.scenes, seed=args.seed)
    close, spread = conditioning_groups(scenes, net, args.per_scene, np.random.default_rng(args.seed))
    t = stats.ttest_ind(close, spread, equal_var=False, alternative="less")
    print(f"close pair   n={len(close):5d}  mean {close.mean():.4f}  median {np.median(close):.4f}")
    print(f"well spread  n={len(spread):5d}  mean {spread.mean():.4f}  median {np.median(spread):.4f}")
    print(f"Welch t = {t.statistic:.2f}, one-sided p = {t.pvalue:.2e}")


if __name__ == "__main__":
    main()
