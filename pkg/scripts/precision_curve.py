"""Pool precision against keep rate, on driving and general-motion scenes.

Reads a network written by train_prior.py and writes one CSV row per
(motion, keep rate) with the pooled precision and its gain over the
unfiltered pool.

    python3 scripts/precision_curve.py --weights runs/prior.bin --out runs/precision.csv
"""

import argparse

from nefsac.cli import write_csv
from nefsac.evaluate import KEEP_RATES, filter_precision, pooled_precision
from nefsac.nnfilter import load_weights
from nefsac.synth import SceneConfig, generate_scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", required=True)
    ap.add_argument("--out", default="runs/precision.csv")
    ap.add_argument("--scenes", type=int, default=100)
    ap.add_argument("--pool", type=int, default=2**16)
    ap.add_argument("--outliers", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=2000)
    args = ap.parse_args()

    net = load_weights(args.weights, expected_m=5)
    rows = []
    for motion in ("driving", "general"):
        scenes = generate_scenes(SceneConfig(outlier_ratio=args.outliers, motion=motion), args.scenes, seed=args.seed)
        per_scene = filter_precision(scenes, net, args.pool, KEEP_RATES, seed=args.seed)
        base = pooled_precision(per_scene, 1)
        for r in KEEP_RATES:
            p = pooled_precision(per_scene, r)
            rows.append(dict(motion=motion, keep_rate=r, precision=p, gain=p / base if base else float("nan")))
            print(f"{motion:8s} 1/{r:<4d} precision {p:.4f}  gain {rows[-1]['gain']:.1f}x")
    write_csv(args.out, "nefsac-precision-curve v1", ["motion", "keep_rate", "precision", "gain"], rows)


if __name__ == "__main__":
    main()
