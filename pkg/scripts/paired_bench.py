"""Paired RANSAC runs with and without the filter, in three settings.

* ``trained``: the driving network on driving scenes
* ``constant``: a network whose output ignores its input
* ``oracle``: ground-truth inlier flags as PROSAC quality

Writes per-scene rows and prints a median summary per setting.

    python3 scripts/paired_bench.py --weights runs/prior.bin --out runs/bench.csv
"""

import argparse

import numpy as np

from nefsac.cli import write_csv
from nefsac.evaluate import run_pairs
from nefsac.nnfilter import load_weights
from nefsac.ransac import UsacConfig
from nefsac.synth import SceneConfig, generate_scenes


def constant(net):
    params = [np.zeros_like(p) for p in net.parameters()]
    params[-1] = net.parameters()[-1]
    return net.with_parameters(params)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", required=True)
    ap.add_argument("--out", default="runs/bench.csv")
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=3000)
    ap.add_argument("--profile", choices=("large", "small"), default="large")
    ap.add_argument("--settings", default="trained,constant,oracle")
    args = ap.parse_args()

    net = load_weights(args.weights, expected_m=5)
    scenes = generate_scenes(SceneConfig(outlier_ratio=0.5, motion="driving"), args.scenes, seed=args.seed)
    cfg = UsacConfig().with_profile(args.profile)
    rows = []
    for setting in args.settings.split(","):
        runs = run_pairs(scenes, cfg, constant(net) if setting == "constant" else net, oracle=setting == "oracle")
        for off, on in zip(runs["off"], runs["on"]):
            rows.append(dict(setting=setting, scene=off.scene, off_err=off.max_err, on_err=on.max_err,
                             off_models=off.models_tested, on_models=on.models_tested,
                             off_ms=off.wall_ms, on_ms=on.wall_ms))
        med = {k: np.median([r[k] for r in rows if r["setting"] == setting])
               for k in ("off_err", "on_err", "off_models", "on_models", "off_ms", "on_ms")}
        print(f"{setting:9s} error {med['off_err']:.3f} -> {med['on_err']:.3f} deg   "
              f"models {med['off_models']:.0f} -> {med['on_models']:.0f}   "
              f"time {med['off_ms']:.0f} -> {med['on_ms']:.0f} ms")
    cols = ["setting", "scene", "off_err", "on_err", "off_models", "on_models", "off_ms", "on_ms"]
    write_csv(args.out, "nefsac-paired-bench v1", cols, rows)


if __name__ == "__main__":
    main()
