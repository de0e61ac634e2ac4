"""Write a synthetic multi-body keypoint stream for ``pdik retarget run``.

The demonstrator's wrists trace slow ellipses in front of the chest.  The
stream contains the disturbances the perception filter is built for:
low-confidence samples, dropped (NaN) samples, isolated jumps, and a
bystander standing further from the sensor.

    python scripts/make_keypoints.py --out keypoints.csv --seconds 2
"""

from __future__ import annotations

import argparse

import numpy as np

from pdik.perception import Keypoint, write_keypoint_csv


def demonstrator(t: float) -> dict[str, np.ndarray]:
    """Torso and wrist positions in sensor coordinates (x forward, z up)."""
    torso = np.array([1.8, 0.0, 1.1])
    w = 2.0 * np.pi * 0.5
    return {
        "torso": torso,
        "wrist_l": torso + np.array([0.50 + 0.06 * np.sin(w * t), 0.21 + 0.05 * np.cos(w * t), 0.10 + 0.04 * np.sin(2 * w * t)]),
        "wrist_r": torso + np.array([0.50 + 0.06 * np.cos(w * t), -0.21 + 0.05 * np.sin(w * t), 0.10 - 0.04 * np.sin(w * t)]),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--seconds", type=float, default=2.0)
    parser.add_argument("--rate", type=float, default=100.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(int(args.seconds * args.rate)):
        t = i / args.rate
        for pid, p in demonstrator(t).items():
            p = p + rng.normal(0.0, 0.004, 3)
            conf = float(rng.uniform(0.7, 1.0))
            u = rng.random()
            if u < 0.03:
                conf = 0.2
            elif u < 0.05:
                p = np.full(3, np.nan)
            elif u < 0.06 and pid != "torso":
                p = p + rng.normal(0.0, 0.5, 3)
            rows.append(Keypoint(0, pid, p, conf, t))
        bystander = np.array([3.5, 1.2, 1.0])
        rows.append(Keypoint(1, "torso", bystander + rng.normal(0.0, 0.004, 3), 0.9, t))
    write_keypoint_csv(args.out, rows)


if __name__ == "__main__":
    main()
