"""Monte Carlo check of the escape-probability law 1 - (1 - p)^K.

Each trial draws K independent candidates that escape with probability p;
the table compares the empirical escape frequency with the closed form and
the 3-sigma binomial band.

    python scripts/escape_mc.py --p 0.05,0.1,0.3 --k-list 1,4,16,64 --trials 100000
"""

from __future__ import annotations

import argparse
import math

from pdik.bench import EscapeMcConfig, escape_mc


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--p", default="0.05,0.1,0.3")
    parser.add_argument("--k-list", default="1,4,16,64")
    parser.add_argument("--trials", type=int, default=100_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    K_values = tuple(int(k) for k in args.k_list.split(","))
    print("p,K,empirical,predicted,abs_diff,three_sigma")
    for i, p in enumerate(float(v) for v in args.p.split(",")):
        for K, emp, pred in escape_mc(EscapeMcConfig(p, K_values, args.trials, args.seed + i)):
            band = 3.0 * math.sqrt(pred * (1.0 - pred) / args.trials)
            print(f"{p},{K},{emp:.5f},{pred:.5f},{abs(emp - pred):.5f},{band:.5f}")


if __name__ == "__main__":
    main()
