"""How much of a random eta escapes K moments against (s+1)^{T+k}, for two cell layouts."""
import argparse

import numpy as np

from memwave.analysis import muntz_moments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--cells", type=int, default=200)
    ap.add_argument("--K", type=int, nargs="*", default=[5, 10, 25, 50, 100, 200])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    eta = np.random.default_rng(args.seed).standard_normal(args.cells)
    print(f"{'K':>4s} {'layout':>10s} {'rank':>5s} {'sigma_min':>11s} {'missed':>11s}")
    for K in args.K:
        for layout in ("chebyshev", "uniform"):
            r = muntz_moments(eta, args.T, K, cells=layout)
            print(f"{K:4d} {layout:>10s} {r.rank:5d} {r.sigma_min:11.3e} {r.ls_norm:11.3e}")


if __name__ == "__main__":
    main()
