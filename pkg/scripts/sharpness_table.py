"""Ratio lhs / rhs_s along the explicit family p = e^{mu_j (T-t)} phi_j, q = p / mu_j."""
import argparse

from memwave.analysis import sharpness_experiment, write_sharpness_csv
from memwave.dynamics import TimeMesh
from memwave.geometry import Grid1D


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--n-t", type=int, default=400)
    ap.add_argument("--jmax", type=int, default=8)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()
    s_list = [0.0, 1.0, 1.5, 2.0]
    res = sharpness_experiment(Grid1D(args.n), TimeMesh(1.0, args.n_t), s_list,
                               range(1, args.jmax + 1))
    print(f"{'j':>3s} {'lambda':>10s} {'mu':>11s} " + " ".join(f"{'s=' + format(s, 'g'):>11s}" for s in s_list))
    for r in res.records:
        print(f"{r.j:3d} {r.lambda_j:10.3f} {r.mu_j:11.4e} "
              + " ".join(f"{r.ratio(s):11.4e}" for s in s_list))
    print("fitted exponent of the ratio in lambda (expected 2 - s):")
    for s, v in res.slopes.items():
        print(f"  s={s:g}: {v:.4f}")
    print("lhs >= lambda^2 / 36 for every j:", res.lower_bound_ok)
    if args.csv:
        write_sharpness_csv(args.csv, res)


if __name__ == "__main__":
    main()
