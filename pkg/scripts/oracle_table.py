"""Print the linear-Gaussian factors and their brute-force argmins as CSV."""

import argparse

from gtfd.oracle import linear_argmin, linear_factors


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sigma", type=float, nargs="+", default=[0.1, 0.25, 0.5, 1.0, 2.0, 3.0])
    args = p.parse_args()
    print("sigma,g1,g2,map,argmin_obs1,argmin_obs2")
    for s in args.sigma:
        g1, g2, m = linear_factors(s)
        print(f"{s:.5f},{g1:.5f},{g2:.5f},{m:.5f},{linear_argmin('obs1', s):.5f},{linear_argmin('obs2', s):.5f}")


if __name__ == "__main__":
    main()
