"""Train the scalar denoiser G(y) = a*y against one critic term and compare a with the closed form."""

import argparse
import json

from gtfd.experiments import LinearCaseSetup, linear_case


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional JSON results file")
    args = p.parse_args()
    results = {}
    for term in ("yd", "eta"):
        setup = LinearCaseSetup(term=term, sigma=args.sigma, steps=args.steps, seed=args.seed)
        res = linear_case(setup, on_record=lambda rec, a: print(f"  {term} step {rec.step}: a = {a:.4f}"))
        print(f"{term}: a = {res['factor']:.4f}, closed form {res['target']:.4f}, {res['seconds']:.0f}s")
        results[term] = res
    print(f"ordering g2 <= map <= g1: {results['eta']['factor']:.4f} <= {results['yd']['map']:.4f} "
          f"<= {results['yd']['factor']:.4f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
