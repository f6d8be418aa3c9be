"""Plain WGAN toy: map N(0,1) latents onto N(3,1) and track the exact empirical W1."""

import argparse

from gtfd.experiments import PlainWganSetup, plain_wgan


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    res = plain_wgan(PlainWganSetup(steps=args.steps, seed=args.seed),
                     on_record=lambda rec, w1: print(f"step {rec.step}: W1 {w1:.4f}"))
    print(f"final W1 {res['w1']:.4f} after {args.steps} steps ({res['seconds']:.0f}s)")


if __name__ == "__main__":
    main()
