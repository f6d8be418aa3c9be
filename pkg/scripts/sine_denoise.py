"""Scaled-down 1D sine denoising run with metrics CSV and checkpoint output."""

import argparse
import json
import os

from gtfd.experiments import sine_config, sine_denoising, w1_reduction


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/sine")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    cfg = sine_config(args.steps, args.base_channels, args.seed)
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    res = sine_denoising(cfg, metrics_path=os.path.join(args.out, "metrics.csv"),
                         checkpoint_path=os.path.join(args.out, "checkpoint.gtfd"),
                         on_record=lambda r: print(f"step {r.step}: psnr {r.psnr:.2f} w1 {r.w1_yd:.4f} {r.w1_eta:.4f}",
                                                   flush=True))
    rep = res["report"]
    print(f"test PSNR {rep.mean_denoised:.2f} dB (noisy {rep.mean_noisy:.2f} dB), {res['seconds'] / 60:.0f} min")
    if args.steps >= 500:
        for key in ("w1_yd", "w1_eta"):
            a, b = w1_reduction(res["records"], key)
            print(f"{key}: step 500 {a:.4f} -> final {b:.4f}")


if __name__ == "__main__":
    main()
