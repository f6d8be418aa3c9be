"""Command-line entry point: ``gtfd {train,denoise,eval,oracle,datagen,recon}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every subcommand
takes ``--seed``; when it is omitted a seed is drawn from system entropy and
printed to stderr so the run can be repeated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- file I/O

def write_raw(path: str, arr, **meta) -> None:
    """Little-endian float64 payload plus a ``<path>.json`` sidecar holding the shape."""
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(arr.astype("<f8").tobytes())
    with open(path + ".json", "w") as f:
        json.dump({"shape": list(arr.shape), "dtype": "<f8", **meta}, f, indent=2, sort_keys=True)


def read_raw(path: str) -> tuple[np.ndarray, dict]:
    with open(path + ".json") as f:
        meta = json.load(f)
    data = np.fromfile(path, dtype="<f8")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape).astype(np.float64), meta


def write_pnm(path: str, images) -> None:
    """8-bit PGM (1 channel) or PPM (3 channels); a batch is tiled left to right."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] not in (1, 3):
        raise ValueError(f"cannot write shape {np.shape(images)} as PGM/PPM")
    tiled = np.concatenate(list(x), axis=-1)  # [C, H, B*W]
    pix = np.round(np.clip(tiled, 0.0, 1.0) * 255).astype(np.uint8)
    c, h, w = pix.shape
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(pix.transpose(1, 2, 0).tobytes())


# --------------------------------------------------------------- subcommands

def _seed(args) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        return args.seed
    seed = secrets.randbits(32)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def cmd_train(args) -> int:
    from .checkpoint import load_state
    from .config import ExperimentConfig, build_nets
    from .data import DataSources
    from .train import init_state, train

    with open(args.config) as f:
        raw = json.load(f)
    explicit_seed = "seed" in raw.get("train", {})
    if args.seed is not None or not explicit_seed:
        raw.setdefault("train", {})["seed"] = _seed(args)
    if args.steps is not None:
        raw.setdefault("train", {})["total_batches"] = args.steps
    cfg = ExperimentConfig.from_dict(raw)
    os.makedirs(args.out, exist_ok=True)
    sources = DataSources(cfg.data)
    metrics = os.path.join(args.out, "metrics.csv")
    ckpt = os.path.join(args.out, "checkpoint.gtfd")
    if args.resume:
        state = load_state(args.resume)
        state.config = cfg.train
    else:
        state = init_state(cfg.train, build_nets(cfg, sources.sample_shape))
    state.meta = cfg.to_dict()
    train(cfg.train, sources, state=state, metrics_path=metrics, checkpoint_path=ckpt)
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
    print(f"wrote {metrics} and {ckpt}")
    return EXIT_OK


def _load_generator(path):
    from .checkpoint import load_state
    st = load_state(path)
    return st, st.nets.g_spec, st.nets.g


def cmd_denoise(args) -> int:
    from .evaluate import denoise

    _seed(args)  # the denoiser is deterministic; the seed is accepted for a uniform interface
    _, spec, params = _load_generator(args.checkpoint)
    x, meta = read_raw(args.input)
    single = tuple(x.shape) == tuple(spec.input_shape)
    out = denoise(spec, params, x[None] if single else x)
    write_raw(args.output, out[0] if single else out, source=args.input, checkpoint=args.checkpoint)
    if args.pgm:
        write_pnm(args.pgm, out)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import ExperimentConfig
    from .data import DataSources
    from .evaluate import evaluate
    from .rng import Rng

    seed = _seed(args)
    st, spec, params = _load_generator(args.checkpoint)
    if not st.meta:
        raise ValueError(f"{args.checkpoint}: no experiment snapshot, cannot rebuild the data source")
    cfg = ExperimentConfig.from_dict(st.meta)
    sources = DataSources(cfg.data)
    report, (y, yd, out) = evaluate(spec, params, sources, Rng(seed, stream=2), args.n, peak=args.peak,
                                    return_samples=True)
    d = report.to_dict()
    d["seed"] = seed
    text = json.dumps(d, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    if args.dump:
        os.makedirs(args.dump, exist_ok=True)
        for name, arr in (("clean", y), ("noisy", yd), ("denoised", out)):
            write_raw(os.path.join(args.dump, f"{name}.f64"), arr, seed=seed)
    print(f"mean PSNR denoised {report.mean_denoised:.3f} dB, noisy {report.mean_noisy:.3f} dB",
          file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import linear_argmin, linear_factors

    _seed(args)  # deterministic; accepted for a uniform interface
    print("sigma,g1,g2,map,argmin_obs1,argmin_obs2")
    for s in args.sigma:
        g1, g2, m = linear_factors(s)
        grid = (args.grid_step, 1.5, args.grid_step)
        a1, a2 = linear_argmin("obs1", s, grid), linear_argmin("obs2", s, grid)
        print(f"{s:.5f},{g1:.5f},{g2:.5f},{m:.5f},{a1:.5f},{a2:.5f}")
    return EXIT_OK


def cmd_datagen(args) -> int:
    from .config import ExperimentConfig
    from .data import DataSources, DataSpec
    from .rng import Rng

    seed = _seed(args)
    if args.config:
        spec = ExperimentConfig.load(args.config).data
    else:
        spec = DataSpec(task=args.task)
    sources = DataSources(spec)
    rng = Rng(seed, stream=3)
    if args.kind == "clean":
        arr = sources.clean(rng, args.n)
    elif args.kind == "noise":
        arr = sources.noise(rng, args.n)
    else:
        y, arr = sources.noisy_pair(rng, args.n)
        if args.clean_output:
            write_raw(args.clean_output, y, seed=seed, model=sources.noise_model.to_dict(), kind="clean")
    write_raw(args.output, arr, seed=seed, model=sources.noise_model.to_dict(), kind=args.kind)
    if args.pgm:
        write_pnm(args.pgm, arr)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_recon(args) -> int:
    from .recon import BlurOp, identity, lambda_line_search, tv_reconstruct

    _seed(args)  # deterministic; accepted for a uniform interface
    b, _ = read_raw(args.input)
    A = BlurOp() if args.operator == "blur" else identity
    meta = {"operator": args.operator, "iters": args.iters, "tol": args.tol}
    if args.line_search:
        ref, _ = read_raw(args.reference)
        lam, best, table = lambda_line_search(lambda l: tv_reconstruct(b, A, l, args.iters, args.tol),
                                              args.lam, args.factor, args.steps, ref, args.peak)
        meta.update(line_search=[list(t) for t in table], best_psnr=best)
        print(f"best lambda {lam:.6g} (PSNR {best:.3f} dB)")
    else:
        lam = args.lam
    x = tv_reconstruct(b, A, lam, args.iters, args.tol)
    write_raw(args.output, x, **meta, **{"lambda": lam})
    if args.pgm:
        write_pnm(args.pgm, x)
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gtfd", description="Denoiser training from noisy data with two Wasserstein critics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: drawn and printed)")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("train", cmd_train, "train a denoiser from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default="run", help="output directory for metrics.csv and checkpoint.gtfd")
    sp.add_argument("--steps", type=int, default=None, help="override train.total_batches")
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")

    sp = add("denoise", cmd_denoise, "apply a trained generator to a raw float64 file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--pgm", default=None, help="also write an 8-bit PGM/PPM preview")

    sp = add("eval", cmd_eval, "held-out PSNR of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=512)
    sp.add_argument("--peak", type=float, default=None)
    sp.add_argument("--output", default=None, help="JSON report path (default: stdout)")
    sp.add_argument("--dump", default=None, help="directory for clean/noisy/denoised raw files")

    sp = add("oracle", cmd_oracle, "linear-Gaussian denoiser factors as CSV")
    sp.add_argument("--sigma", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    sp.add_argument("--grid-step", type=float, default=1e-3)

    sp = add("datagen", cmd_datagen, "dump clean, noisy or noise batches")
    sp.add_argument("--config", default=None, help="experiment config whose data block is used")
    sp.add_argument("--task", default="sine", choices=["sine", "gaussian", "piecewise"])
    sp.add_argument("--kind", default="noisy", choices=["clean", "noisy", "noise"])
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--output", required=True)
    sp.add_argument("--clean-output", default=None, help="with --kind noisy, also write the clean batch")
    sp.add_argument("--pgm", default=None)

    sp = add("recon", cmd_recon, "TV-regularised reconstruction")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--operator", default="blur", choices=["blur", "identity"])
    sp.add_argument("--lambda", dest="lam", type=float, default=0.05)
    sp.add_argument("--line-search", action="store_true", help="search lambda*factor^j, j in [-steps, steps]")
    sp.add_argument("--reference", default=None, help="clean reference for --line-search")
    sp.add_argument("--factor", type=float, default=2.0)
    sp.add_argument("--steps", type=int, default=5)
    sp.add_argument("--peak", type=float, default=1.0)
    sp.add_argument("--iters", type=int, default=5000)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--pgm", default=None)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits on --help/--version and usage errors
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "recon" and args.line_search and not args.reference:
            raise UsageError("--line-search needs --reference")
        return args.fn(args)
    except UsageError as e:
        print(f"gtfd {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"gtfd {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
