"""Command-line entry point: ``ohsci <command> [flags]``.

Exit codes: 0 success, 1 argument error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import core, encoder, masking, metrics, sde
from .core import FormatError, NoiseModel, VideoCube

log = logging.getLogger("onehot_sci")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_config(path) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: malformed config line {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _add_scheduler_flags(p):
    p.add_argument("--schedule", choices=sde.SCHEDULES, default="constant")
    p.add_argument("--theta-total", type=float, default=7.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.02)
    p.add_argument("--steps", type=int, default=100)


def _scheduler(args) -> sde.Scheduler:
    return sde.Scheduler(args.schedule, args.theta_total, args.lam, args.steps)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ohsci", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value defaults file (flags take precedence)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mask-gen", help="generate a modulation mask")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--one-hot", action="store_true")
    kind.add_argument("--random", action="store_true", help="i.i.d. Bernoulli mask")
    p.add_argument("-p", "--prob", type=float, default=0.5)
    p.add_argument("-H", type=int, required=True)
    p.add_argument("-W", type=int, required=True)
    p.add_argument("-B", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("encode", help="simulate single- or dual-path capture")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--video", help="OHSC1 ground-truth cube")
    src.add_argument("--frames", help="directory of PGM/PNG frames")
    src.add_argument("--synthetic", metavar="H,W,B", help="generate a synthetic video")
    p.add_argument("--truth-out", help="write the ground-truth cube here")
    p.add_argument("--mask", required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--noise-std-c", type=float, default=None)
    p.add_argument("--dual", action="store_true")
    p.add_argument("--quantize-bits", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="primary measurement path")
    p.add_argument("--out-c", help="compensatory measurement path (default <out>.c)")

    p = sub.add_parser("reconstruct", help="reconstruct a video from measurements")
    p.add_argument("--method", choices=("diffusion", "regdif", "regdif-dual"), default="regdif")
    p.add_argument("--mask", required=True)
    p.add_argument("--measurement", required=True)
    p.add_argument("--compensatory")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle-truth", help="ground truth for the analytic noise oracle")
    p.add_argument("--deterministic", action="store_true", help="omit reverse-time noise")
    _add_scheduler_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--frames-dir")
    p.add_argument("--trace-dir")

    p = sub.add_parser("train", help="train the RegDif components on toy data")
    p.add_argument("--data", default="synthetic", help="synthetic | dir:<path>")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--size", default="16,16,4", metavar="H,W,B")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--finetune-epochs", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--no-align-loss", action="store_true")
    p.add_argument("--no-reg-loss", action="store_true")
    p.add_argument("--no-dif-loss", action="store_true")
    p.add_argument("--squared", action="store_true", help="mean-squared loss variant")
    p.add_argument("--dual", action="store_true")
    _add_scheduler_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--log-csv")

    p = sub.add_parser("eval", help="PSNR/SSIM of a reconstruction")
    p.add_argument("--reference", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("-o", "--out", help="CSV path (default stdout)")

    p = sub.add_parser("diagnose", help="measurement histogram and distance curve")
    dsub = p.add_subparsers(dest="diagnostic", required=True, parser_class=_Parser)
    h = dsub.add_parser("hist")
    h.add_argument("--measurement", required=True)
    h.add_argument("--bins", type=int, default=64)
    h.add_argument("-o", "--out")
    c = dsub.add_parser("curve")
    _add_scheduler_flags(c)
    c.add_argument("--points", type=int, default=None, help="default steps + 1")
    c.add_argument("-o", "--out")
    return parser


def _parse_dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad dimensions {text!r}; expected H,W,B") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"bad dimensions {text!r}; expected H,W,B")
    return dims


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_mask_gen(args):
    if args.one_hot:
        mask = masking.gen_one_hot_mask(args.H, args.W, args.B, args.seed)
    else:
        mask = masking.gen_random_binary_mask(args.H, args.W, args.B, args.prob, args.seed)
    masking.save_mask(mask, args.out, seed=args.seed)
    log.info("wrote %s mask %s to %s", mask.kind.value, mask.shape, args.out)


def cmd_encode(args):
    from .data import synthetic_video

    if args.video:
        x = core.load_cube(args.video)
    elif args.frames:
        x = core.load_frames(args.frames)
    else:
        x = synthetic_video(*_parse_dims(args.synthetic), seed=args.seed)
    if args.truth_out:
        core.save_cube(x, args.truth_out)
        # Encode what was stored so the file is an exact ground truth.
        x = core.load_cube(args.truth_out)
    mask = masking.load_mask(args.mask)
    noise = NoiseModel(args.noise_std)
    if args.dual:
        noise_c = NoiseModel(args.noise_std if args.noise_std_c is None else args.noise_std_c)
        meas = encoder.encode_dual(x, mask, noise, noise_c, args.seed, args.quantize_bits)
        out_c = args.out_c or args.out + ".c"
        core.save_measurement(meas.primary, args.out)
        core.save_measurement(meas.compensatory, out_c)
        log.info("wrote %s and %s", args.out, out_c)
    else:
        y = encoder.encode_single(x, mask, noise, args.seed, args.quantize_bits)
        core.save_measurement(y, args.out)
        log.info("wrote %s", args.out)
    Path(args.out + ".meta").write_text(
        f"mask={args.mask}\nnoise_std={args.noise_std}\ndual={int(args.dual)}\nseed={args.seed}\n"
    )


def cmd_reconstruct(args):
    from . import predictors, recon

    s = _scheduler(args)
    mask = masking.load_mask(args.mask)
    y = core.load_measurement(args.measurement)
    if args.method == "diffusion":
        if args.oracle_truth:
            truth = core.load_cube(args.oracle_truth)
            x_dst = VideoCube(truth.data * mask.as_float())
            predictor = predictors.OracleNoisePredictor(truth, x_dst, s)
        elif args.checkpoint:
            predictor = predictors.NetworkNoisePredictor(predictors.load_checkpoint(args.checkpoint).noise)
        else:
            raise UsageError("diffusion needs --checkpoint or --oracle-truth")
        out = recon.reconstruct_diffusion(
            y, mask, predictor, s, seed=args.seed, stochastic=not args.deterministic
        )
        trace = None
    else:
        if not args.checkpoint:
            raise UsageError(f"{args.method} needs --checkpoint")
        p = predictors.load_checkpoint(args.checkpoint)
        if args.method == "regdif-dual":
            if not args.compensatory:
                raise UsageError("regdif-dual needs --compensatory")
            y_c = core.load_measurement(args.compensatory)
            trace = recon.reconstruct_regdif_dual(
                y, y_c, mask, p, s, seed=args.seed, stochastic=not args.deterministic
            )
        else:
            trace = recon.reconstruct_regdif(
                y, mask, p, s, seed=args.seed, stochastic=not args.deterministic
            )
        out = trace.final
    core.save_cube(out, args.out)
    if args.frames_dir:
        core.export_frames(out, args.frames_dir)
    if args.trace_dir and trace is not None:
        d = Path(args.trace_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("x1", "coarse", "updated", "eps", "final"):
            core.save_cube(getattr(trace, name), d / f"{name}.ohsc")
        (d / "trace.txt").write_text(f"t_hat={trace.t_hat!r}\n")
    log.info("wrote %s", args.out)


def cmd_train(args):
    from . import predictors, training
    from .data import synthetic_dataset

    s = _scheduler(args)
    if args.data == "synthetic":
        H, W, B = _parse_dims(args.size)
        videos = synthetic_dataset(args.samples, H, W, B, seed=args.seed)
    elif args.data.startswith("dir:"):
        root = Path(args.data[4:])
        _, _, B = _parse_dims(args.size)
        subdirs = sorted(d for d in root.iterdir() if d.is_dir()) or [root]
        videos = [core.load_frames(d, B) for d in subdirs]
    else:
        raise UsageError(f"unknown --data {args.data!r}")
    cfg = training.TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        finetune_epochs=args.finetune_epochs,
        reg=not args.no_reg_loss,
        align=not args.no_align_loss,
        dif=not args.no_dif_loss,
        seed=args.seed,
        squared=args.squared,
        dual=args.dual,
    )
    p = predictors.PredictorSet(
        predictors.ToyBlockConfig(hidden_channels=args.hidden), dual=args.dual, seed=args.seed
    )
    result = training.train(cfg, videos, p, s)
    predictors.save_checkpoint(result.predictors, args.checkpoint_out)
    rows = [training.EpochLog.CSV_HEADER] + [e.csv_row() for e in result.log]
    if args.log_csv:
        Path(args.log_csv).write_text("\n".join(rows) + "\n")
    log.info("wrote %s", args.checkpoint_out)


def eval_csv(ref: VideoCube, test: VideoCube, peak: float = 1.0) -> str:
    p = metrics.psnr(ref, test, peak)
    q = metrics.ssim(ref, test)
    lines = ["frame,psnr,ssim"]
    lines += [f"{m},{a:.9g},{b:.9g}" for m, (a, b) in enumerate(zip(p.per_frame, q.per_frame))]
    lines.append(f"mean,{p.mean:.9g},{q.mean:.9g}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    ref = core.load_cube(args.reference)
    test = core.load_cube(args.test)
    _emit(eval_csv(ref, test, args.peak), args.out)


def curve_csv(s: sde.Scheduler, points: int) -> str:
    # The normalised curve does not depend on the video; any x_src != x_dst works.
    x_src = VideoCube(np.ones((1, 1, 2)))
    x_dst = VideoCube(np.array([[[1.0, 0.0]]]))
    curve = sde.distance_curve(x_src, x_dst, s, points)
    return "t,distance\n" + "".join(f"{t:.9g},{d:.9g}\n" for t, d in curve.points)


def cmd_diagnose(args):
    if args.diagnostic == "hist":
        y = core.load_measurement(args.measurement)
        rows = encoder.pixel_histogram(y, args.bins)
        _emit("bin_center,count\n" + "".join(f"{c:.9g},{n}\n" for c, n in rows), args.out)
    else:
        s = _scheduler(args)
        _emit(curve_csv(s, args.points or s.steps + 1), args.out)


COMMANDS = {
    "mask-gen": cmd_mask_gen,
    "encode": cmd_encode,
    "reconstruct": cmd_reconstruct,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
}


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    for sp in _all_parsers(parser):
        for a in sp._actions:
            if a.dest in values:
                raw = values[a.dest]
                if a.nargs == 0:
                    a.default = raw.lower() in ("1", "true", "yes", "on")
                else:
                    a.default = a.type(raw) if a.type else raw
                a.required = False


def _all_parsers(parser):
    yield parser
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for sp in a.choices.values():
                yield from _all_parsers(sp)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ARGS
    except OSError as exc:
        print(f"ohsci: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )
    threads = os.environ.get("OHSCI_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ohsci: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, FormatError) as exc:
        print(f"ohsci: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"ohsci: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ohsci: {exc}", file=sys.stderr)
        return EXIT_ARGS
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
