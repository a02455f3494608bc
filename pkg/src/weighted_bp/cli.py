"""Command-line entry point: ``weighted-bp <subcommand> ...``.

Exit codes: 0 success, 2 usage/config error, 3 runtime/data error.
Every run that writes an artifact also writes ``<artifact>.manifest``;
``weighted-bp rerun <manifest>`` replays the recorded arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import DEFAULT_SNR_GRID
from .code_graph import CodeError, compile_trellis, construct_bch, derive_generator, read_alist
from .code_graph import write_alist
from .evaluator import (
    BerReport,
    BPDecoder,
    MLDecoder,
    NeuralDecoder,
    compare_decoders,
    covariance_audit,
    evaluate_ber,
)
from .neural_bp import CheckpointError, checkpoint_load, checkpoint_peek, dense_layer, weight_stats
from .trainer import DivergenceError, TrainConfig, default_steps, train

EXIT_USAGE = 2
EXIT_RUNTIME = 3
WORKERS_ENV = "WBP_WORKERS"

log = logging.getLogger("weighted_bp")


class UsageError(Exception):
    pass


def parse_snr(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 10) for i in range(count))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR grid {text!r}") from None


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(target: Path, subcommand: str, argv: list[str], config: dict, code_path=None,
                   artifacts=()) -> Path:
    path = Path(str(target) + ".manifest")
    lines = [
        f"subcommand={subcommand}",
        f"tool_version={__version__}",
        f"argv={json.dumps(argv)}",
    ]
    if code_path is not None:
        lines.append(f"code_file={code_path}")
        lines.append(f"code_file_sha256={_file_sha(code_path)}")
    for key in sorted(config):
        lines.append(f"config.{key}={json.dumps(config[key])}")
    for a in artifacts:
        lines.append(f"artifact={a}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out.setdefault(key, value)
    return out


def _load_code(path):
    if not Path(path).is_file():
        raise UsageError(f"code file not found: {path}")
    return derive_generator(read_alist(path))


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_codegen(args, argv):
    if args.family != "bch":
        raise UsageError(f"unknown code family {args.family!r}")
    try:
        code = construct_bch(args.m, args.t)
    except CodeError as exc:
        raise UsageError(str(exc)) from None
    write_alist(code, args.out)
    write_manifest(Path(args.out), "codegen", argv, {"m": args.m, "t": args.t},
                   artifacts=[args.out])
    print(f"BCH({code.n},{code.k}) m={code.m} E={code.num_edges} -> {args.out}")


def cmd_train(args, argv):
    code = _load_code(args.code)
    layout = compile_trellis(code, args.iterations)
    steps = args.steps if args.steps is not None else default_steps(code)
    config = TrainConfig(
        learning_rate=args.lr,
        batch_per_snr=args.per_snr,
        snr_grid_db=args.snr,
        steps=steps,
        rmsprop_decay=args.rmsprop_decay,
        rmsprop_eps=args.rmsprop_eps,
        loss_kind="multiloss" if args.multiloss else "single",
        clip_A=args.clip_a,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        init=args.init,
        snr_convention=args.snr_convention,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.wbpw"
    log_path = out / "train_log.tsv"
    result = train(code, layout, config, ckpt, log_path)
    cfg = config.as_dict() | {"iterations": args.iterations}
    write_manifest(ckpt, "train", argv, cfg, args.code, [str(ckpt), str(log_path)])
    print(f"trained {steps} steps; running loss {result.running_loss():.6f}; "
          f"val_ber {result.log[0].val_ber:.4e} -> {result.log[-1].val_ber:.4e}; "
          f"checkpoint {ckpt}")


def _load_checkpoint(path, code):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    data = Path(path).read_bytes()
    head = checkpoint_peek(data)
    layout = compile_trellis(code, head["iterations"])
    return layout, checkpoint_load(data, layout)


def cmd_eval(args, argv):
    code = _load_code(args.code)
    if args.decoder == "neural":
        if not args.checkpoint:
            raise UsageError("--decoder neural requires --checkpoint")
        layout, weights = _load_checkpoint(args.checkpoint, code)
        dtype = np.float32 if args.float32 else np.float64
        decoder = NeuralDecoder(layout, weights, args.clip_a, dtype)
    elif args.decoder == "bp":
        decoder = BPDecoder(code, compile_trellis(code, args.iterations), args.iterations,
                            args.clip_a)
    else:
        decoder = MLDecoder(code)
    min_err = None if args.fixed_frames else args.min_frame_errors
    report = evaluate_ber(
        code, decoder, args.snr, min_err, args.max_frames, args.seed, args.chunk_frames,
        args.workers, args.snr_convention,
    )
    text = report.to_tsv()
    Path(args.out).write_text(text, encoding="ascii")
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    write_manifest(Path(args.out), "eval", argv, cfg, args.code, [args.out])
    sys.stdout.write(text)


def cmd_compare(args, argv):
    if len(args.reports) < 2:
        raise UsageError("compare needs at least two reports")
    reports = []
    for p in args.reports:
        if not Path(p).is_file():
            raise UsageError(f"report not found: {p}")
        reports.append(BerReport.from_tsv(Path(p).read_text(encoding="ascii")))
    try:
        cmp = compare_decoders(reports, args.targets)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        Path(args.out).write_text(cmp.table, encoding="ascii")
        write_manifest(Path(args.out), "compare", argv, {"targets": list(args.targets)},
                       artifacts=[args.out])
    sys.stdout.write(cmp.table)


def cmd_weights(args, argv):
    code = _load_code(args.code)
    layout, weights = _load_checkpoint(args.checkpoint, code)
    if args.dense:
        layer = None if args.layer == "last" else int(args.layer)
        text = dense_layer(weights, layout, layer)
    else:
        text = weight_stats(weights, args.bins)
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
        write_manifest(Path(args.out), "weights", argv,
                       {"bins": args.bins, "layer": args.layer, "dense": args.dense},
                       args.code, [args.out])
    sys.stdout.write(text)


def cmd_audit(args, argv):
    code = _load_code(args.code)
    if args.decoder == "neural":
        if not args.checkpoint:
            raise UsageError("--decoder neural requires --checkpoint")
        layout, weights = _load_checkpoint(args.checkpoint, code)
        decoder = NeuralDecoder(layout, weights, args.clip_a)
    else:
        decoder = BPDecoder(code, compile_trellis(code, args.iterations), args.iterations,
                            args.clip_a)
    report = covariance_audit(code, decoder, args.codewords, args.seed, args.snr_db)
    print(report.summary())
    if not report.passed:
        return EXIT_RUNTIME
    return 0


def cmd_rerun(args, argv):
    manifest = read_manifest(args.manifest)
    if "argv" not in manifest:
        raise UsageError("manifest has no argv entry")
    replay = json.loads(manifest["argv"])
    if args.out is not None:
        for flag in ("--out", "--out-dir"):
            if flag in replay:
                replay[replay.index(flag) + 1] = args.out
                break
        else:
            raise UsageError("recorded command has no output destination")
    return main(replay)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weighted-bp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common_snr(sp, default=DEFAULT_SNR_GRID):
        sp.add_argument("--snr", type=parse_snr, default=default,
                        help="SNR grid in dB, start:stop:step or a,b,c (default 1:6:1)")
        sp.add_argument("--snr-convention", choices=("ebn0", "esn0"), default="ebn0")

    sp = sub.add_parser("codegen", help="write a BCH parity-check matrix as alist")
    sp.add_argument("family", choices=("bch",))
    sp.add_argument("--m", type=int, required=True, help="field degree, 3..8")
    sp.add_argument("--t", type=int, required=True, help="designed error-correction capability")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_codegen)

    sp = sub.add_parser("train", help="train a weighted BP decoder")
    sp.add_argument("--code", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--iterations", type=int, default=5)
    sp.add_argument("--lr", type=float, default=0.001)
    sp.add_argument("--per-snr", type=int, default=20)
    common_snr(sp)
    sp.add_argument("--multiloss", action="store_true")
    sp.add_argument("--steps", type=int, default=None,
                    help="default 10000 for n < 63, else 50000")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clip-a", type=float, default=8.0)
    sp.add_argument("--rmsprop-decay", type=float, default=0.9)
    sp.add_argument("--rmsprop-eps", type=float, default=1e-8)
    sp.add_argument("--checkpoint-every", type=int, default=1000)
    sp.add_argument("--init", choices=("ones", "normal"), default="ones")
    sp.add_argument("--workers", type=int, default=_default_workers(),
                    help="accepted for symmetry with eval; training runs in one process")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="Monte-Carlo BER/FER over an SNR grid")
    sp.add_argument("--code", required=True)
    sp.add_argument("--decoder", choices=("bp", "neural", "ml"), required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--iterations", type=int, default=5, help="BP iterations")
    common_snr(sp)
    sp.add_argument("--min-frame-errors", type=int, default=100)
    sp.add_argument("--max-frames", type=int, default=10_000_000)
    sp.add_argument("--fixed-frames", action="store_true",
                    help="run exactly --max-frames per point (matched samples across decoders)")
    sp.add_argument("--chunk-frames", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clip-a", type=float, default=8.0)
    sp.add_argument("--float32", action="store_true", help="neural decoder in 32-bit floats")
    sp.add_argument("--workers", type=int, default=_default_workers())
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="compare BER reports; the first is the reference")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--targets", type=lambda s: tuple(float(x) for x in s.split(",")),
                    default=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("weights", help="weight statistics or a dense layer dump")
    sp.add_argument("--code", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--bins", type=int, default=20)
    sp.add_argument("--layer", default="last", help="'last' or a 1-based iteration")
    sp.add_argument("--dense", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("audit", help="codeword-independence audit")
    sp.add_argument("--code", required=True)
    sp.add_argument("--decoder", choices=("bp", "neural"), required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--iterations", type=int, default=5)
    sp.add_argument("--codewords", type=int, default=100)
    sp.add_argument("--snr-db", type=float, default=3.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clip-a", type=float, default=8.0)
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("rerun", help="replay a run from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="replace the recorded --out or --out-dir destination")
    sp.set_defaults(func=cmd_rerun)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CodeError, CheckpointError, DivergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
