"""Command-line front end: ``deblur synth | train | infer | eval``.

Exit codes: 0 success, 1 user or data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from deblur.data import BlurSpec, build_synthetic_dataset, list_images, read_manifest, to_image, write_image
from deblur.errors import FormatError, TrainingError
from deblur.metrics import MsSsimParams, SsimParams, evaluate_pairs
from deblur.model import SrcnnConfig, load_checkpoint, srcnn_forward
from deblur.optim import AdamwHyper
from deblur.train import SchedulerParams, TrainConfig, infer, train

log = logging.getLogger("deblur")


class UsageError(Exception):
    """Bad flag, path or config value; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for internal errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- run configuration ---------------------------------------------------------

REQUIRED = ("manifest",)
DEFAULTS = {
    "output_dir": "run",
    "seed": 0,
    "train.epochs": 50,
    "train.batch_size": 4,
    "train.patch_size": 0,
    "train.threads": 1,
    "model.f1": 9,
    "model.f2": 1,
    "model.f3": 5,
    "model.n1": 64,
    "model.n2": 32,
    "model.channels": 3,
    "optim.lr": 0.001,
    "optim.beta1": 0.9,
    "optim.beta2": 0.999,
    "optim.eps": 1e-8,
    "optim.weight_decay": 0.01,
    "sched.patience": 4,
    "sched.factor": 0.5,
    "sched.min_lr": 1e-6,
    "sched.threshold": 1e-5,
    "loss.window_size": 11,
    "loss.window_sigma": 1.5,
    "loss.k1": 0.01,
    "loss.k2": 0.03,
    "loss.dynamic_range": 1.0,
    "loss.scales": 3,
}
KEYS = set(DEFAULTS) | set(REQUIRED)

# flag dest -> config key
FLAG_KEYS = {
    "manifest": "manifest",
    "output_dir": "output_dir",
    "seed": "seed",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "patch_size": "train.patch_size",
    "threads": "train.threads",
    "lr": "optim.lr",
    "n1": "model.n1",
    "n2": "model.n2",
}


def _coerce(key: str, value):
    default = DEFAULTS.get(key)
    if default is None:
        return str(value)
    try:
        if isinstance(default, int) and not isinstance(value, float):
            return int(value)
        if isinstance(default, (int, float)):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot interpret {value!r} as {type(default).__name__}") from None


def load_run_config(path, overrides: dict) -> dict:
    """Merge a flat dotted-key JSON config with flag overrides (flags win)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"--config: {path} must hold a JSON object")
    merged = {**raw, **overrides}
    unknown = sorted(set(merged) - KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if k not in merged]
    if missing:
        raise UsageError(f"missing required config keys: {', '.join(missing)}")
    defaulted = sorted(set(DEFAULTS) - set(merged))
    if defaulted:
        log.info("using defaults for: %s", ", ".join(defaulted))
    return {k: _coerce(k, merged.get(k, DEFAULTS.get(k))) for k in sorted(KEYS)}


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        seed=cfg["seed"],
        model=SrcnnConfig(**{k: cfg[f"model.{k}"] for k in ("f1", "f2", "f3", "n1", "n2", "channels")}),
        loss=MsSsimParams(
            SsimParams(
                cfg["loss.window_size"], cfg["loss.window_sigma"], cfg["loss.k1"], cfg["loss.k2"],
                cfg["loss.dynamic_range"],
            ),
            scales=cfg["loss.scales"],
        ),
        optimizer=AdamwHyper(
            cfg["optim.lr"], cfg["optim.beta1"], cfg["optim.beta2"], cfg["optim.eps"], cfg["optim.weight_decay"]
        ),
        scheduler=SchedulerParams(
            cfg["sched.patience"], cfg["sched.factor"], cfg["sched.min_lr"], cfg["sched.threshold"]
        ),
        patch_size=cfg["train.patch_size"] or None,
        threads=cfg["train.threads"],
        output_dir=Path(cfg["output_dir"]),
    )


# --- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        splits = tuple(float(s) for s in args.splits.split(","))
    except ValueError:
        raise UsageError(f"--splits: expected three comma-separated numbers, got {args.splits!r}") from None
    if len(splits) != 3 or any(s < 0 for s in splits) or abs(sum(splits) - 1.0) > 1e-6:
        raise UsageError(f"--splits: fractions must be three nonnegative numbers summing to 1, got {args.splits!r}")
    if not Path(args.clean_dir).is_dir():
        raise UsageError(f"clean_dir: no such directory: {args.clean_dir}")
    try:
        spec = BlurSpec(sigma=args.sigma, kernel_size=args.kernel, seed=args.seed, noise_std=args.noise_std)
    except ValueError as exc:
        raise UsageError(f"--sigma/--kernel/--noise-std: {exc}") from None
    print(f"seed={args.seed}")
    manifest = build_synthetic_dataset(args.clean_dir, args.out_dir, spec, splits, seed=args.seed)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"manifest={Path(args.out_dir) / 'manifest.csv'}")
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_train(args) -> int:
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if getattr(args, dest) is not None}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set: expected KEY=VALUE, got {item!r}")
        overrides[key] = value
    cfg = load_run_config(args.config, overrides)
    config = train_config_from(cfg)
    print(f"seed={config.seed}")
    try:
        manifest = read_manifest(cfg["manifest"])
    except OSError as exc:
        raise UsageError(f"manifest: cannot read {cfg['manifest']}: {exc.strerror}") from None
    try:
        result = train(config, manifest)
    except TrainingError as exc:
        where = f" (epoch {exc.epoch}, batch {exc.batch})" if exc.epoch is not None else ""
        print(f"error: training aborted{where}: {exc}", file=sys.stderr)
        return 1
    out = config.output_dir
    print(f"checkpoint={out / 'best.srcn'} history={out / 'history.csv'}")
    print(f"best_val_ssim={result.checkpoint.best_ssim:.6f} epochs={len(result.history.rows)}")
    return 0


def cmd_infer(args) -> int:
    try:
        checkpoint = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise UsageError(f"--checkpoint: cannot read {args.checkpoint}: {exc.strerror}") from None
    try:
        inputs = list_images(args.input)
    except FileNotFoundError:
        raise UsageError(f"--input: no such directory: {args.input}") from None
    if not inputs:
        print(f"error: no .ppm/.pgm images in {args.input}", file=sys.stderr)
        return 1
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok = 0
    for res in infer(checkpoint, inputs):
        if res.error is not None:
            log.error("%s: %s", res.source, res.error)
            continue
        write_image(to_image(res.image), out_dir / Path(res.source).name)
        ok += 1
    print(f"processed={ok} failed={len(inputs) - ok}")
    return 0 if ok else 1


def cmd_eval(args) -> int:
    try:
        manifest = read_manifest(args.manifest)
        rows = manifest.split(args.split)
    except OSError as exc:
        raise UsageError(f"--manifest: cannot read {args.manifest}: {exc.strerror}") from None
    if args.checkpoint:
        weights = load_checkpoint(args.checkpoint).weights
        predictor = lambda x: srcnn_forward(weights, x)  # noqa: E731
    else:
        predictor = lambda x: x  # noqa: E731
    items = [(r.id, manifest.degraded_path(r), manifest.clean_path(r)) for r in rows]
    report = evaluate_pairs(items, predictor, dynamic_range=args.dynamic_range, threads=args.threads)
    report_path = Path(args.report) if args.report else manifest.base_dir / f"report_{args.split}.csv"
    report.write_csv(report_path)
    for r in report.rows:
        if r.error:
            log.error("%s: %s", r.id, r.error)
    if report.errors:
        print(f"errors={report.errors}", file=sys.stderr)

    def fmt(v):
        return "nan" if v is None else f"{v:.6f}"

    print(f"report={report_path}")
    print(f"ssim={fmt(report.mean_ssim)} psnr={fmt(report.mean_psnr)}")
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deblur", description="SRCNN image deblurring toolkit")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="blur a directory of clean images into a paired dataset")
    p.add_argument("clean_dir", help="directory of clean .ppm/.pgm images")
    p.add_argument("out_dir", help="output directory for blurred images and manifest.csv")
    p.add_argument("--sigma", type=float, default=1.5, help="Gaussian blur std in pixels (default 1.5)")
    p.add_argument("--kernel", type=int, default=9, help="odd blur kernel size (default 9)")
    p.add_argument("--noise-std", type=float, default=0.0, help="additive Gaussian noise std (default 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for split assignment and noise (default 0)")
    p.add_argument("--splits", default="0.8,0.2,0", help="train,val,test fractions summing to 1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train SRCNN from a JSON config")
    p.add_argument("--config", required=True, help="JSON file with flat dotted keys, e.g. 'train.epochs'")
    p.add_argument("--manifest", help="manifest CSV (overrides 'manifest')")
    p.add_argument("--output-dir", dest="output_dir", help="where best.srcn and history.csv go")
    p.add_argument("--seed", type=int, help="top-level random seed")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="minibatch size")
    p.add_argument("--patch-size", dest="patch_size", type=int, help="random crop size, 0 for full images")
    p.add_argument("--lr", type=float, help="initial AdamW learning rate")
    p.add_argument("--n1", type=int, help="feature maps in layer 1")
    p.add_argument("--n2", type=int, help="feature maps in layer 2")
    p.add_argument("--threads", type=int, help="worker threads for validation")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="deblur every image in a directory")
    p.add_argument("--checkpoint", required=True, help="trained .srcn checkpoint")
    p.add_argument("--input", required=True, help="directory of .ppm/.pgm inputs")
    p.add_argument("--output", required=True, help="output directory (same file names)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="SSIM/PSNR report for a manifest split")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--split", default="val", choices=("train", "val", "test"), help="split to score (default val)")
    p.add_argument("--checkpoint", help="model to evaluate; omitted = degraded-vs-clean baseline")
    p.add_argument("--report", help="report CSV path (default <manifest dir>/report_<split>.csv)")
    p.add_argument("--dynamic-range", dest="dynamic_range", type=float, default=1.0, help="PSNR/SSIM peak value")
    p.add_argument("--threads", type=int, default=1, help="worker threads for scoring")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0, bad flags exit 1
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # invariant violation
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
