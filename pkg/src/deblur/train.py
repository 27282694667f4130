"""Training loop and batch inference for the SRCNN deblurring model."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from deblur import autograd as ag
from deblur.data import PairManifest, PairRow, batch_rows, load_tensor, read_image, to_tensor
from deblur.errors import FormatError, TrainingError
from deblur.metrics import LossBreakdown, MsSsimParams, combined_loss_node, evaluate_pairs
from deblur.model import (
    Checkpoint,
    SrcnnConfig,
    SrcnnWeights,
    forward_layers,
    save_checkpoint,
    srcnn_forward,
    srcnn_init,
)
from deblur.optim import AdamwHyper, AdamwState, PlateauState, adamw_step, plateau_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchedulerParams:
    patience: int = 4
    factor: float = 0.5
    min_lr: float = 1e-6
    threshold: float = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    seed: int = 0
    model: SrcnnConfig = field(default_factory=SrcnnConfig)
    loss: MsSsimParams = field(default_factory=MsSsimParams)
    optimizer: AdamwHyper = field(default_factory=AdamwHyper)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    patch_size: int | None = None  # random square crops per pair; None trains on full images
    threads: int = 1  # validation fan-out only
    output_dir: Path | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch_size is not None and self.patch_size < self.loss.min_size():
            raise ValueError(f"patch_size {self.patch_size} below MS-SSIM minimum {self.loss.min_size()}")


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    loss: LossBreakdown
    val_ssim: float
    lr: float


@dataclass
class TrainHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    steps: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "mse", "l1", "msssim", "total", "val_ssim", "lr"])
        for r in self.rows:
            writer.writerow([r.epoch] + [
                f"{v:.6f}" for v in (r.loss.mse, r.loss.l1, r.loss.ms_ssim, r.loss.total, r.val_ssim, r.lr)
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: TrainHistory
    weights: SrcnnWeights  # weights after the last epoch


def _load_pair(manifest: PairManifest, row: PairRow, epoch: int, batch: int):
    try:
        return load_tensor(manifest.degraded_path(row)), load_tensor(manifest.clean_path(row))
    except (OSError, FormatError) as exc:
        raise TrainingError(f"failed to load pair {row.id!r}: {exc}", epoch, batch) from exc


def _crop(x, y, size, rng):
    h, w = x.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return x[i : i + size, j : j + size], y[i : i + size, j : j + size]


def batch_loss(params, pairs, loss_params: MsSsimParams):
    """Mean combined loss over a batch, with gradients for ``params``.

    Returns ``(total, grads, breakdowns)``.
    """
    graph = ag.Graph()
    leaves = [graph.leaf(p) for p in params]
    totals, parts = [], []
    for x, y in pairs:
        pred = forward_layers(leaves, x)
        total, breakdown = combined_loss_node(pred, y, loss_params)
        totals.append(total)
        parts.append(breakdown)
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    loss = loss * (1.0 / len(totals))
    grads = ag.backward(graph, loss)
    return float(loss.value.item()), [grads[leaf] for leaf in leaves], parts


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    return LossBreakdown(
        mse=math.fsum(p.mse for p in parts) / n,
        l1=math.fsum(p.l1 for p in parts) / n,
        ms_ssim=math.fsum(p.ms_ssim for p in parts) / n,
        total=math.fsum(p.total for p in parts) / n,
    )


def validate(weights: SrcnnWeights, manifest: PairManifest, threads: int = 1) -> float:
    """Mean SSIM of the model's (clamped) output over the validation split."""
    rows = manifest.split("val")
    items = [(r.id, manifest.degraded_path(r), manifest.clean_path(r)) for r in rows]
    report = evaluate_pairs(items, lambda x: srcnn_forward(weights, x), threads=threads)
    if report.errors:
        bad = next(r for r in report.rows if r.error)
        raise TrainingError(f"validation failed on {bad.id!r}: {bad.error}")
    return report.mean_ssim


def train(
    config: TrainConfig,
    manifest: PairManifest,
    init: SrcnnWeights | None = None,
) -> TrainResult:
    """Minimize MSE + L1 + (1 - MS-SSIM) on the manifest's train split.

    Validation SSIM drives the plateau scheduler and picks the returned
    checkpoint. With an empty val split the negated mean training loss is
    monitored instead and ``best_ssim`` is stored as NaN.
    """
    train_rows = manifest.split("train")
    if not train_rows:
        raise ValueError("manifest has no train rows")
    has_val = bool(manifest.split("val"))

    weights = init if init is not None else srcnn_init(config.model, config.seed)
    if weights.config != config.model:
        raise ValueError(f"initial weights {weights.config} do not match config {config.model}")
    params = weights.arrays()
    opt_state = AdamwState.zeros_like(params)
    sched = PlateauState(lr=config.optimizer.lr, **vars(config.scheduler), mode="max")
    history = TrainHistory()
    best: Checkpoint | None = None
    best_metric = -math.inf

    if config.output_dir is not None:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        hyper = AdamwHyper(lr, config.optimizer.beta1, config.optimizer.beta2,
                           config.optimizer.eps, config.optimizer.weight_decay)
        crop_rng = np.random.default_rng([config.seed, epoch, 1])
        parts: list[LossBreakdown] = []
        chunks = batch_rows(manifest, "train", config.batch_size, config.seed, epoch)
        for b, chunk in enumerate(chunks, start=1):
            pairs = [_load_pair(manifest, row, epoch, b) for row in chunk]
            if config.patch_size is not None:
                pairs = [_crop(x, y, config.patch_size, crop_rng) for x, y in pairs]
            total, grads, batch_parts = batch_loss(params, pairs, config.loss)
            if not math.isfinite(total) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            params, opt_state = adamw_step(params, grads, opt_state, hyper)
            history.steps += 1
            parts.extend(batch_parts)

        weights = SrcnnWeights.from_arrays(params)
        train_loss = _mean_breakdown(parts)
        if has_val:
            val_ssim = validate(weights, manifest, config.threads)
            monitored = val_ssim
        else:
            val_ssim = math.nan
            monitored = -train_loss.total
        plateau_step(sched, monitored)
        history.rows.append(HistoryRow(epoch, train_loss, val_ssim, lr))
        log.info("epoch %d total=%.6f val_ssim=%.6f lr=%g", epoch, train_loss.total, val_ssim, lr)

        if best is None or monitored > best_metric:
            best_metric = monitored
            best = Checkpoint(weights, epoch=epoch, best_ssim=val_ssim, seed=config.seed)
            if config.output_dir is not None:
                save_checkpoint(best, Path(config.output_dir) / "best.srcn")
        if config.output_dir is not None:
            history.write_csv(Path(config.output_dir) / "history.csv")

    return TrainResult(best, history, weights)


# --- inference -------------------------------------------------------------------

@dataclass(frozen=True)
class InferResult:
    source: object
    image: np.ndarray | None
    error: str | None = None


def infer(checkpoint: Checkpoint, images) -> list[InferResult]:
    """Deblur each image (array or file path), clamping output to [0, 1].

    Unreadable or incompatible inputs produce an error entry; the rest are
    still processed.
    """
    results = []
    for src in images:
        try:
            x = src if isinstance(src, np.ndarray) else to_tensor(read_image(src))
            results.append(InferResult(src, srcnn_forward(checkpoint.weights, x)))
        except (OSError, ValueError) as exc:
            results.append(InferResult(src, None, str(exc)))
    return results
