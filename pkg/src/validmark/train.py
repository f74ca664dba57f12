"""Epoch loop: loss bookkeeping, weight-table refresh, online augmentation,
optimizer steps, LR schedule, and run history.

Epoch e draws ceil(N/batch_size) batches from the weight table built from
the losses recorded the last time each sample was seen (uniform at epoch 0
or when balancing is off), so balanced and uniform runs spend identical
compute per epoch. Augmentation generators are derived from (seed, epoch,
batch, dataset index), which keeps results independent of the worker
schedule.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment, eval_crop
from .balancer import assign_ranges, draw_batch, uniform_table
from .core import DataError, Dataset, NumericError, derive_rng
from .evaluate import evaluate, nme
from .losses import LossConfig, batch_loss_and_grad
from .net import MicroNet, NetConfig, OptimConfig, sgd_step

BALANCING_MODES = ("loss-proportional", "uniform")

_TAG_DRAW = 101
_TAG_AUG = 202


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    seed: int = 42
    net: NetConfig = field(default_factory=NetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    balancing: str = "loss-proportional"
    eval_every: int = 0          # 0 = only after the final epoch
    dedup: bool = True
    threads: int = 1
    range_total: int = 10_000
    exact_losses: bool = False   # re-score the whole set each epoch (costly)
    record_detail: bool = False  # keep per-epoch loss snapshots / draw counts

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.balancing not in BALANCING_MODES:
            raise DataError(f"unknown balancing mode {self.balancing!r}")
        if self.augment.out_size != self.net.input_size:
            raise DataError("augment.out_size must equal net.input_size")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    common_nme: float | None
    challenging_nme: float | None
    wall_ms: float


@dataclass
class TrainHistory:
    rows: list[EpochStats] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss,lr,common_nme,challenging_nme,wall_ms\n")
            for r in self.rows:
                common = f"{r.common_nme:.9g}" if r.common_nme is not None else ""
                chal = f"{r.challenging_nme:.9g}" if r.challenging_nme is not None else ""
                fh.write(f"{r.epoch},{r.mean_loss:.9g},{r.lr:.9g},"
                         f"{common},{chal},{r.wall_ms:.3f}\n")


@dataclass
class TrainResult:
    net: MicroNet
    history: TrainHistory
    final_losses: dict[str, float]
    draw_counts: dict[str, int] = field(default_factory=dict)
    loss_snapshots: list[np.ndarray] = field(default_factory=list)


def apply_schedule(optim: OptimConfig, epoch: int) -> float:
    """Piecewise-constant learning rate: last schedule step at or before epoch."""
    lr = optim.learning_rate
    for step_epoch, step_lr in sorted(optim.schedule):
        if epoch >= step_epoch:
            lr = step_lr
    return lr


def step_decay_schedule(base_lr: float, every: int = 100, decades: int = 4):
    """Step schedule dividing the rate by 10 every `every` epochs."""
    return tuple((i * every, base_lr * 10.0 ** (-i)) for i in range(decades + 1))


def _augment_batch(samples, cfg: TrainConfig, epoch: int, batch_idx: int, indices):
    def one(args):
        ds_index, sample = args
        rng = derive_rng(cfg.seed, _TAG_AUG, epoch, batch_idx, ds_index)
        return augment(sample, cfg.augment, rng)

    work = list(zip(indices, samples))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(one, work))
    return [one(item) for item in work]


def _rescore_all(net: MicroNet, dataset: Dataset, cfg: TrainConfig) -> None:
    """Exact bookkeeping mode: per-sample loss on the plain centered crop."""
    size = cfg.net.input_size
    chunk = max(cfg.optim.batch_size, 32)
    samples = dataset.samples
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        crops = [eval_crop(s, size) for s in part]
        images = np.stack([img.data for img, _ in crops]) / 255.0
        gt = np.stack([pts.points for _, pts in crops])
        pred = net.predict_triplets(images)
        _, per_sample, _ = batch_loss_and_grad(pred, gt, cfg.loss)
        for sample, value in zip(part, per_sample):
            sample.last_loss = float(value)


def train(dataset: Dataset, val_dataset: Dataset | None, cfg: TrainConfig) -> TrainResult:
    """Run the full loop; deterministic given (datasets, cfg)."""
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    if cfg.dedup and cfg.optim.batch_size > len(dataset):
        raise DataError("batch_size exceeds dataset size with dedup enabled")

    by_id = {s.id: s for s in dataset.samples}
    index_of = {s.id: i for i, s in enumerate(dataset.samples)}
    ids = [s.id for s in dataset.samples]

    net = MicroNet.init(cfg.net, cfg.seed)
    history = TrainHistory()
    draw_counts: dict[str, int] = {sid: 0 for sid in ids}
    snapshots: list[np.ndarray] = []
    seen: set[str] = set()

    batches_per_epoch = math.ceil(len(dataset) / cfg.optim.batch_size)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = apply_schedule(cfg.optim, epoch)
        if epoch == 0 or cfg.balancing == "uniform":
            table = uniform_table(ids, cfg.range_total)
        else:
            table = assign_ranges([(sid, by_id[sid].last_loss) for sid in ids],
                                  cfg.range_total)
        draw_rng = derive_rng(cfg.seed, _TAG_DRAW, epoch)

        batch_losses = []
        for batch_idx in range(batches_per_epoch):
            batch_ids = draw_batch(table, cfg.optim.batch_size, draw_rng, dedup=cfg.dedup)
            members = [by_id[sid] for sid in batch_ids]
            indices = [index_of[sid] for sid in batch_ids]
            augmented = _augment_batch(members, cfg, epoch, batch_idx, indices)
            images = np.stack([a.image.data for a in augmented]) / 255.0
            gt = np.stack([a.annotation.points for a in augmented])
            try:
                loss, per_sample, grads = net.loss_and_gradients(images, gt, cfg.loss)
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch}, batch {batch_idx})") from exc
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_idx}")
            for sid, sample_loss in zip(batch_ids, per_sample):
                by_id[sid].last_loss = float(sample_loss)
                seen.add(sid)
                if cfg.record_detail:
                    draw_counts[sid] += 1
            sgd_step(net, grads, cfg.optim, lr=lr)
            batch_losses.append(loss)

        if cfg.exact_losses:
            _rescore_all(net, dataset, cfg)
            seen.update(ids)
        elif epoch == 0 and len(seen) < len(ids):
            # samples never drawn have produced no loss yet; assume they are
            # as hard as the hardest seen one so they cannot starve
            prior = max(by_id[sid].last_loss for sid in seen) if seen else 1.0
            for sid in ids:
                if sid not in seen:
                    by_id[sid].last_loss = prior
        if cfg.record_detail:
            snapshots.append(np.array([by_id[sid].last_loss for sid in ids]))

        common_nme = challenging_nme = None
        want_eval = val_dataset is not None and (
            (cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0)
            or epoch == cfg.epochs - 1
        )
        if want_eval:
            records, _ = evaluate(net, val_dataset)
            common = [r for r in records if r.subset == "common"]
            chal = [r for r in records if r.subset == "challenging"]
            common_nme = 100.0 * nme(common) if common else None
            challenging_nme = 100.0 * nme(chal) if chal else None

        wall_ms = (time.perf_counter() - t0) * 1000.0
        history.rows.append(EpochStats(epoch, float(np.mean(batch_losses)), lr,
                                       common_nme, challenging_nme, wall_ms))

    final_losses = {sid: by_id[sid].last_loss for sid in ids}
    return TrainResult(net, history, final_losses, draw_counts, snapshots)
