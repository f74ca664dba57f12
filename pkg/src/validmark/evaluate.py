"""Measurement suite: NME, discard-worst by validation signal, correlation
between signal and true error, and signal availability.

NME values returned by these functions are raw fractions (error divided by
the inter-ocular distance); report tables multiply by 100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import eval_crop
from .core import DataError, Dataset, EyeScheme, interocular_distance

DISCARD_MODES = ("global", "per-image")


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    errors: np.ndarray          # (L,) true per-landmark error, px
    signals: np.ndarray         # (L,) predicted error (validation signal), px
    interocular: float
    subset: str

    def __post_init__(self):
        errors = np.asarray(self.errors, dtype=np.float64)
        signals = np.asarray(self.signals, dtype=np.float64)
        if errors.shape != signals.shape or errors.ndim != 1:
            raise DataError("errors and signals must be equal-length vectors")
        if not (self.interocular > 0):
            raise DataError("interocular must be positive")
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "signals", signals)


def nme(records: list[EvalRecord]) -> float:
    """Mean over images of (mean landmark error / inter-ocular distance)."""
    if not records:
        raise DataError("cannot compute NME over zero records")
    return float(np.mean([r.errors.mean() / r.interocular for r in records]))


def discard_worst(records: list[EvalRecord], fraction: float,
                  mode: str = "global") -> float:
    """NME after dropping the `fraction` of landmarks with the largest
    validation signal; ranking is across the whole set (global) or within
    each image (per-image)."""
    if not 0.0 <= fraction < 1.0:
        raise DataError("fraction must be in [0, 1)")
    if mode not in DISCARD_MODES:
        raise DataError(f"unknown discard mode {mode!r}")
    if fraction == 0.0:
        return nme(records)

    if mode == "per-image":
        ratios = []
        for r in records:
            count = len(r.errors)
            drop = int(fraction * count)
            if drop >= count:
                raise DataError("fraction leaves no landmarks in an image")
            keep = np.argsort(-r.signals, kind="stable")[drop:]
            ratios.append(r.errors[keep].mean() / r.interocular)
        return float(np.mean(ratios))

    sig = np.concatenate([r.signals for r in records])
    owner = np.concatenate([np.full(len(r.signals), i) for i, r in enumerate(records)])
    err = np.concatenate([r.errors for r in records])
    drop = int(fraction * len(sig))
    keep = np.argsort(-sig, kind="stable")[drop:]
    ratios = []
    for i, r in enumerate(records):
        mask = owner[keep] == i
        if mask.any():
            ratios.append(err[keep][mask].mean() / r.interocular)
    if not ratios:
        raise DataError("discard fraction removed every landmark")
    return float(np.mean(ratios))


def pearson(signals, errors) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(signals, dtype=np.float64)
    y = np.asarray(errors, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DataError("need two equal-length vectors of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc)) * math.sqrt(float(yc @ yc))
    if denom == 0.0:
        raise DataError("correlation undefined for constant input")
    return float(xc @ yc / denom)


def availability(records: list[EvalRecord], validity_threshold: float,
                 allowed_bad_frac: float) -> float:
    """Fraction of images whose share of landmarks with signal above the
    threshold stays within the allowed fraction."""
    if validity_threshold <= 0:
        raise DataError("validity_threshold must be positive")
    if not records:
        raise DataError("cannot compute availability over zero records")
    good = 0
    for r in records:
        bad_frac = float((r.signals > validity_threshold).mean())
        if bad_frac <= allowed_bad_frac:
            good += 1
    return good / len(records)


@dataclass(frozen=True)
class SummaryRow:
    subset: str
    nme: float                  # x100, table convention
    nme_d10: float
    nme_d20: float
    nme_d30: float
    pearson: float              # nan when the correlation is undefined
    availability: float


def summarize(records: list[EvalRecord],
              discard_fractions=(0.1, 0.2, 0.3),
              availability_threshold_frac: float = 0.5,
              availability_allowed_bad_frac: float = 0.1) -> list[SummaryRow]:
    """Per-subset rows (plus 'full') in the paper-style table layout.

    The availability threshold is availability_threshold_frac times the
    mean inter-ocular distance of the records under consideration.
    """
    tags = sorted({r.subset for r in records})
    groups = [(tag, [r for r in records if r.subset == tag]) for tag in tags]
    if len(tags) > 1:
        groups.append(("full", list(records)))
    rows = []
    for tag, group in groups:
        sig = np.concatenate([r.signals for r in group])
        err = np.concatenate([r.errors for r in group])
        try:
            corr = pearson(sig, err)
        except DataError:
            corr = float("nan")
        threshold = availability_threshold_frac * float(
            np.mean([r.interocular for r in group]))
        discards = [100.0 * discard_worst(group, f) for f in discard_fractions]
        rows.append(SummaryRow(
            subset=tag,
            nme=100.0 * nme(group),
            nme_d10=discards[0] if len(discards) > 0 else float("nan"),
            nme_d20=discards[1] if len(discards) > 1 else float("nan"),
            nme_d30=discards[2] if len(discards) > 2 else float("nan"),
            pearson=corr,
            availability=availability(group, threshold, availability_allowed_bad_frac),
        ))
    return rows


def evaluate(net, dataset: Dataset, scheme: EyeScheme | None = None):
    """Run the network on centered face-box crops and collect records.

    Returns (records, summary_rows). Predictions, signals, and errors are
    in the pixel units of the network input frame.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    count = dataset.landmark_count
    if count != net.cfg.landmark_count:
        raise DataError(f"dataset has {count} landmarks but checkpoint expects "
                        f"{net.cfg.landmark_count}")
    if scheme is None:
        scheme = EyeScheme.for_count(count)

    records = []
    size = net.cfg.input_size
    for sample in dataset:
        image, gt = eval_crop(sample, size)
        pred = net.predict_triplets(image.data[None] / 255.0)[0]
        err = np.hypot(pred[:, 0] - gt.points[:, 0], pred[:, 1] - gt.points[:, 1])
        records.append(EvalRecord(
            sample_id=sample.id,
            errors=err,
            signals=pred[:, 2].copy(),
            interocular=interocular_distance(gt, scheme),
            subset=sample.subset,
        ))
    return records, summarize(records)


# --- CSV emission ------------------------------------------------------------

def write_records_csv(records: list[EvalRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id,landmark_idx,err_px,valid_px,interocular,subset\n")
        for r in records:
            for i, (e, s) in enumerate(zip(r.errors, r.signals)):
                fh.write(f"{r.sample_id},{i},{e:.9g},{s:.9g},"
                         f"{r.interocular:.9g},{r.subset}\n")


def write_summary_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subset,nme,nme_d10,nme_d20,nme_d30,pearson,availability\n")
        for row in rows:
            fh.write(f"{row.subset},{row.nme:.9g},{row.nme_d10:.9g},"
                     f"{row.nme_d20:.9g},{row.nme_d30:.9g},"
                     f"{row.pearson:.9g},{row.availability:.9g}\n")


def read_summary_csv(path) -> list[SummaryRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["subset", "nme", "nme_d10", "nme_d20", "nme_d30",
                    "pearson", "availability"]
        if header != expected:
            raise DataError(f"{path}: unexpected summary header {header}")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 7:
                raise DataError(f"{path}: malformed summary row {line!r}")
            rows.append(SummaryRow(parts[0], *(float(p) for p in parts[1:])))
    return rows
