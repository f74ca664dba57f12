"""Loss-proportional batch selection.

Each sample owns a contiguous integer subrange of [0, range_total) whose
width is proportional to its share of the summed training loss. Batches
are drawn by sampling uniform integers over the whole range and looking
up the owning sample, so a sample's inclusion probability equals its loss
share. Integer widths come from largest-remainder apportionment (exact
tiling) with a floor of one unit so no sample is ever starved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError

DEFAULT_RANGE_TOTAL = 10_000


@dataclass(frozen=True)
class SampleWeightTable:
    ids: tuple[str, ...]
    losses: np.ndarray          # (n,) float64, >= 0
    starts: np.ndarray          # (n,) int64, ascending, starts[0] == 0
    widths: np.ndarray          # (n,) int64, all >= 1
    range_total: int

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.int64)
        widths = np.asarray(self.widths, dtype=np.int64)
        object.__setattr__(self, "losses", np.asarray(self.losses, dtype=np.float64))
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "widths", widths)
        ends = starts + widths
        if (widths < 1).any():
            raise DataError("every sample must own at least one range unit")
        if starts[0] != 0 or (starts[1:] != ends[:-1]).any() or ends[-1] != self.range_total:
            raise DataError("ranges must tile [0, range_total) exactly")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def ends(self) -> np.ndarray:
        return self.starts + self.widths

    def owner_of(self, value: int) -> int:
        """Index of the sample owning an integer in [0, range_total)."""
        if not 0 <= value < self.range_total:
            raise DataError(f"value {value} outside [0, {self.range_total})")
        return int(np.searchsorted(self.starts, value, side="right") - 1)


def _apportion(values: np.ndarray, range_total: int) -> np.ndarray:
    """Largest-remainder integer widths summing to range_total, floored at 1."""
    n = len(values)
    total = values.sum()
    if total <= 0.0:
        quotas = np.full(n, range_total / n)
    else:
        quotas = range_total * values / total
    widths = np.floor(quotas).astype(np.int64)
    remainders = quotas - widths
    leftover = int(range_total - widths.sum())
    if leftover > 0:
        # ties broken by input order for determinism
        order = np.lexsort((np.arange(n), -remainders))
        widths[order[:leftover]] += 1

    # raise zero widths to 1, taking units back from the widest entries
    deficit = int((widths == 0).sum())
    widths[widths == 0] = 1
    while deficit > 0:
        idx = int(np.argmax(widths))
        if widths[idx] <= 1:
            raise DataError("cannot floor widths at 1: range_total too small")
        take = min(deficit, int(widths[idx] - 1) if n > 1 else deficit)
        # only shave down to the runner-up, otherwise argmax would thrash
        if n > 1:
            runner_up = int(np.partition(widths, -2)[-2])
            take = min(take, max(int(widths[idx]) - runner_up, 1))
        widths[idx] -= take
        deficit -= take
    return widths


def assign_ranges(losses, range_total: int = DEFAULT_RANGE_TOTAL) -> SampleWeightTable:
    """Build a weight table from (id, loss) pairs.

    Widths are proportional to loss/sum(loss) (uniform when all losses are
    zero), floored at one unit each, and sum exactly to range_total.
    """
    pairs = list(losses)
    if not pairs:
        raise DataError("cannot assign ranges over an empty sample list")
    ids = tuple(str(sid) for sid, _ in pairs)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids in loss list")
    values = np.array([float(loss) for _, loss in pairs], dtype=np.float64)
    if (values < 0.0).any() or not np.isfinite(values).all():
        raise DataError("losses must be finite and >= 0")
    if range_total < len(pairs):
        raise DataError(
            f"range_total {range_total} cannot give {len(pairs)} samples a unit each"
        )
    widths = _apportion(values, range_total)
    starts = np.concatenate(([0], np.cumsum(widths)[:-1]))
    return SampleWeightTable(ids, values, starts, widths, range_total)


def update_losses(table: SampleWeightTable, new_losses) -> SampleWeightTable:
    """Fresh table from updated per-sample losses; the old table is unchanged."""
    pairs = list(new_losses)
    known = set(table.ids)
    for sid, _ in pairs:
        if str(sid) not in known:
            raise DataError(f"unknown sample id {sid!r} in loss update")
    if len(pairs) != len(table.ids):
        raise DataError("loss update must cover every sample exactly once")
    return assign_ranges(pairs, table.range_total)


def sample_indices(table: SampleWeightTable, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws: `count` independent owner indices (duplicates allowed)."""
    values = rng.integers(0, table.range_total, size=count)
    return np.searchsorted(table.starts, values, side="right") - 1


def draw_batch(
    table: SampleWeightTable,
    batch_size: int,
    rng: np.random.Generator,
    dedup: bool = True,
) -> list[str]:
    """Draw a batch of sample ids by uniform sampling over the range.

    With dedup, duplicate hits are rejected and redrawn; after
    1000*batch_size rejections the batch is completed deterministically
    with the highest-loss samples not yet included.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if dedup and batch_size > len(table):
        raise DataError(
            f"cannot draw {batch_size} distinct samples from {len(table)}"
        )
    if not dedup:
        idxs = sample_indices(table, batch_size, rng)
        return [table.ids[i] for i in idxs]

    chosen: list[int] = []
    seen: set[int] = set()
    rejections = 0
    cap = 1000 * batch_size
    while len(chosen) < batch_size and rejections < cap:
        idx = int(sample_indices(table, 1, rng)[0])
        if idx in seen:
            rejections += 1
            continue
        seen.add(idx)
        chosen.append(idx)
    if len(chosen) < batch_size:
        # deterministic fill: highest loss first, input order breaking ties
        backfill = sorted(
            (i for i in range(len(table)) if i not in seen),
            key=lambda i: (-table.losses[i], i),
        )
        chosen.extend(backfill[: batch_size - len(chosen)])
    return [table.ids[i] for i in chosen]


def uniform_table(ids, range_total: int = DEFAULT_RANGE_TOTAL) -> SampleWeightTable:
    """Equal-width table used before any loss exists (first epoch)."""
    return assign_ranges([(sid, 1.0) for sid in ids], range_total)
