import numpy as np
import pytest

from validmark.balancer import (SampleWeightTable, assign_ranges, draw_batch,
                                sample_indices, uniform_table, update_losses)
from validmark.core import DataError


def ranges_of(table):
    return list(zip(table.starts.tolist(), table.ends.tolist()))


def oracle_largest_remainder(values, total):
    """Independent recomputation: largest remainder, then raise zero widths
    to one unit, paying one unit at a time from the current maximum."""
    values = np.asarray(values, dtype=np.float64)
    if values.sum() <= 0:
        quotas = np.full(len(values), total / len(values))
    else:
        quotas = total * values / values.sum()
    widths = np.floor(quotas).astype(int)
    order = sorted(range(len(values)),
                   key=lambda i: (-(quotas[i] - widths[i]), i))
    for i in order[: total - widths.sum()]:
        widths[i] += 1
    deficit = int((widths == 0).sum())
    widths[widths == 0] = 1
    while deficit > 0:
        widths[int(np.argmax(widths))] -= 1
        deficit -= 1
    return widths


def test_assign_ranges_136():
    table = assign_ranges([("a", 1.0), ("b", 3.0), ("c", 6.0)], 10000)
    assert ranges_of(table) == [(0, 1000), (1000, 4000), (4000, 10000)]


def test_assign_ranges_symmetric():
    table = assign_ranges([("a", 2.0), ("b", 2.0)], 10000)
    assert ranges_of(table) == [(0, 5000), (5000, 10000)]


def test_assign_ranges_zero_loss_floor():
    table = assign_ranges([("a", 0.0), ("b", 4.0)], 10000)
    assert ranges_of(table) == [(0, 1), (1, 10000)]


def test_assign_ranges_random_vs_oracle():
    rng = np.random.default_rng(137)
    losses = [(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0.01, 50, size=137))]
    table = assign_ranges(losses, 10000)
    widths = table.widths
    assert widths.sum() == 10000
    oracle = oracle_largest_remainder([v for _, v in losses], 10000)
    np.testing.assert_array_equal(widths, oracle)
    # each width within one unit of the exact proportional share
    total = sum(v for _, v in losses)
    exact = np.array([10000 * v / total for _, v in losses])
    assert np.abs(widths - exact).max() < 1.0


def test_assign_ranges_errors():
    with pytest.raises(DataError):
        assign_ranges([], 10000)
    with pytest.raises(DataError):
        assign_ranges([("a", 1.0), ("b", 1.0), ("c", 1.0)], 2)
    with pytest.raises(DataError):
        assign_ranges([("a", -1.0)], 100)


def test_partition_invariant_random():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        table = assign_ranges(
            [(f"s{i}", float(v)) for i, v in enumerate(rng.uniform(0, 5, size=n))],
            int(rng.integers(n, 5000)))
        ends = table.ends
        assert table.starts[0] == 0
        assert ends[-1] == table.range_total
        assert (table.starts[1:] == ends[:-1]).all()
        assert (table.widths >= 1).all()


def test_ownership_lookup_total():
    table = assign_ranges([("a", 0.0), ("b", 5.0), ("c", 1.0)], 50)
    owners = [table.owner_of(v) for v in range(50)]
    counts = np.bincount(owners, minlength=3)
    np.testing.assert_array_equal(counts, table.widths)
    with pytest.raises(DataError):
        table.owner_of(50)


def test_monotonicity_at_default_range():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(2, 30))
        vals = rng.uniform(0.0, 10.0, size=n)
        i = int(rng.integers(0, n))
        bumped = vals.copy()
        bumped[i] += rng.uniform(0.01, 5.0)
        w1 = assign_ranges([(f"s{k}", v) for k, v in enumerate(vals)], 10000).widths
        w2 = assign_ranges([(f"s{k}", v) for k, v in enumerate(bumped)], 10000).widths
        assert w2[i] >= w1[i]


def test_update_losses():
    table = assign_ranges([("a", 1.0), ("b", 1.0)], 10000)
    updated = update_losses(table, [("a", 3.0), ("b", 1.0)])
    assert ranges_of(updated) == [(0, 7500), (7500, 10000)]
    assert ranges_of(table) == [(0, 5000), (5000, 10000)]  # value semantics
    with pytest.raises(DataError):
        update_losses(table, [("a", 1.0), ("zzz", 1.0)])


def test_update_losses_uniform_and_dominant():
    ids = [f"s{i}" for i in range(10)]
    table = uniform_table(ids, 10000)
    assert (table.widths == 1000).all()
    dominant = update_losses(table, [(ids[0], 1e6)] + [(i, 1.0) for i in ids[1:]])
    assert dominant.widths[0] == 10000 - 9
    again = update_losses(dominant, [(ids[0], 1e6)] + [(i, 1.0) for i in ids[1:]])
    np.testing.assert_array_equal(again.widths, dominant.widths)


def test_draw_batch_trivial():
    table = assign_ranges([("only", 2.0)], 100)
    rng = np.random.default_rng(0)
    assert draw_batch(table, 1, rng) == ["only"]

    table2 = assign_ranges([("a", 1.0), ("b", 9.0)], 100)
    batch = draw_batch(table2, 2, np.random.default_rng(1), dedup=True)
    assert sorted(batch) == ["a", "b"]


def test_draw_batch_dedup_infeasible():
    table = assign_ranges([("a", 1.0)], 100)
    with pytest.raises(DataError):
        draw_batch(table, 2, np.random.default_rng(0), dedup=True)


def test_draw_batch_deterministic():
    table = assign_ranges([(f"s{i}", float(i + 1)) for i in range(20)], 10000)
    b1 = draw_batch(table, 8, np.random.default_rng(99))
    b2 = draw_batch(table, 8, np.random.default_rng(99))
    assert b1 == b2
    assert len(set(b1)) == 8


def test_draw_batch_retry_cap_falls_back_deterministically():
    # one sample owns all but six units of a huge range: dedup redraws hit the
    # cap and the batch completes with the highest-loss unused ids in order
    losses = [("big", 1e9)] + [(f"s{i}", float(10 - i)) for i in range(6)]
    table = assign_ranges(losses, 1_000_000)
    batch = draw_batch(table, 4, np.random.default_rng(3), dedup=True)
    assert batch == ["big", "s0", "s1", "s2"]


def test_empirical_frequencies_and_chi_square():
    scipy_stats = pytest.importorskip("scipy.stats")
    table = assign_ranges([("a", 1.0), ("b", 3.0), ("c", 6.0)], 10000)
    rng = np.random.default_rng(777)
    n = 200_000
    idxs = sample_indices(table, n, rng)
    freq = np.bincount(idxs, minlength=3) / n
    np.testing.assert_allclose(freq, [0.1, 0.3, 0.6], atol=0.005)
    chi = scipy_stats.chisquare(np.bincount(idxs, minlength=3),
                                np.array([0.1, 0.3, 0.6]) * n)
    assert chi.pvalue > 0.001


def test_table_rejects_bad_layout():
    with pytest.raises(DataError):
        SampleWeightTable(("a", "b"), np.array([1.0, 1.0]),
                          np.array([0, 7]), np.array([5, 3]), 10)
