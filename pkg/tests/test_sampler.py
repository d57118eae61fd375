import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixvox.autodiff import seeded_rng
from mixvox.data.exam import STRATA
from mixvox.errors import DataError
from mixvox.training.sampler import batch_stratum_counts, epoch_batches, stratify

TABLE_SIZES = {"ISUP-0": 92, "ISUP-1": 222, "ISUP-2": 228, "ISUP-3-5": 137}


def _table_strata():
    return {label: [f"{label}_{i}" for i in range(n)] for label, n in TABLE_SIZES.items()}


class TestStratify:
    def test_bucketing(self):
        strata = stratify({"a": 4, "b": 0, "c": 1, "d": 2, "e": 5})
        assert strata["ISUP-3-5"] == ["a", "e"]
        assert strata["ISUP-0"] == ["b"]
        assert strata["ISUP-1"] == ["c"]
        assert strata["ISUP-2"] == ["d"]

    def test_table_fixture_counts(self):
        grades = {}
        idx = 0
        for grade, count in ((0, 92), (1, 222), (2, 228), (4, 137)):
            for _ in range(count):
                grades[f"e{idx}"] = grade
                idx += 1
        strata = stratify(grades)
        assert [len(strata[label]) for label in STRATA] == [92, 222, 228, 137]

    def test_partition_no_loss_no_duplicates(self):
        rng = np.random.default_rng(0)
        grades = {f"e{i}": int(rng.integers(0, 6)) for i in range(200)}
        strata = stratify(grades)
        ids = [eid for ids in strata.values() for eid in ids]
        assert sorted(ids) == sorted(grades)

    def test_ungraded_exam_rejected_with_id(self):
        with pytest.raises(DataError) as err:
            stratify({"good": 2, "nograde": None})
        assert "nograde" in str(err.value)

    def test_all_benign_gives_single_stratum(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="mixvox.training"):
            strata = stratify({f"e{i}": 0 for i in range(5)})
        assert len(strata["ISUP-0"]) == 5
        assert all(not strata[label] for label in STRATA[1:])
        assert "empty strata" in caplog.text


class TestEpochBatches:
    def test_four_equal_strata_batch6_counts(self):
        strata = {label: [f"{label}_{i}" for i in range(10)] for label in STRATA}
        batches = epoch_batches(strata, 6, seeded_rng(0))
        for batch in batches:
            counts = sorted(batch_stratum_counts(batch, strata).values())
            assert counts == [1, 1, 2, 2]

    def test_single_nonempty_stratum(self):
        strata = {label: [] for label in STRATA}
        strata["ISUP-2"] = [f"e{i}" for i in range(7)]
        batches = epoch_batches(strata, 3, seeded_rng(1))
        drawn = [e for b in batches for e in b]
        assert set(drawn) <= set(strata["ISUP-2"])
        assert len(batches) == 3  # 7 exams exhausted within 3 batches of 3

    def test_counts_never_differ_by_more_than_one_on_table_sizes(self):
        strata = _table_strata()
        rng = seeded_rng(7)
        for _ in range(50):
            for batch in epoch_batches(strata, 6, rng):
                counts = batch_stratum_counts(batch, strata)
                values = list(counts.values())
                assert max(values) - min(values) <= 1

    def test_every_stratum_in_every_batch_on_table_sizes(self):
        strata = _table_strata()
        for batch in epoch_batches(strata, 6, seeded_rng(3)):
            counts = batch_stratum_counts(batch, strata)
            assert all(v >= 1 for v in counts.values())

    def test_draw_frequencies_equal_within_5_percent(self):
        strata = _table_strata()
        rng = seeded_rng(11)
        totals = {label: 0 for label in STRATA}
        draws = 0
        for _ in range(50):
            for batch in epoch_batches(strata, 6, rng):
                for label, c in batch_stratum_counts(batch, strata).items():
                    totals[label] += c
                draws += 6
        for label in STRATA:
            share = totals[label] / draws
            assert abs(share - 0.25) < 0.05 * 0.25 + 0.01

    def test_epoch_covers_longest_stratum(self):
        strata = _table_strata()
        batches = epoch_batches(strata, 6, seeded_rng(5))
        drawn = [e for b in batches for e in b]
        longest = set(strata["ISUP-2"])
        assert longest <= set(drawn)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 40), min_size=4, max_size=4),
           st.integers(4, 8), st.integers(0, 2 ** 31 - 1))
    def test_round_robin_property_random_sizes(self, sizes, batch_size, seed):
        if all(s == 0 for s in sizes):
            return
        strata = {label: [f"{label}_{i}" for i in range(n)]
                  for label, n in zip(STRATA, sizes)}
        batches = epoch_batches(strata, batch_size, seeded_rng(seed))
        for batch in batches:
            assert len(batch) == batch_size
            counts = [c for label, c in batch_stratum_counts(batch, strata).items()
                      if strata[label]]
            assert max(counts) - min(counts) <= 1

    def test_all_empty_rejected(self):
        with pytest.raises(DataError):
            epoch_batches({label: [] for label in STRATA}, 6, seeded_rng(0))

    def test_deterministic_given_seed(self):
        strata = _table_strata()
        a = epoch_batches(strata, 6, seeded_rng(9))
        b = epoch_batches(strata, 6, seeded_rng(9))
        assert a == b
