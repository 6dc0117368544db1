"""
Testy datové pipeline (data_pipeline.py).

Testuje:
- Načtení a validaci souboru interakcí
- Filtr minimálních počtů
- Chronologické dělení na bloky
- Per-user split train/valid/test
- Negativní vzorkování
- Manifest bloků
"""

import numpy as np
import pandas as pd
import pytest

from fcrec_sim.config import DatasetSchema, get_preset
from fcrec_sim.data_pipeline import (
    _split_counts,
    block_stats,
    filter_min_interactions,
    load_interactions,
    partition_blocks,
    prepare_blocks,
    sample_negatives,
    split_train_valid_test,
    write_block_manifest,
)
from fcrec_sim.exceptions import FCRecDataError, FCRecValidationError
from fcrec_sim.seeding import derive_rng


def _log(rows: list[tuple[int, int, int]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["user", "item", "timestamp"])


# === Načítání ===


class TestLoadInteractions:
    """Testy load_interactions."""

    def test_parse_and_sort(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("2\t10\t5\t300\n1\t11\t3\t100\n1\t10\t4\t200\n", encoding="utf-8")
        df = load_interactions(path, DatasetSchema())
        assert list(df.columns) == ["user", "item", "timestamp"]
        assert df["timestamp"].tolist() == [100, 200, 300]
        assert df["user"].tolist() == [1, 1, 2]

    def test_duplicates_removed(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("1\t10\t5\t100\n1\t10\t3\t100\n", encoding="utf-8")
        assert len(load_interactions(path, DatasetSchema())) == 1

    def test_ties_sorted_by_user_then_item(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("2\t1\t5\t100\n1\t9\t5\t100\n1\t3\t5\t100\n", encoding="utf-8")
        df = load_interactions(path, DatasetSchema())
        assert list(zip(df["user"], df["item"], strict=True)) == [(1, 3), (1, 9), (2, 1)]

    def test_csv_preset_with_header(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text("userId,movieId,rating,timestamp\n1,31,2.5,1260759144\n", encoding="utf-8")
        schema, _ = get_preset("ml-latest-small")
        df = load_interactions(path, schema)
        assert df.iloc[0].tolist() == [1, 31, 1260759144]

    def test_millisecond_timestamps(self, tmp_path):
        path = tmp_path / "tags.dat"
        path.write_text(
            "userID\tartistID\ttagID\ttimestamp\n2\t52\t13\t1238536800000\n", encoding="utf-8"
        )
        schema, _ = get_preset("lastfm-2k")
        assert load_interactions(path, schema)["timestamp"].iloc[0] == 1238536800

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("1\t10\t5\t100\n1\tabc\t5\t200\n", encoding="utf-8")
        with pytest.raises(FCRecDataError) as exc_info:
            load_interactions(path, DatasetSchema())
        assert exc_info.value.line_number == 2

    def test_line_number_counts_header(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text("userId,movieId,rating,timestamp\n1,2,3,-5\n", encoding="utf-8")
        schema, _ = get_preset("ml-latest-small")
        with pytest.raises(FCRecDataError) as exc_info:
            load_interactions(path, schema)
        assert exc_info.value.line_number == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "u.data"
        path.write_text("", encoding="utf-8")
        with pytest.raises(FCRecDataError, match="Prázdný výsledek"):
            load_interactions(path, DatasetSchema())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FCRecDataError, match="neexistuje"):
            load_interactions(tmp_path / "missing.data", DatasetSchema())


# === Filtr ===


class TestFilterMinInteractions:
    """Testy filter_min_interactions."""

    def test_items_filtered_before_users(self):
        # položka 9 má jediný výskyt; po jejím odstranění má uživatel 2 jen 1 interakci
        df = _log([(1, 1, 1), (1, 2, 2), (2, 1, 3), (2, 9, 4), (3, 2, 5), (3, 1, 6)])
        out = filter_min_interactions(df, min_user=2, min_item=2)
        assert set(out["user"]) == {1, 3}
        assert 9 not in set(out["item"])

    def test_single_pass_only(self):
        """Po odfiltrování uživatelů se položky znovu nefiltrují."""
        df = _log([(1, 1, 1), (1, 2, 2), (2, 2, 3), (3, 1, 4), (3, 3, 5), (3, 3, 6)])
        out = filter_min_interactions(df, min_user=2, min_item=2)
        assert set(out["user"]) == {1, 3}
        assert 2 in set(out["item"])

    def test_everything_removed(self):
        with pytest.raises(FCRecDataError, match="odstranil všechny"):
            filter_min_interactions(_log([(1, 1, 1)]), min_user=2, min_item=1)

    def test_invalid_minimum(self):
        with pytest.raises(FCRecValidationError):
            filter_min_interactions(_log([(1, 1, 1)]), min_user=0, min_item=1)


# === Bloky ===


class TestPartitionBlocks:
    """Testy partition_blocks."""

    def test_ten_interactions_two_blocks(self):
        df = _log([(u % 3, u, u) for u in range(10)])
        blocks = partition_blocks(df, base_fraction=0.6, n_incremental=2)
        assert [len(b.interactions) for b in blocks] == [6, 2, 2]

    def test_remainder_goes_to_last_block(self):
        df = _log([(u % 3, u, u) for u in range(11)])
        blocks = partition_blocks(df, base_fraction=0.6, n_incremental=2)
        assert [len(b.interactions) for b in blocks] == [6, 2, 3]

    @pytest.mark.parametrize(
        "fraction,expected", [(0.29, 29), (0.57, 57), (0.58, 58), (0.6, 60), (0.7, 70)]
    )
    def test_base_size_is_exact_floor(self, fraction, expected):
        df = _log([(u % 7, u, u) for u in range(100)])
        blocks = partition_blocks(df, base_fraction=fraction, n_incremental=1)
        assert len(blocks[0].interactions) == expected
        assert len(blocks[1].interactions) == 100 - expected

    def test_chronological_order_and_accumulation(self, interactions_df):
        df = interactions_df.drop(columns="rating")
        blocks = partition_blocks(df, 0.6, 3)
        for prev, nxt in zip(blocks, blocks[1:], strict=False):
            assert prev.interactions["timestamp"].max() <= nxt.interactions["timestamp"].min()
            assert prev.items <= nxt.items
            assert prev.accumulated_users <= nxt.accumulated_users
        assert sum(len(b.interactions) for b in blocks) == len(df)

    def test_new_items_sorted_and_disjoint(self, interactions_df):
        blocks = partition_blocks(interactions_df.drop(columns="rating"), 0.6, 2)
        assert blocks[0].new_items == tuple(sorted(blocks[0].items))
        for prev, nxt in zip(blocks, blocks[1:], strict=False):
            assert list(nxt.new_items) == sorted(nxt.items - prev.items)

    def test_blocks_start_unsplit(self):
        blocks = partition_blocks(_log([(u % 3, u, u) for u in range(10)]), 0.6, 2)
        assert not any(b.is_split for b in blocks)
        assert len(blocks[0].train) == 6

    def test_unsorted_input(self):
        with pytest.raises(FCRecValidationError, match="seřazené"):
            partition_blocks(_log([(1, 1, 5), (1, 2, 1), (2, 3, 3)]), 0.5, 1)

    def test_too_few_interactions(self):
        with pytest.raises(FCRecDataError, match="Příliš málo"):
            partition_blocks(_log([(1, 1, 1), (1, 2, 2), (2, 3, 3)]), 0.6, 3)


# === Split ===


class TestSplit:
    """Testy per-user splitu train/valid/test."""

    @pytest.mark.parametrize(
        "n,expected",
        [(10, (8, 1, 1)), (3, (1, 1, 1)), (2, (1, 0, 1)), (1, (1, 0, 0)), (20, (16, 2, 2))],
    )
    def test_split_counts(self, n, expected):
        assert _split_counts(n, 0.1, 0.1) == expected

    def test_user_with_ten_interactions(self):
        df = _log([(1, i, i) for i in range(10)] + [(2, 100 + i, 10 + i) for i in range(10)])
        block = partition_blocks(df, 0.5, 1)[0]
        split = split_train_valid_test(block, 0.1, 0.1, seed=0)
        assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)
        assert set(split.test["user"]) == {1}

    def test_split_is_partition(self, blocks):
        for block in blocks:
            parts = pd.concat([block.train, block.valid, block.test])
            key = ["user", "item", "timestamp"]
            merged = parts.sort_values(key).reset_index(drop=True)
            original = block.interactions.sort_values(key).reset_index(drop=True)
            pd.testing.assert_frame_equal(merged, original)

    def test_split_deterministic(self, blocks, small_config):
        again = prepare_blocks(small_config)
        for a, b in zip(blocks, again, strict=True):
            pd.testing.assert_frame_equal(a.test, b.test)

    def test_split_depends_on_seed(self, blocks, make_config):
        other = prepare_blocks(make_config(seed=1))
        assert any(not a.test.equals(b.test) for a, b in zip(blocks, other, strict=True))

    def test_invalid_ratios(self, blocks):
        with pytest.raises(FCRecValidationError):
            split_train_valid_test(blocks[0], 0.5, 0.5)

    def test_grouping_by_user(self, blocks):
        by_user = blocks[1].test_by_user
        for user, items in by_user.items():
            expected = blocks[1].test.loc[blocks[1].test["user"] == user, "item"].tolist()
            assert items.tolist() == expected


# === Negativní vzorkování ===


class TestSampleNegatives:
    """Testy sample_negatives."""

    def test_size_and_exclusion(self):
        rng = derive_rng(0, "negatives", 1, 0, 1)
        negatives = sample_negatives(1, np.array([1, 2, 3]), np.arange(1, 11), 4, rng)
        assert len(negatives) == 12
        assert not set(negatives.tolist()) & {1, 2, 3}

    def test_duplicate_positives_count_once(self):
        rng = derive_rng(0, "negatives", 1, 0, 1)
        negatives = sample_negatives(1, np.array([1, 1, 2]), np.arange(1, 6), 2, rng)
        assert len(negatives) == 4

    def test_zero_ratio(self):
        rng = derive_rng(0, "negatives", 1, 0, 1)
        assert sample_negatives(1, {1}, {1, 2}, 0, rng).size == 0

    def test_no_candidates(self):
        rng = derive_rng(0, "negatives", 1, 0, 1)
        with pytest.raises(FCRecValidationError, match="žádní kandidáti"):
            sample_negatives(1, {1, 2}, {1, 2}, 4, rng)

    def test_deterministic_per_stream(self):
        a = sample_negatives(1, {1}, set(range(50)), 4, derive_rng(3, "negatives", 1, 2, 3))
        b = sample_negatives(1, {1}, set(range(50)), 4, derive_rng(3, "negatives", 1, 2, 3))
        np.testing.assert_array_equal(a, b)

    def test_uniform_over_candidates(self):
        rng = derive_rng(0, "negatives", 5, 0, 1)
        negatives = sample_negatives(5, np.array([0]), np.arange(5), 20_000, rng)
        counts = np.bincount(negatives, minlength=5)
        assert counts[0] == 0
        assert np.all(np.abs(counts[1:] / 20_000 - 0.25) < 0.02)


# === Statistiky a manifest ===


class TestBlockManifest:
    """Testy statistik a manifestu bloků."""

    def test_stats(self, blocks):
        stats = block_stats(blocks[0])
        assert stats.interactions == stats.train + stats.valid + stats.test
        assert stats.accumulated_items == len(blocks[0].items)
        assert 0.0 <= stats.sparsity <= 1.0

    def test_manifest_files(self, blocks, tmp_path):
        write_block_manifest(blocks, tmp_path)
        manifest = pd.read_csv(tmp_path / "blocks.tsv", sep="\t")
        assert manifest["block"].tolist() == [0, 1, 2]
        splits = pd.read_csv(tmp_path / "splits.tsv", sep="\t")
        assert len(splits) == sum(len(b.interactions) for b in blocks)
        assert set(splits["split"]) == {"train", "valid", "test"}

    def test_prepare_without_dataset(self, make_config, monkeypatch):
        monkeypatch.delenv("FCREC_DATA_PATH", raising=False)
        with pytest.raises(FCRecDataError, match="cesta k datasetu"):
            prepare_blocks(make_config(dataset_path=None))

    def test_base_block_left_unsplit(self, make_config):
        blocks = prepare_blocks(make_config(split_base_block=False))
        assert not blocks[0].is_split
        assert blocks[1].is_split
