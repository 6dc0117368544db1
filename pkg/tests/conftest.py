"""Sdílené fixtures: syntetický log interakcí, bloky a malá konfigurace."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fcrec_sim.config import ExperimentConfig, build_config
from fcrec_sim.data_pipeline import DataBlock, prepare_blocks

N_USERS = 12
N_ITEMS = 30
N_ROWS = 420


def make_interactions(
    n_users: int = N_USERS, n_items: int = N_ITEMS, n_rows: int = N_ROWS, seed: int = 7
) -> pd.DataFrame:
    """Chronologický log (user, item, rating, timestamp) bez duplicit."""
    rng = np.random.default_rng(seed)
    df = pd.DataFrame(
        {
            "user": rng.integers(1, n_users + 1, size=n_rows),
            "item": rng.integers(1, n_items + 1, size=n_rows),
            "rating": rng.integers(1, 6, size=n_rows),
            "timestamp": 1_000_000 + np.arange(n_rows) * 60,
        }
    )
    return df.drop_duplicates(subset=["user", "item"]).reset_index(drop=True)


def write_interactions(df: pd.DataFrame, path: Path, sep: str = "\t") -> Path:
    df.to_csv(path, sep=sep, header=False, index=False)
    return path


@pytest.fixture
def interactions_df():
    """Syntetický log: 12 uživatelů, 30 položek."""
    return make_interactions()


@pytest.fixture
def dataset_file(tmp_path, interactions_df):
    """Log interakcí ve formátu ml-100k (tab, bez hlavičky)."""
    return write_interactions(interactions_df, tmp_path / "u.data")


@pytest.fixture
def make_config(tmp_path, dataset_file):
    """Továrna na malou rychlou konfiguraci (přepisy přes kwargs)."""

    def factory(**overrides) -> ExperimentConfig:
        values = {
            "dataset_path": dataset_file,
            "dataset_name": "synthetic",
            "min_user_interactions": 1,
            "min_item_interactions": 1,
            "base_fraction": 0.6,
            "n_incremental": 2,
            "dim": 8,
            "init_scale": 0.1,
            "top_n": 5,
            "lr": 0.5,
            "rounds": 3,
            "batch_size": 16,
            "negative_ratio": 2,
            "eval_k": 5,
            "seed": 0,
            "output_dir": tmp_path / "out",
        }
        values.update(overrides)
        return build_config(values)

    return factory


@pytest.fixture
def small_config(make_config):
    return make_config()


@pytest.fixture
def blocks(small_config) -> list[DataBlock]:
    """Rozsplitované bloky syntetického logu (base + 2 inkrementální)."""
    return prepare_blocks(small_config)
