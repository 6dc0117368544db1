"""
Akceptační testy na MovieLens 100K.

Datová pipeline (počty interakcí, uživatelů a položek v blocích) a směr
výsledků při desk-scale běhu (d=32, R=40, E=1, plná účast, seedy 0..2).

Vyžaduje soubor u.data; cesta v FCREC_ML100K_PATH. Spuštění:
    FCREC_ML100K_PATH=data/ml-100k/u.data pytest -m integration
"""

import os
from pathlib import Path

import numpy as np
import pytest

from fcrec_sim.config import build_config
from fcrec_sim.data_pipeline import prepare_blocks
from fcrec_sim.experiment import ExperimentResult, run_experiment

ML100K_PATH = os.getenv("FCREC_ML100K_PATH")
SEEDS = (0, 1, 2)

pytestmark = [
    pytest.mark.integration,
    pytest.mark.skipif(
        not ML100K_PATH or not Path(ML100K_PATH).is_file(),
        reason="FCREC_ML100K_PATH nenastaven nebo soubor neexistuje",
    ),
]


def _config(**overrides):
    values = {
        "preset": "ml-100k",
        "dataset_path": ML100K_PATH,
        "n_incremental": 3,
        "dim": 32,
        "rounds": 40,
        "local_epochs": 1,
        "client_fraction": 1.0,
        "seed": 0,
    }
    values.update(overrides)
    return build_config(values)


@pytest.fixture(scope="module")
def ml100k_blocks():
    return prepare_blocks(_config())


@pytest.fixture(scope="module")
def run():
    """Cache běhů (metoda, šum) × seed; každá kombinace se trénuje jednou."""
    blocks: dict[int, list] = {}
    results: dict[tuple[str, float, int], ExperimentResult] = {}

    def factory(method: str, seed: int, noise: float = 0.0) -> ExperimentResult:
        key = (method, noise, seed)
        if key not in results:
            config = _config(method=method, seed=seed, noise=noise)
            if seed not in blocks:
                blocks[seed] = prepare_blocks(config)
            results[key] = run_experiment(config, blocks=blocks[seed], write=False)
        return results[key]

    return factory


def _avg_ndcg(run, method: str, noise: float = 0.0) -> float:
    return float(np.mean([run(method, seed, noise).summary.avg_ndcg for seed in SEEDS]))


# === Datová pipeline ===


def test_block_interaction_counts(ml100k_blocks):
    assert [len(b.interactions) for b in ml100k_blocks] == [58771, 13060, 13060, 13062]


@pytest.mark.parametrize("block,expected", [(0, 587), (1, 697), (2, 827), (3, 943)])
def test_accumulated_users(ml100k_blocks, block, expected):
    assert len(ml100k_blocks[block].accumulated_users) == pytest.approx(expected, rel=0.02)


@pytest.mark.parametrize("block,expected", [(0, 1136), (1, 1146), (3, 1152)])
def test_accumulated_items(ml100k_blocks, block, expected):
    assert len(ml100k_blocks[block].items) == pytest.approx(expected, rel=0.02)


def test_splits_cover_blocks(ml100k_blocks):
    for block in ml100k_blocks:
        assert len(block.train) + len(block.valid) + len(block.test) == len(block.interactions)
        assert len(block.test) > 0


# === Výsledky experimentů ===


def test_f3crec_improves_over_fine_tuning(run):
    f3crec = _avg_ndcg(run, "f3crec")
    ft = _avg_ndcg(run, "ft")
    assert f3crec >= 1.05 * ft
    assert 0.06 <= f3crec <= 0.14


@pytest.mark.parametrize("ablation", ["f3crec_wo_arm", "f3crec_wo_itm"])
def test_ablation_does_not_beat_full_method(run, ablation):
    assert _avg_ndcg(run, "f3crec") >= _avg_ndcg(run, ablation)


def test_static_users_degrade_less(run):
    rates: dict[str, list[float]] = {"static": [], "dynamic": []}
    for seed in SEEDS:
        for a in run("f3crec", seed).analyses:
            if a.analysis == "degradation_rate" and a.segment in rates:
                rates[a.segment].append(a.value)
    assert len(rates["static"]) == len(rates["dynamic"]) == len(SEEDS)
    assert np.mean(rates["static"]) < np.mean(rates["dynamic"])


def test_noise_degradation_is_bounded(run):
    clean = _avg_ndcg(run, "f3crec")
    noisy = _avg_ndcg(run, "f3crec", noise=0.3)
    assert (clean - noisy) / clean <= 0.25
