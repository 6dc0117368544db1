"""
Full-ranking evaluace a analýzy zapomínání.

- Recall@k, NDCG@k (binární relevance)
- Full-ranking evaluace přes ℐᵗ s vyřazením akumulovaných train(+valid) položek
- Degradation rate a segmentace uživatelů podle preference shiftu
- Ranking change rate položek
"""

import logging
import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from typing import TypeVar

import numpy as np

from fcrec_sim.backbone import ItemTable, rank_positions
from fcrec_sim.client_cl import ClientRegistry
from fcrec_sim.data_pipeline import DataBlock
from fcrec_sim.exceptions import FCRecValidationError
from fcrec_sim.models import EvalResult

logger = logging.getLogger(__name__)

K = TypeVar("K", bound=Hashable)


# === Metriky ===


def _check(relevant: set[int] | frozenset[int], k: int) -> None:
    if k < 1:
        raise FCRecValidationError(f"k musí být ≥ 1 (zadáno: {k})")
    if not relevant:
        raise FCRecValidationError("Prázdná množina relevantních položek")


def recall_at_k(ranked: Sequence[int], relevant: set[int] | frozenset[int], k: int) -> float:
    """|top-k ∩ relevant| / |relevant|."""
    _check(relevant, k)
    hits = sum(1 for item in ranked[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant: set[int] | frozenset[int], k: int) -> float:
    """DCG@k / IDCG@k s gainem 1/log₂(pozice+1)."""
    _check(relevant, k)
    dcg = sum(
        1.0 / math.log2(pos + 1)
        for pos, item in enumerate(ranked[:k], start=1)
        if item in relevant
    )
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


# === Full-ranking evaluace ===


def accumulate_exclusions(
    blocks: Iterable[DataBlock], include_valid: bool = True
) -> dict[int, set[int]]:
    """Train (a volitelně valid) pozitiva uživatelů přes zadané bloky."""
    exclusions: dict[int, set[int]] = {}
    for block in blocks:
        groups = [block.train_by_user]
        if include_valid:
            groups.append(block.valid_by_user)
        for by_user in groups:
            for user, items in by_user.items():
                exclusions.setdefault(user, set()).update(int(i) for i in items)
    return exclusions


def rank_candidates(
    scores: np.ndarray, item_ids: np.ndarray, exclude: Iterable[int] | None, k: int
) -> list[int]:
    """Top-k položek podle (−score, id) mimo vyřazené."""
    order = np.lexsort((item_ids, -scores))
    ranked = item_ids[order]
    if exclude:
        ranked = ranked[~np.isin(ranked, np.fromiter(exclude, dtype=np.int64))]
    return [int(i) for i in ranked[:k]]


def _score_users(
    registry: ClientRegistry,
    table: ItemTable,
    relevant_by_user: Mapping[int, Iterable[int]],
    exclusions: Mapping[int, set[int]],
    k: int,
) -> tuple[dict[int, tuple[float, float]], int]:
    candidates = set(int(i) for i in table.item_ids)
    results: dict[int, tuple[float, float]] = {}
    skipped = 0
    for user in sorted(relevant_by_user):
        if user not in registry:
            skipped += 1
            continue
        excluded = exclusions.get(user, set())
        relevant = {int(i) for i in relevant_by_user[user]} & (candidates - excluded)
        if not relevant:
            continue
        ranked = rank_candidates(registry.scores(user, table), table.item_ids, excluded, k)
        results[user] = (ndcg_at_k(ranked, relevant, k), recall_at_k(ranked, relevant, k))
    if skipped:
        logger.warning(f"Evaluace: {skipped} neregistrovaných uživatelů přeskočeno")
    return results, skipped


def per_user_metrics(
    registry: ClientRegistry,
    table: ItemTable,
    relevant_by_user: Mapping[int, Iterable[int]],
    exclusions: Mapping[int, set[int]],
    k: int,
) -> dict[int, tuple[float, float]]:
    """
    (NDCG@k, Recall@k) pro každého uživatele s relevantními položkami.

    Relevantní položky mimo kandidátní množinu (vyřazené nebo mimo tabulku)
    se nepočítají; uživatel bez zbylých relevantních položek se přeskočí.
    """
    return _score_users(registry, table, relevant_by_user, exclusions, k)[0]


def full_ranking_eval(
    registry: ClientRegistry,
    table: ItemTable,
    block: DataBlock,
    exclusions: Mapping[int, set[int]],
    k: int = 20,
    split: str = "test",
) -> list[EvalResult]:
    """
    Full-ranking evaluace bloku: NDCG@k a Recall@k průměrované přes uživatele.

    Args:
        registry: Klienti (skórují lokálně svými Φᵤ)
        table: Globální tabulka položek ℐᵗ
        block: Blok s test (nebo valid) daty
        exclusions: Akumulovaná pozitiva k vyřazení z rankingu
        k: Délka seznamu
        split: "test" nebo "valid"

    Returns:
        [ndcg@k, recall@k] nebo prázdný seznam, pokud blok nemá evaluovatelné uživatele
    """
    relevant = block.test_by_user if split == "test" else block.valid_by_user
    per_user, skipped = _score_users(registry, table, relevant, exclusions, k)
    if not per_user:
        return []
    values = np.array([per_user[u] for u in sorted(per_user)])
    count = len(per_user)
    return [
        EvalResult(
            block=block.index,
            metric=f"ndcg@{k}",
            value=float(values[:, 0].mean()),
            user_count=count,
            skipped_users=skipped,
        ),
        EvalResult(
            block=block.index,
            metric=f"recall@{k}",
            value=float(values[:, 1].mean()),
            user_count=count,
            skipped_users=skipped,
        ),
    ]


# === Analýzy ===


def degradation_rate(a_prev: float, a_now: float) -> float:
    """(a_prev − a_now) / a_prev."""
    if a_prev <= 0:
        raise FCRecValidationError(f"Degradation rate vyžaduje a_prev > 0 (zadáno: {a_prev})")
    return (a_prev - a_now) / a_prev


def segment_by_quantile(
    values: Mapping[K, float], quantile: float = 0.2
) -> tuple[list[K], list[K]]:
    """
    Spodní a horní kvantil klíčů podle hodnoty (shoda → nižší klíč).

    Velikost segmentu je ⌊quantile·n⌋, minimálně 1, nejvýše n // 2.
    """
    if not values:
        raise FCRecValidationError("Prázdná mapa hodnot pro segmentaci")
    if not 0.0 < quantile <= 0.5:
        raise FCRecValidationError(f"quantile musí být v (0, 0.5] (zadáno: {quantile})")
    n = len(values)
    size = min(max(1, int(quantile * n)), max(1, n // 2))
    ascending = sorted(values, key=lambda key: (values[key], key))  # type: ignore[type-var]
    descending = sorted(values, key=lambda key: (-values[key], key))  # type: ignore[type-var]
    low = ascending[:size]
    taken = set(low)
    high = [key for key in descending if key not in taken][:size]
    return low, high


def segment_users_by_shift(
    shifts: Mapping[int, int], quantile: float = 0.2
) -> tuple[list[int], list[int]]:
    """(static, dynamic): spodní a horní kvantil uživatelů podle Δ."""
    return segment_by_quantile({u: float(d) for u, d in shifts.items()}, quantile)


def item_ranking_change_rate(
    rank_prev: np.ndarray | Sequence[int], rank_now: np.ndarray | Sequence[int]
) -> float:
    """
    Průměr |r_prev − r_now| / r_prev přes zadanou populaci.

    Raises:
        FCRecValidationError: Prázdná populace nebo pořadí < 1
    """
    prev = np.asarray(rank_prev, dtype=np.float64)
    now = np.asarray(rank_now, dtype=np.float64)
    if prev.size == 0:
        raise FCRecValidationError("Prázdná populace pro ranking change rate")
    if prev.shape != now.shape:
        raise FCRecValidationError("Nesoulad tvarů pořadí")
    if np.any(prev < 1):
        raise FCRecValidationError("Pořadí musí být ≥ 1")
    return float(np.mean(np.abs(prev - now) / prev))


def user_item_ranks(
    registry: ClientRegistry, users: Iterable[int], table: ItemTable
) -> dict[int, np.ndarray]:
    """Pořadí každé položky tabulky pro každého uživatele (řádky dle registru)."""
    return {
        user: rank_positions(registry.scores(user, table), table.item_ids)
        for user in sorted(users)
        if user in registry
    }
