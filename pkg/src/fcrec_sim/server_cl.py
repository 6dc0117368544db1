"""
Server-side kontinuální učení a orchestrace kol.

Implementuje:
- Výběr klientů pro kolo
- Pre-agregaci nahraných tabulek (nevážený průměr)
- Knowledge shift φ a retenční váhu γ = β/(1+φ)
- Item-wise temporal mean s nulovým paddingem nových položek
- Přechod mezi bloky (zmrazení Q_gᵗ⁻¹, nové položky a uživatelé)
"""

import logging
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from fcrec_sim.backbone import Backbone, ItemTable
from fcrec_sim.client_cl import ClientRegistry, ClientUpload
from fcrec_sim.config import ExperimentConfig, ServerRetention
from fcrec_sim.data_pipeline import DataBlock
from fcrec_sim.exceptions import (
    FCRecAggregationError,
    FCRecDivergenceError,
    FCRecValidationError,
)
from fcrec_sim.models import ClientLossSummary, RoundReport
from fcrec_sim.seeding import derive_rng

logger = logging.getLogger(__name__)


# === Domain types ===


@dataclass
class GlobalState:
    """
    Stav serveru.

    Attributes:
        q_current: Q_gᵗ·ʳ (řádky v pořadí registru položek ℐᵗ)
        q_prev_block: Q_gᵗ⁻¹ zmrazená na hranici bloku (None v bloku 0)
        block: Index bloku t
        round: Počet dokončených kol v bloku
        active_users: Uživatelé s train daty v bloku t
        trained_users: Uživatelé, kteří v bloku t úspěšně odeslali upload
        last_phi: φ starých položek z posledního kola (None v bloku 0)
    """

    q_current: ItemTable
    q_prev_block: ItemTable | None = None
    block: int = 0
    round: int = 0
    active_users: frozenset[int] = field(default_factory=frozenset)
    trained_users: frozenset[int] = field(default_factory=frozenset)
    last_phi: np.ndarray | None = None

    @property
    def item_registry(self) -> np.ndarray:
        """ℐᵗ v pořadí vložení."""
        return self.q_current.item_ids


# === Výběr klientů a agregace ===


def sample_clients(users: Iterable[int], fraction: float, rng: np.random.Generator) -> list[int]:
    """
    Uniformní výběr bez opakování velikosti max(1, ⌊fraction·|U|⌋), seřazený.

    Raises:
        FCRecValidationError: Prázdná množina uživatelů nebo fraction mimo (0,1]
    """
    pool = np.array(sorted({int(u) for u in users}), dtype=np.int64)
    if pool.size == 0:
        raise FCRecValidationError("Prázdná množina uživatelů pro výběr klientů")
    if not 0.0 < fraction <= 1.0:
        raise FCRecValidationError(f"fraction musí být v (0,1] (zadáno: {fraction})")
    size = max(1, int(fraction * pool.size))
    if size >= pool.size:
        return [int(u) for u in pool]
    picked = rng.choice(pool, size=size, replace=False)
    return sorted(int(u) for u in picked)


def pre_aggregate(uploads: Iterable[ItemTable]) -> ItemTable:
    """
    Q_g′ = průměr nahraných tabulek po prvcích (stejná váha pro každého klienta).

    Tabulky se sčítají průběžně, takže stačí libovolný iterátor.

    Raises:
        FCRecAggregationError: Prázdný seznam nebo nesoulad indexu položek
    """
    total: np.ndarray | None = None
    reference: ItemTable | None = None
    count = 0
    for table in uploads:
        if reference is None:
            reference = table
            total = table.rows.copy()
        else:
            if not reference.same_index(table) or reference.dim != table.dim:
                raise FCRecAggregationError("Nesoulad indexu položek mezi uploady")
            total += table.rows
        count += 1

    if reference is None or total is None:
        raise FCRecAggregationError("Žádné uploady k agregaci")
    return reference.with_rows(total / count)


# === Knowledge shift a retence ===


def _check_prefix(q_prev_block: ItemTable, q_pre: ItemTable) -> int:
    n_old = len(q_prev_block)
    if q_prev_block.dim != q_pre.dim:
        raise FCRecValidationError(
            f"Nesoulad dimenzí: {q_prev_block.dim} vs {q_pre.dim}"
        )
    if n_old > len(q_pre) or not np.array_equal(q_pre.item_ids[:n_old], q_prev_block.item_ids):
        raise FCRecAggregationError("Tabulka předchozího bloku není prefixem aktuální tabulky")
    return n_old


def knowledge_shift(q_prev_block: ItemTable, q_pre: ItemTable, item: int) -> float:
    """
    φᵢ = ‖Q_{g,i}ᵗ⁻¹ − Q_{g′,i}‖² / √d.

    Raises:
        FCRecValidationError: Položka není v ℐᵗ⁻¹ (nové položky se neměří)
    """
    if item not in q_prev_block.index:
        raise FCRecValidationError(f"Položka {item} není v předchozím bloku")
    diff = q_prev_block.row(item) - q_pre.row(item)
    return float(np.dot(diff, diff) / np.sqrt(q_pre.dim))


def knowledge_shifts(q_prev_block: ItemTable, q_pre: ItemTable) -> np.ndarray:
    """φ pro všechny staré položky (v pořadí registru)."""
    n_old = _check_prefix(q_prev_block, q_pre)
    diff = q_prev_block.rows - q_pre.rows[:n_old]
    return np.einsum("ij,ij->i", diff, diff) / np.sqrt(q_pre.dim)


def _checked_beta(beta: float) -> float:
    if not 0.0 <= beta < 1.0:
        raise FCRecValidationError(f"beta musí být v [0,1) (zadáno: {beta})")
    return beta


def retention_weight(phi: np.ndarray | float, beta: float) -> np.ndarray | float:
    """γ = β / (1 + φ)."""
    _checked_beta(beta)
    if np.any(np.asarray(phi) < 0):
        raise FCRecValidationError("φ musí být ≥ 0")
    return beta / (1.0 + phi)


def retention_vector(
    q_pre: ItemTable,
    q_prev_block: ItemTable,
    beta: float,
    mode: ServerRetention = "itemwise",
) -> tuple[np.ndarray, np.ndarray]:
    """
    γ pro celou tabulku: staré položky podle módu, nové položky 0 (nulový padding).

    Returns:
        (γ délky |ℐᵗ|, φ délky |ℐᵗ⁻¹|)
    """
    phi = knowledge_shifts(q_prev_block, q_pre)
    gamma = np.zeros(len(q_pre))
    if mode == "itemwise":
        gamma[: len(phi)] = retention_weight(phi, beta)
    elif mode == "uniform":
        gamma[: len(phi)] = _checked_beta(beta)
    return gamma, phi


def _blend(q_pre: ItemTable, q_prev_block: ItemTable, gamma: np.ndarray) -> ItemTable:
    padded = np.zeros_like(q_pre.rows)
    padded[: len(q_prev_block)] = q_prev_block.rows
    g = gamma[:, None]
    return q_pre.with_rows((1.0 - g) * q_pre.rows + g * padded)


def temporal_mean(
    q_pre: ItemTable,
    q_prev_block: ItemTable,
    beta: float,
    mode: ServerRetention = "itemwise",
) -> ItemTable:
    """
    (1−γ)⊙Q_g′ + γ⊙ZeroPad(Q_gᵗ⁻¹) po řádcích.

    Raises:
        FCRecValidationError: Nesoulad dimenzí
    """
    if mode == "none":
        return q_pre.copy()
    gamma, _ = retention_vector(q_pre, q_prev_block, beta, mode)
    return _blend(q_pre, q_prev_block, gamma)


# === Kolo a blok ===


def _dispatch(
    registry: ClientRegistry,
    sampled: list[int],
    state: GlobalState,
    round_index: int,
    workers: int,
) -> Iterator[ClientUpload | FCRecDivergenceError]:
    def work(user: int) -> ClientUpload | FCRecDivergenceError:
        try:
            return registry.train(
                user, state.q_current, state.block, round_index, state.q_prev_block
            )
        except FCRecDivergenceError as e:
            return e

    if workers <= 1:
        for user in sampled:
            yield work(user)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(work, sampled)


def run_round(
    state: GlobalState, registry: ClientRegistry, config: ExperimentConfig
) -> tuple[GlobalState, RoundReport]:
    """
    Jedno kolo federovaného tréninku.

    Vybere klienty, rozešle Q_g, nahrané tabulky průběžně pre-agreguje;
    v bloku 0 nastaví Q_g ← Q_g′, jinak aplikuje temporal mean podle profilu
    metody. Divergující klienti se v kole přeskočí.

    Raises:
        FCRecAggregationError: Všichni vybraní klienti selhali
    """
    round_index = state.round + 1
    rng = derive_rng(config.seed, "sampling", state.block, round_index)
    sampled = sample_clients(state.active_users, config.client_fraction, rng)

    summaries: list[ClientLossSummary] = []
    trained: set[int] = set()
    failed = 0

    def tables() -> Iterator[ItemTable]:
        nonlocal failed
        for result in _dispatch(registry, sampled, state, round_index, config.workers):
            if isinstance(result, FCRecDivergenceError):
                failed += 1
                logger.warning(f"  ✗ klient {result.user} divergoval, v kole přeskočen: {result}")
                continue
            summaries.append(result.summary)
            trained.add(result.user)
            yield result.table

    try:
        q_pre = pre_aggregate(tables())
    except FCRecAggregationError as e:
        if not summaries:
            raise FCRecAggregationError(
                f"Blok {state.block}, kolo {round_index}: všichni vybraní klienti selhali"
            ) from e
        raise

    retention = config.profile.server_retention
    phi: np.ndarray | None = None
    gamma_mean = 0.0
    if state.block == 0 or state.q_prev_block is None:
        q_next = q_pre
    else:
        gamma, phi = retention_vector(q_pre, state.q_prev_block, config.beta, retention)
        if retention == "none" or config.beta == 0.0:
            q_next = q_pre
        else:
            q_next = _blend(q_pre, state.q_prev_block, gamma)
            gamma_mean = float(gamma[: len(phi)].mean()) if len(phi) else 0.0

    report = RoundReport(
        block=state.block,
        round=round_index,
        participating_users=len(sampled),
        failed_users=failed,
        mean_phi=float(phi.mean()) if phi is not None and len(phi) else 0.0,
        mean_gamma=gamma_mean,
        mean_loss=float(np.mean([s.rec_loss + s.kd_loss for s in summaries])),
        clients=summaries,
    )
    logger.debug(
        f"Blok {report.block} kolo {report.round}: {report.participating_users} klientů, "
        f"φ={report.mean_phi:.5f}, γ={report.mean_gamma:.4f}, loss={report.mean_loss:.4f}"
    )

    new_state = replace(
        state,
        q_current=q_next,
        round=round_index,
        trained_users=state.trained_users | trained,
        last_phi=phi,
    )
    return new_state, report


def init_global(
    first_block: DataBlock, registry: ClientRegistry, backbone: Backbone, seed: int
) -> GlobalState:
    """Inicializuj Q_g⁰ a klienty bloku 0."""
    items = sorted(first_block.items)
    rows = backbone.init_item_rows(derive_rng(seed, "init", 0, first_block.index), len(items))
    registry.register(first_block.users)
    active = registry.load_block(first_block)
    logger.info(f"Inicializace: {len(items)} položek, {len(active)} aktivních klientů")
    return GlobalState(
        q_current=ItemTable(np.array(items, dtype=np.int64), rows),
        block=first_block.index,
        active_users=frozenset(active),
    )


def advance_block(
    state: GlobalState,
    next_block: DataBlock,
    registry: ClientRegistry,
    backbone: Backbone,
    seed: int,
) -> GlobalState:
    """
    Přechod z bloku t na t+1.

    Klienti, kteří v bloku t alespoň jednou trénovali, uloží znalost (top-N,
    skóre učitele). Ostatní o ni přijdou, protože jejich Φᵤ se v bloku
    nezměnil. Q_g se zmrazí jako Q_gᵗ⁻¹, nové položky dostanou čerstvé
    řádky a noví uživatelé čerstvé Φᵤ.
    """
    registry.finalize(state.trained_users, state.q_current)

    known = set(state.item_registry.tolist())
    new_items = [i for i in next_block.new_items if i not in known]
    rows = backbone.init_item_rows(derive_rng(seed, "init", 0, next_block.index), len(new_items))
    q_prev_block = state.q_current.copy()
    q_current = state.q_current.append(new_items, rows)

    registry.register(next_block.users)
    active = registry.load_block(next_block)
    logger.info(
        f"Blok {next_block.index}: +{len(new_items)} položek (celkem {len(q_current)}), "
        f"{len(active)} aktivních klientů"
    )
    return GlobalState(
        q_current=q_current,
        q_prev_block=q_prev_block,
        block=next_block.index,
        round=0,
        active_users=frozenset(active),
    )
