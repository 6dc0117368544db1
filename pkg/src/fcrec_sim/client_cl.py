"""
Client-side kontinuální učení.

Implementuje:
- Měření preference shiftu Δ z posunu pořadí předchozího top-N seznamu
- Consistency sampling rate δ = exp(−εΔ) a adaptivní replay paměť M
- Distilační loss (učitel = model z předchozího bloku)
- Lokální trénink klienta (Rec + λ·KD, volitelně Reg baseline)
- Laplaceův šum na přenášenou tabulku položek

Privátní hranice: Φᵤ a lokální data čte pouze tento modul. Server dostává
jen `ClientUpload` (tabulka položek + skalární souhrn loss).
"""

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from fcrec_sim.backbone import (
    Backbone,
    ItemTable,
    PrivateParams,
    bce_loss,
    gradients,
    logits,
    rank_positions,
    score,
    score_all,
    sigmoid,
    top_n,
)
from fcrec_sim.config import ExperimentConfig
from fcrec_sim.data_pipeline import DataBlock, sample_negatives
from fcrec_sim.exceptions import FCRecDivergenceError, FCRecValidationError
from fcrec_sim.models import ClientLossSummary
from fcrec_sim.seeding import derive_rng

logger = logging.getLogger(__name__)


# === Domain types ===


@dataclass(frozen=True)
class RetainedKnowledge:
    """
    Znalost uchovaná z konce předchozího bloku.

    Attributes:
        top_items: Sᵤᵗ⁻¹ seřazený sestupně (pozice k = 1..N)
        teacher_scores: ŷᵗ⁻¹ pro položky v top_items (zmrazené během bloku)
        prev_ranks: rᵗ⁻¹(i) = pozice v top_items
        phi_anchor: Φᵤᵗ⁻¹ pro Reg baseline
    """

    top_items: tuple[int, ...]
    teacher_scores: dict[int, float]
    prev_ranks: dict[int, int]
    phi_anchor: PrivateParams | None = None


@dataclass
class ClientState:
    """Stav jednoho klienta (vlastněn výhradně klientem)."""

    user: int
    phi: PrivateParams
    retained: RetainedKnowledge | None = None
    train_items: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class ClientUpload:
    """Payload posílaný na server: pouze tabulka položek a skalární souhrn."""

    user: int
    table: ItemTable
    summary: ClientLossSummary


# === Preference shift a replay paměť ===


def _shift(
    phi: PrivateParams, rows: np.ndarray, item_ids: np.ndarray, top_positions: np.ndarray
) -> int:
    ranks = rank_positions(sigmoid(logits(phi, rows)), item_ids)
    expected = np.arange(1, len(top_positions) + 1)
    return int(np.abs(ranks[top_positions] - expected).sum())


def preference_shift(state: ClientState, q: ItemTable) -> int:
    """
    Δ = Σₖ |r_now(i_k) − k| přes celou akumulovanou množinu položek ℐᵗ.

    Raises:
        FCRecValidationError: Klient nemá uchovanou znalost
    """
    if state.retained is None or not state.retained.top_items:
        raise FCRecValidationError(f"Uživatel {state.user}: chybí uchovaný top-N seznam")
    positions = q.positions(state.retained.top_items)
    return _shift(state.phi, q.rows, q.item_ids, positions)


def sampling_rate(delta: int | float, eps: float) -> float:
    """δ = exp(−ε·Δ)."""
    if delta < 0 or eps < 0:
        raise FCRecValidationError(f"Δ a ε musí být ≥ 0 (zadáno: Δ={delta}, ε={eps})")
    return math.exp(-eps * delta)


def build_replay_memory(
    retained: RetainedKnowledge, delta_rate: float, rng: np.random.Generator
) -> tuple[int, ...]:
    """
    M = SWOR(S, ⌊δ·|S|⌋), seřazené podle id.

    Raises:
        FCRecValidationError: δ mimo [0, 1]
    """
    if not 0.0 <= delta_rate <= 1.0:
        raise FCRecValidationError(f"Sampling rate musí být v [0, 1] (zadáno: {delta_rate})")
    size = math.floor(delta_rate * len(retained.top_items))
    if size == 0:
        return ()
    picked = rng.choice(np.asarray(retained.top_items, dtype=np.int64), size=size, replace=False)
    return tuple(sorted(int(i) for i in picked))


# === Loss členy ===


@dataclass
class LossTerm:
    """Hodnota loss a gradienty vůči Φ a vybraným řádkům tabulky."""

    loss: float
    grad_phi: PrivateParams | None
    positions: np.ndarray
    grad_rows: np.ndarray


def _bce_term(
    phi: PrivateParams,
    rows: np.ndarray,
    positions: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
) -> LossTerm:
    q = rows[positions]
    preds = sigmoid(logits(phi, q))
    loss = float(np.sum(weights * bce_loss(preds, labels)))
    grad_phi, grad_rows = gradients(phi, q, weights * (preds - labels))
    return LossTerm(loss, grad_phi, positions, grad_rows)


def _teacher_targets(retained: RetainedKnowledge, memory: Iterable[int]) -> np.ndarray:
    try:
        return np.array([retained.teacher_scores[int(i)] for i in memory], dtype=np.float64)
    except KeyError as e:
        raise FCRecValidationError(f"Položka {e.args[0]} z paměti nemá skóre učitele") from e


def kd_loss(state: ClientState, q: ItemTable, memory: Iterable[int]) -> LossTerm:
    """
    Σ_{i∈M} BCE(ŷᵗ⁻¹ᵢ, ŷᵢ): soft labely učitele, student = aktuální (Φ, q).

    Raises:
        FCRecValidationError: Položka paměti bez skóre učitele
    """
    items = list(memory)
    if not items:
        return LossTerm(0.0, None, np.empty(0, dtype=np.int64), np.empty((0, q.dim)))
    if state.retained is None:
        raise FCRecValidationError(f"Uživatel {state.user}: chybí skóre učitele")
    targets = _teacher_targets(state.retained, items)
    return _bce_term(state.phi, q.rows, q.positions(items), targets, np.ones(len(items)))


def _reg_term(
    phi: PrivateParams,
    anchor_phi: PrivateParams,
    rows: np.ndarray,
    anchor_rows: np.ndarray,
    positions: np.ndarray,
    mu: float,
) -> LossTerm:
    """μ‖Φ − Φᵗ⁻¹‖² + μ‖Q[pos] − Qᵗ⁻¹[pos]‖² pro staré položky v batchi."""
    diff_phi = phi.axpy(anchor_phi, -1.0)
    diff_rows = rows[positions] - anchor_rows[positions]
    loss = mu * (sum(float(np.sum(a * a)) for a in diff_phi.arrays()) + float(np.sum(diff_rows**2)))
    grad_phi = PrivateParams.from_arrays([2.0 * mu * a for a in diff_phi.arrays()])
    return LossTerm(loss, grad_phi, positions, 2.0 * mu * diff_rows)


# === Lokální trénink ===


def client_update(
    state: ClientState,
    q_global: ItemTable,
    block: int,
    round_index: int,
    config: ExperimentConfig,
    q_anchor: ItemTable | None = None,
) -> ClientUpload:
    """
    Lokální trénink jednoho klienta v kole.

    Kopíruje Q_g do Q_u, projde E epoch přes train pozitiva + negativní vzorky
    v batchích a na každý batch aplikuje SGD na ℒ_Rec + λ_KD·ℒ_KD (Reg baseline
    navíc μ‖θ − θᵗ⁻¹‖²). Replay paměť se staví z aktuálního Δ každý batch
    (nebo jednou za epochu podle `shift_every`). Φᵤ zůstává u klienta.

    Args:
        state: Stav klienta (Φ se aktualizuje pouze při úspěchu)
        q_global: Aktuální globální tabulka (jen ke čtení)
        block: Index bloku t
        round_index: Index kola r (1-based)
        config: Konfigurace experimentu
        q_anchor: Tabulka z konce předchozího bloku (pro Reg)

    Returns:
        ClientUpload s natrénovanou Q_u

    Raises:
        FCRecValidationError: Klient nemá lokální data
        FCRecDivergenceError: Nekonečná loss nebo parametry
    """
    user = state.user
    if state.train_items.size == 0:
        raise FCRecValidationError(f"Uživatel {user}: žádná trénovací data v bloku {block}")

    profile = config.profile
    retained = state.retained
    rng_neg = derive_rng(config.seed, "negatives", user, block, round_index)
    rng_mem = derive_rng(config.seed, "memory", user, block, round_index)

    kd_active = (
        profile.use_kd
        and config.lambda_kd > 0
        and block > 0
        and retained is not None
        and len(retained.top_items) > 0
    )
    reg_active = (
        profile.use_reg
        and config.mu_reg > 0
        and block > 0
        and retained is not None
        and retained.phi_anchor is not None
        and q_anchor is not None
    )

    phi = state.phi.copy()
    rows = q_global.rows.copy()
    item_ids = q_global.item_ids
    positives = state.train_items
    pos_positions = q_global.positions(positives)
    top_positions = q_global.positions(retained.top_items) if kd_active and retained else None
    n_old = len(q_anchor) if reg_active and q_anchor is not None else 0
    # Uživatel s pozitivy na celém ℐᵗ trénuje bez negativních vzorků
    has_negatives = np.setdiff1d(item_ids, positives).size > 0
    if not has_negatives:
        logger.debug(f"Uživatel {user}: pozitiva pokrývají všechny položky, bez negativů")

    memory: tuple[int, ...] = ()
    delta: int | None = None
    rec_losses: list[float] = []
    kd_losses: list[float] = []

    def refresh_memory() -> tuple[int, ...]:
        nonlocal delta
        assert retained is not None and top_positions is not None
        if not profile.adaptive_replay:
            return tuple(sorted(retained.top_items))
        delta = _shift(phi, rows, item_ids, top_positions)
        return build_replay_memory(retained, sampling_rate(delta, config.eps), rng_mem)

    for _epoch in range(config.local_epochs):
        negatives = (
            sample_negatives(user, positives, item_ids, config.negative_ratio, rng_neg)
            if has_negatives
            else np.empty(0, dtype=np.int64)
        )
        batch_positions = np.concatenate([pos_positions, q_global.positions(negatives)])
        batch_labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
        order = rng_neg.permutation(len(batch_positions))

        if kd_active and config.shift_every == "epoch":
            memory = refresh_memory()

        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if kd_active and config.shift_every == "batch":
                memory = refresh_memory()

            positions = batch_positions[idx]
            labels = batch_labels[idx]
            scale = 1.0 / len(idx) if config.loss_reduction == "mean" else 1.0
            terms = [_bce_term(phi, rows, positions, labels, np.full(len(idx), scale))]
            rec_losses.append(terms[0].loss)

            if kd_active and memory:
                assert retained is not None
                mem_positions = q_global.positions(memory)
                kd = _bce_term(
                    phi,
                    rows,
                    mem_positions,
                    _teacher_targets(retained, memory),
                    np.full(len(memory), config.lambda_kd),
                )
                kd_losses.append(kd.loss / config.lambda_kd)
                terms.append(kd)

            if reg_active:
                assert retained is not None and retained.phi_anchor is not None
                assert q_anchor is not None
                old = np.unique(positions[positions < n_old])
                terms.append(
                    _reg_term(phi, retained.phi_anchor, rows, q_anchor.rows, old, config.mu_reg)
                )

            phi = _apply_step(phi, rows, terms, config.lr, config.weight_decay, user)

    if not np.isfinite(rows).all():
        raise FCRecDivergenceError(f"Uživatel {user}: nekonečné embeddingy položek", user=user)

    state.phi = phi

    summary = ClientLossSummary(
        user=user,
        rec_loss=float(np.mean(rec_losses)) if rec_losses else 0.0,
        kd_loss=float(np.mean(kd_losses)) if kd_losses else 0.0,
        memory_size=len(memory),
        delta=delta,
    )
    return ClientUpload(user=user, table=q_global.with_rows(rows), summary=summary)


def _apply_step(
    phi: PrivateParams,
    rows: np.ndarray,
    terms: list[LossTerm],
    lr: float,
    weight_decay: float,
    user: int,
) -> PrivateParams:
    """SGD krok: Φ vrací nové, řádky tabulky mění na místě (jen dotčené)."""
    total = sum(t.loss for t in terms)
    if not math.isfinite(total):
        raise FCRecDivergenceError(f"Uživatel {user}: nekonečná loss ({total})", user=user)

    grad_phi: PrivateParams | None = None
    for t in terms:
        if t.grad_phi is None:
            continue
        grad_phi = t.grad_phi if grad_phi is None else grad_phi.axpy(t.grad_phi, 1.0)

    all_positions = np.concatenate([t.positions for t in terms])
    touched, inverse = np.unique(all_positions, return_inverse=True)
    grad_rows = np.zeros((len(touched), rows.shape[1]))
    np.add.at(grad_rows, inverse, np.vstack([t.grad_rows for t in terms]))

    if weight_decay > 0:
        grad_rows += weight_decay * rows[touched]
        decay = PrivateParams.from_arrays([weight_decay * a for a in phi.arrays()])
        grad_phi = decay if grad_phi is None else grad_phi.axpy(decay, 1.0)

    new_phi = phi.axpy(grad_phi, -lr) if grad_phi is not None else phi
    if not (new_phi.is_finite() and np.isfinite(grad_rows).all()):
        raise FCRecDivergenceError(f"Uživatel {user}: nekonečný gradient", user=user)
    rows[touched] -= lr * grad_rows
    return new_phi


# === Konec bloku ===


def finalize_block(
    state: ClientState,
    q_final: ItemTable,
    n: int,
    exclude: Iterable[int] | None = None,
) -> RetainedKnowledge:
    """
    Ulož top-N seznam, skóre učitele a poziční pořadí 1..N.

    Args:
        state: Klient po dokončení tréninku bloku
        q_final: Globální tabulka na konci bloku (ℐᵗ)
        n: Velikost seznamu N
        exclude: Volitelně vyřazené položky (výchozí: žádné)
    """
    top = top_n(state.phi, q_final, n, exclude)
    if top:
        scores = np.atleast_1d(score(state.phi, q_final.rows[q_final.positions(top)]))
    else:
        scores = np.empty(0)
    return RetainedKnowledge(
        top_items=tuple(top),
        teacher_scores={item: float(s) for item, s in zip(top, scores, strict=True)},
        prev_ranks={item: k for k, item in enumerate(top, start=1)},
        phi_anchor=state.phi.copy(),
    )


# === Soukromí ===


def add_transmission_noise(
    q_u: ItemTable, scale: float, rng: np.random.Generator
) -> ItemTable:
    """
    Přičti nezávislý Laplaceův šum Laplace(0, λ) ke každému prvku tabulky.

    λ = 0 vrací tabulku beze změny.
    """
    if scale < 0:
        raise FCRecValidationError(f"Škála šumu musí být ≥ 0 (zadáno: {scale})")
    if scale == 0:
        return q_u
    return q_u.with_rows(q_u.rows + rng.laplace(0.0, scale, size=q_u.rows.shape))


# === Registr klientů ===


class ClientRegistry:
    """
    Simulovaná populace klientů.

    Drží stav všech registrovaných klientů a zprostředkovává veškerý přístup
    k Φᵤ a lokálním datům (trénink, skórování pro evaluaci, měření Δ).
    """

    def __init__(self, backbone: Backbone, config: ExperimentConfig):
        self.backbone = backbone
        self.config = config
        self._clients: dict[int, ClientState] = {}

    def __contains__(self, user: object) -> bool:
        return user in self._clients

    def __len__(self) -> int:
        return len(self._clients)

    @property
    def users(self) -> list[int]:
        return sorted(self._clients)

    def register(self, users: Iterable[int]) -> list[int]:
        """Zaregistruj nové uživatele s čerstvými Φᵤ; vrací nově přidané."""
        added = []
        for user in sorted(int(u) for u in users):
            if user in self._clients:
                continue
            rng = derive_rng(self.config.seed, "init", 1, user)
            self._clients[user] = ClientState(user=user, phi=self.backbone.init_private(rng))
            added.append(user)
        if added:
            logger.info(f"  ✓ registrováno {len(added)} nových klientů (celkem {len(self)})")
        return added

    def load_block(self, block: DataBlock) -> list[int]:
        """Nastav lokální train data bloku; vrací uživatele s train daty."""
        by_user = block.train_by_user
        for user, state in self._clients.items():
            state.train_items = by_user.get(user, np.empty(0, dtype=np.int64))
        return sorted(u for u in by_user if u in self._clients)

    def train(
        self,
        user: int,
        q_global: ItemTable,
        block: int,
        round_index: int,
        q_anchor: ItemTable | None = None,
    ) -> ClientUpload:
        """Lokální trénink + volitelný šum na upload."""
        upload = client_update(
            self._clients[user], q_global, block, round_index, self.config, q_anchor
        )
        if self.config.noise > 0:
            rng = derive_rng(self.config.seed, "noise", user, block, round_index)
            noisy = add_transmission_noise(upload.table, self.config.noise, rng)
            upload = ClientUpload(user=user, table=noisy, summary=upload.summary)
        return upload

    def finalize(self, users: Iterable[int], q_final: ItemTable) -> None:
        """Ulož znalost pro uživatele trénované v bloku; ostatním ji zahoď."""
        trained = set(users)
        for user, state in self._clients.items():
            if user in trained:
                exclude = state.train_items if self.config.exclude_train_in_top_n else None
                state.retained = finalize_block(state, q_final, self.config.top_n, exclude)
            else:
                state.retained = None

    def measure_shift(self, user: int, q: ItemTable) -> int | None:
        """Δ pro uživatele s uchovanou znalostí, jinak None."""
        state = self._clients[user]
        if state.retained is None or not state.retained.top_items:
            return None
        return preference_shift(state, q)

    def has_retained(self, user: int) -> bool:
        state = self._clients.get(user)
        return state is not None and state.retained is not None

    def scores(self, user: int, table: ItemTable) -> np.ndarray:
        """Lokální skórování všech položek tabulky (pro evaluaci)."""
        return score_all(self._clients[user].phi, table)

    def snapshot(self) -> dict[int, PrivateParams]:
        """Kopie Φ všech klientů (pro výběr nejlepšího kola podle validace)."""
        return {u: s.phi.copy() for u, s in self._clients.items()}

    def restore(self, snapshot: dict[int, PrivateParams]) -> None:
        for user, phi in snapshot.items():
            self._clients[user].phi = phi.copy()
