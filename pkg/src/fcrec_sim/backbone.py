"""
Federované backbone modely: skóre, BCE loss a analytické gradienty.

- FedMF: ŷ = σ(Φᵤ·qᵢ), bez bias členů
- FedNCF (1 skrytá vrstva): ŷ = σ(rᵀ σ(Wᵀ(Φᵤ⊙qᵢ) + b)), privátní MLP

Typ backbone je určen privátními parametry: `PrivateParams.mlp is None` → FedMF.
"""

import logging
from abc import ABC, abstractmethod
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from fcrec_sim.config import Backbone as BackboneName
from fcrec_sim.exceptions import FCRecDivergenceError, FCRecValidationError

logger = logging.getLogger(__name__)

# Clamp pravděpodobností před logaritmem
EPS_CLAMP = 1e-7


# === Parametry ===


@dataclass
class DenseLayer:
    """Privátní skrytá vrstva neuronového backbone (šířka h)."""

    weights: np.ndarray  # d × h
    bias: np.ndarray  # h
    readout: np.ndarray  # h

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.readout.copy())


@dataclass
class PrivateParams:
    """Privátní parametry Φᵤ (nikdy se neposílají na server)."""

    user_embedding: np.ndarray
    mlp: DenseLayer | None = None

    @property
    def dim(self) -> int:
        return int(self.user_embedding.shape[0])

    def copy(self) -> "PrivateParams":
        return PrivateParams(
            self.user_embedding.copy(), self.mlp.copy() if self.mlp is not None else None
        )

    def arrays(self) -> list[np.ndarray]:
        """Všechna pole parametrů v pevném pořadí."""
        if self.mlp is None:
            return [self.user_embedding]
        return [self.user_embedding, self.mlp.weights, self.mlp.bias, self.mlp.readout]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "PrivateParams":
        if len(arrays) == 1:
            return cls(arrays[0])
        return cls(arrays[0], DenseLayer(arrays[1], arrays[2], arrays[3]))

    def axpy(self, other: "PrivateParams", scale: float) -> "PrivateParams":
        """Vrať self + scale·other (nová instance)."""
        return PrivateParams.from_arrays(
            [a + scale * b for a, b in zip(self.arrays(), other.arrays(), strict=True)]
        )

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(a).all()) for a in self.arrays())


@dataclass
class ItemTable:
    """
    Tabulka embeddingů položek (Q_u, Q_g, Q_g′).

    Pořadí řádků = pořadí vložení do registru položek; bloky přidávají nové
    položky na konec, takže ℐᵗ⁻¹ je vždy prefix ℐᵗ.
    """

    item_ids: np.ndarray
    rows: np.ndarray
    index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.item_ids.shape[0]:
            raise FCRecValidationError(
                f"Nesoulad tvaru tabulky: {self.item_ids.shape[0]} id vs rows {self.rows.shape}"
            )
        self.index = {int(item): row for row, item in enumerate(self.item_ids)}
        if len(self.index) != len(self.item_ids):
            raise FCRecValidationError("Index položek není bijekce (duplicitní id)")

    def __len__(self) -> int:
        return int(self.item_ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def copy(self) -> "ItemTable":
        return ItemTable(self.item_ids.copy(), self.rows.copy())

    def with_rows(self, rows: np.ndarray) -> "ItemTable":
        """Stejný index, nové řádky."""
        return ItemTable(self.item_ids.copy(), rows)

    def same_index(self, other: "ItemTable") -> bool:
        return bool(np.array_equal(self.item_ids, other.item_ids))

    def positions(self, items: Iterable[int] | np.ndarray) -> np.ndarray:
        """Řádkové indexy pro dané ItemId."""
        try:
            return np.fromiter((self.index[int(i)] for i in items), dtype=np.int64)
        except KeyError as e:
            raise FCRecValidationError(f"Položka {e.args[0]} není v tabulce") from e

    def row(self, item: int) -> np.ndarray:
        return self.rows[self.positions([item])[0]]

    def prefix(self, n: int) -> "ItemTable":
        """Tabulka prvních n položek (např. ℐᵗ⁻¹ uvnitř ℐᵗ)."""
        return ItemTable(self.item_ids[:n].copy(), self.rows[:n].copy())

    def append(self, item_ids: Iterable[int], rows: np.ndarray) -> "ItemTable":
        new_ids = np.asarray(list(item_ids), dtype=np.int64)
        if new_ids.size == 0:
            return self.copy()
        return ItemTable(
            np.concatenate([self.item_ids, new_ids]),
            np.vstack([self.rows, np.asarray(rows, dtype=np.float64).reshape(-1, self.dim)]),
        )


# === Numerika ===


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    """Numericky stabilní logistická funkce."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def bce_loss(pred: np.ndarray | float, label: np.ndarray | float) -> np.ndarray:
    """Binární cross-entropie −[y ln p + (1−y) ln(1−p)] s clampem p do [ε, 1−ε]."""
    p = np.clip(np.asarray(pred, dtype=np.float64), EPS_CLAMP, 1.0 - EPS_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _check_dims(phi: PrivateParams, q_rows: np.ndarray) -> None:
    if q_rows.shape[-1] != phi.dim:
        raise FCRecValidationError(
            f"Nesoulad dimenzí: Φ má d={phi.dim}, embedding položky d={q_rows.shape[-1]}"
        )


def logits(phi: PrivateParams, q_rows: np.ndarray) -> np.ndarray:
    """Logity pro matici embeddingů (m × d) → vektor délky m."""
    q = np.atleast_2d(q_rows)
    _check_dims(phi, q)
    if phi.mlp is None:
        return q @ phi.user_embedding
    hidden = sigmoid((q * phi.user_embedding) @ phi.mlp.weights + phi.mlp.bias)
    return hidden @ phi.mlp.readout


def score(phi: PrivateParams, q_i: np.ndarray) -> np.ndarray | float:
    """
    Predikované skóre ŷ ∈ (0,1).

    Pro 1-D embedding vrací float, pro matici vektor skóre.

    Raises:
        FCRecValidationError: Nesoulad dimenzí
    """
    probs = sigmoid(logits(phi, q_i))
    if np.ndim(q_i) == 1:
        return float(probs[0])
    return probs


def gradients(
    phi: PrivateParams, q_rows: np.ndarray, coeff: np.ndarray
) -> tuple[PrivateParams, np.ndarray]:
    """
    Gradienty Σₖ coeffₖ·logitₖ vůči Φ a jednotlivým řádkům q.

    Pro váženou BCE je coeff = w·(σ(logit) − y).

    Returns:
        (gradient Φ, gradient řádků m × d)
    """
    q = np.atleast_2d(q_rows)
    _check_dims(phi, q)
    c = np.asarray(coeff, dtype=np.float64).reshape(-1)

    if phi.mlp is None:
        grad_user = c @ q
        grad_rows = np.outer(c, phi.user_embedding)
        return PrivateParams(grad_user), grad_rows

    mlp = phi.mlp
    z = q * phi.user_embedding
    hidden = sigmoid(z @ mlp.weights + mlp.bias)
    grad_readout = c @ hidden
    s = c[:, None] * mlp.readout * hidden * (1.0 - hidden)
    grad_bias = s.sum(axis=0)
    grad_weights = z.T @ s
    grad_z = s @ mlp.weights.T
    grad_user = (grad_z * q).sum(axis=0)
    grad_rows = grad_z * phi.user_embedding
    return (
        PrivateParams(grad_user, DenseLayer(grad_weights, grad_bias, grad_readout)),
        grad_rows,
    )


def weighted_bce(
    phi: PrivateParams, q_rows: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> float:
    """Σ wₖ·BCE(ŷₖ, yₖ)."""
    preds = sigmoid(logits(phi, q_rows))
    return float(np.sum(np.asarray(weights) * bce_loss(preds, labels)))


def grad_step(
    phi: PrivateParams,
    q_rows: np.ndarray,
    labels: np.ndarray | float,
    weights: np.ndarray | float,
    lr: float,
) -> tuple[PrivateParams, np.ndarray]:
    """
    Jeden SGD krok na Σ w·BCE (povoleny i soft labely y ∈ [0,1]).

    Returns:
        Nové (Φ, q_rows); vstupy se nemění

    Raises:
        FCRecValidationError: lr ≤ 0
        FCRecDivergenceError: Nekonečný gradient nebo výsledek
    """
    if lr <= 0:
        raise FCRecValidationError(f"Learning rate musí být > 0 (zadáno: {lr})")
    single = np.ndim(q_rows) == 1
    q = np.atleast_2d(np.asarray(q_rows, dtype=np.float64))
    y = np.broadcast_to(np.asarray(labels, dtype=np.float64), (q.shape[0],))
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (q.shape[0],))

    coeff = w * (sigmoid(logits(phi, q)) - y)
    grad_phi, grad_rows = gradients(phi, q, coeff)
    if not (grad_phi.is_finite() and np.isfinite(grad_rows).all()):
        raise FCRecDivergenceError("Nekonečný gradient při SGD kroku")

    with np.errstate(over="ignore", invalid="ignore"):
        new_phi = phi.axpy(grad_phi, -lr)
        new_rows = q - lr * grad_rows
    if not (new_phi.is_finite() and np.isfinite(new_rows).all()):
        raise FCRecDivergenceError("Nekonečné parametry po SGD kroku")
    return new_phi, (new_rows[0] if single else new_rows)


# === Ranking ===


def score_all(phi: PrivateParams, table: ItemTable) -> np.ndarray:
    """Skóre pro všechny řádky tabulky."""
    return sigmoid(logits(phi, table.rows))


def rank_positions(scores: np.ndarray, item_ids: np.ndarray) -> np.ndarray:
    """1-based pořadí každého řádku v totálním uspořádání (−score, id)."""
    order = np.lexsort((item_ids, -scores))
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def rank_of(
    phi: PrivateParams,
    table: ItemTable,
    target: int,
    candidates: Iterable[int] | None = None,
) -> int:
    """
    Pořadí položky target mezi kandidáty podle sestupného skóre (shoda → nižší id).

    Raises:
        FCRecValidationError: target není mezi kandidáty
    """
    if candidates is None:
        cand = table.item_ids
    else:
        cand = np.unique(np.fromiter(candidates, dtype=np.int64))
    if not np.isin(target, cand):
        raise FCRecValidationError(f"Položka {target} není mezi kandidáty")

    cand_scores = sigmoid(logits(phi, table.rows[table.positions(cand)]))
    target_score = cand_scores[np.flatnonzero(cand == target)[0]]
    higher = int(np.sum(cand_scores > target_score))
    ties = int(np.sum((cand_scores == target_score) & (cand < target)))
    return 1 + higher + ties


def top_n(
    phi: PrivateParams, table: ItemTable, n: int, exclude: Iterable[int] | None = None
) -> list[int]:
    """N nejlépe skórovaných položek mimo exclude, sestupně (shoda → nižší id)."""
    if n < 1:
        raise FCRecValidationError(f"n musí být ≥ 1 (zadáno: {n})")
    scores = score_all(phi, table)
    order = np.lexsort((table.item_ids, -scores))
    ranked = table.item_ids[order]
    if exclude is not None:
        excluded = np.fromiter(exclude, dtype=np.int64)
        ranked = ranked[~np.isin(ranked, excluded)]
    return [int(i) for i in ranked[:n]]


# === Backbone registry ===


class Backbone(ABC):
    """Inicializace parametrů konkrétního backbone."""

    name: BackboneName

    def __init__(self, dim: int, init_scale: float = 0.01):
        if dim < 1:
            raise FCRecValidationError(f"Dimenze musí být ≥ 1 (zadáno: {dim})")
        self.dim = dim
        self.init_scale = init_scale

    @abstractmethod
    def init_private(self, rng: np.random.Generator) -> PrivateParams:
        """Nové privátní parametry pro nového uživatele."""

    def init_item_rows(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Nové řádky embeddingů položek, uniformně v [−scale, scale]."""
        return rng.uniform(-self.init_scale, self.init_scale, size=(count, self.dim))

    def _user_embedding(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.init_scale, self.init_scale, size=self.dim)


class FedMF(Backbone):
    name = BackboneName.FEDMF

    def init_private(self, rng: np.random.Generator) -> PrivateParams:
        return PrivateParams(self._user_embedding(rng))


class FedNCF(Backbone):
    """Jedna skrytá vrstva šířky h = d, logistická aktivace, Glorot-uniform inicializace."""

    name = BackboneName.FEDNCF1

    def init_private(self, rng: np.random.Generator) -> PrivateParams:
        user = self._user_embedding(rng)
        hidden = self.dim
        limit_w = np.sqrt(6.0 / (self.dim + hidden))
        limit_r = np.sqrt(6.0 / (hidden + 1))
        mlp = DenseLayer(
            weights=rng.uniform(-limit_w, limit_w, size=(self.dim, hidden)),
            bias=np.zeros(hidden),
            readout=rng.uniform(-limit_r, limit_r, size=hidden),
        )
        return PrivateParams(user, mlp)


_BACKBONES: dict[BackboneName, type[Backbone]] = {
    BackboneName.FEDMF: FedMF,
    BackboneName.FEDNCF1: FedNCF,
}


def get_backbone(name: BackboneName | str, dim: int, init_scale: float = 0.01) -> Backbone:
    """Vytvoř backbone podle názvu."""
    try:
        cls = _BACKBONES[BackboneName(name)]
    except ValueError as e:
        raise FCRecValidationError(f"Neznámý backbone: '{name}'") from e
    logger.debug(f"Backbone {cls.name.value}: d={dim}, init_scale={init_scale}")
    return cls(dim, init_scale)
