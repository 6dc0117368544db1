"""
Datová pipeline pro časově dělené bloky interakcí.

Implementuje:
- Načtení timestampovaných logů interakcí (implicitní feedback)
- Filtrování málo aktivních uživatelů/položek
- Rozdělení na base blok + inkrementální bloky
- Per-user split train/valid/test
- Uniformní vzorkování negativních položek
- Manifest bloků pro audit
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from fcrec_sim.config import DatasetSchema, ExperimentConfig
from fcrec_sim.exceptions import FCRecDataError, FCRecValidationError
from fcrec_sim.models import BlockStats
from fcrec_sim.seeding import derive_rng

logger = logging.getLogger(__name__)

# Sloupce normalizovaného rámce interakcí
INTERACTION_COLUMNS = ["user", "item", "timestamp"]
SPLIT_LABELS = ("train", "valid", "test")


def _empty_interactions() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype="int64") for c in INTERACTION_COLUMNS})


# === Domain types ===


@dataclass
class DataBlock:
    """
    Časový řez logu interakcí 𝒟ᵗ s per-user splitem.

    Attributes:
        index: Číslo bloku t
        interactions: Všechny interakce bloku (chronologicky)
        train/valid/test: Disjunktní rozklad `interactions`
        users: Uživatelé aktivní v bloku
        accumulated_users: 𝒰ᵗ (uživatelé bloků 0..t)
        items: ℐᵗ (položky bloků 0..t)
        new_items: ℐᵗ \\ ℐᵗ⁻¹ seřazené vzestupně podle id
    """

    index: int
    interactions: pd.DataFrame
    train: pd.DataFrame
    valid: pd.DataFrame
    test: pd.DataFrame
    users: frozenset[int]
    accumulated_users: frozenset[int]
    items: frozenset[int]
    new_items: tuple[int, ...] = field(default_factory=tuple)

    @property
    def is_split(self) -> bool:
        """True pokud blok prošel split_train_valid_test."""
        return len(self.valid) + len(self.test) > 0

    @cached_property
    def train_by_user(self) -> dict[int, np.ndarray]:
        """Trénovací položky každého uživatele (pořadí dle času)."""
        return _group_items(self.train)

    @cached_property
    def valid_by_user(self) -> dict[int, np.ndarray]:
        return _group_items(self.valid)

    @cached_property
    def test_by_user(self) -> dict[int, np.ndarray]:
        return _group_items(self.test)


def _group_items(df: pd.DataFrame) -> dict[int, np.ndarray]:
    if df.empty:
        return {}
    return {
        int(user): group["item"].to_numpy(dtype=np.int64)
        for user, group in df.groupby("user", sort=True)
    }


# === Načítání ===


def load_interactions(path: Path, schema: DatasetSchema) -> pd.DataFrame:
    """
    Načti interakce z oddělovačem členěného souboru.

    Args:
        path: Cesta k souboru
        schema: Popis sloupců a oddělovače

    Returns:
        DataFrame se sloupci user, item, timestamp (int64), deduplikovaný
        a seřazený podle (timestamp, user, item)

    Raises:
        FCRecDataError: Nečitelný soubor, chybný řádek (s číslem řádku), prázdný výsledek
    """
    path = Path(path)
    if not path.is_file():
        raise FCRecDataError(f"Soubor interakcí neexistuje nebo není čitelný: {path}")

    logger.info(f"Načítám interakce: {path}")

    try:
        raw = pd.read_csv(
            path,
            sep=schema.delimiter,
            header=None,
            names=schema.columns,
            skiprows=schema.skip_rows,
            dtype=str,
            keep_default_na=False,
            engine="c" if len(schema.delimiter) == 1 else "python",
        )
    except pd.errors.EmptyDataError:
        raw = pd.DataFrame(columns=schema.columns)
    except (pd.errors.ParserError, UnicodeDecodeError, OSError) as e:
        raise FCRecDataError(f"Chybný formát souboru {path}: {e}") from e

    if raw.empty:
        raise FCRecDataError(f"Prázdný výsledek: soubor {path} neobsahuje žádné interakce")

    columns = {
        "user": schema.user_column,
        "item": schema.item_column,
        "timestamp": schema.timestamp_column,
    }
    parsed = pd.DataFrame(
        {
            name: pd.to_numeric(raw[source].str.strip(), errors="coerce")
            for name, source in columns.items()
        }
    )

    # Validace řádků: celá nezáporná čísla
    invalid = parsed.isna().any(axis=1)
    values = parsed.fillna(0)
    invalid |= (values < 0).any(axis=1) | (values % 1 != 0).any(axis=1)
    if invalid.any():
        position = int(np.flatnonzero(invalid.to_numpy())[0])
        line_number = schema.skip_rows + position + 1
        raise FCRecDataError(
            f"Chybný řádek {line_number} v {path}: {raw.iloc[position].tolist()}",
            line_number=line_number,
        )

    df = parsed.astype("int64")
    if schema.timestamp_unit == "ms":
        df["timestamp"] = df["timestamp"] // 1000

    before = len(df)
    df = df.drop_duplicates(subset=INTERACTION_COLUMNS)
    df = df.sort_values(["timestamp", "user", "item"], kind="mergesort").reset_index(drop=True)

    logger.info(f"  ✓ načteno {before} řádků, {len(df)} unikátních interakcí")
    return df


def filter_min_interactions(
    interactions: pd.DataFrame, min_user: int, min_item: int
) -> pd.DataFrame:
    """
    Odfiltruj položky s < min_item a následně uživatele s < min_user výskyty.

    Jeden průchod: nejdřív položky, pak uživatelé (ne iterace do pevného bodu).

    Raises:
        FCRecValidationError: min_user nebo min_item < 1
        FCRecDataError: Filtr odstranil všechny interakce
    """
    if min_user < 1 or min_item < 1:
        raise FCRecValidationError(
            f"Minimální počty musí být ≥ 1 (zadáno: user={min_user}, item={min_item})"
        )

    item_counts = interactions["item"].map(interactions["item"].value_counts())
    df = interactions[item_counts >= min_item]
    user_counts = df["user"].map(df["user"].value_counts())
    df = df[user_counts >= min_user].reset_index(drop=True)

    if df.empty:
        raise FCRecDataError(
            f"Filtr (user ≥ {min_user}, item ≥ {min_item}) odstranil všechny interakce"
        )

    logger.info(
        f"Filtr min_user={min_user}, min_item={min_item}: "
        f"{len(interactions)} → {len(df)} interakcí, "
        f"{df['user'].nunique()} uživatelů, {df['item'].nunique()} položek"
    )
    return df


# === Rozdělení na bloky ===


def partition_blocks(
    interactions: pd.DataFrame, base_fraction: float, n_incremental: int
) -> list[DataBlock]:
    """
    Rozděl chronologicky seřazené interakce na base blok a n inkrementálních bloků.

    Base blok drží prvních ⌊base_fraction·M⌋ interakcí, zbytek se dělí na
    n_incremental téměř stejných bloků (zbytek dělení připadne poslednímu bloku).
    Bloky nejsou rozsplitované: všechny interakce jsou v `train`.

    Raises:
        FCRecValidationError: Neplatné parametry nebo neseřazený vstup
        FCRecDataError: Příliš málo interakcí pro naplnění všech bloků
    """
    if not 0.0 < base_fraction < 1.0:
        raise FCRecValidationError(f"base_fraction musí být v (0,1) (zadáno: {base_fraction})")
    if n_incremental < 1:
        raise FCRecValidationError(f"n_incremental musí být ≥ 1 (zadáno: {n_incremental})")
    if not interactions["timestamp"].is_monotonic_increasing:
        raise FCRecValidationError("Interakce musí být seřazené podle timestamp")

    total = len(interactions)
    # 0.29·100 = 28.999…; tolerance drží ⌊·⌋ přesné pro desetinné podíly
    base_size = int(np.floor(base_fraction * total + 1e-9))
    rest = total - base_size
    block_size = rest // n_incremental
    if base_size == 0 or block_size == 0:
        raise FCRecDataError(
            f"Příliš málo interakcí ({total}) pro base blok + {n_incremental} inkrementálních bloků"
        )

    bounds = [0, base_size]
    for k in range(1, n_incremental):
        bounds.append(base_size + k * block_size)
    bounds.append(total)

    blocks: list[DataBlock] = []
    seen_users: set[int] = set()
    seen_items: set[int] = set()
    for t in range(n_incremental + 1):
        part = interactions.iloc[bounds[t] : bounds[t + 1]].reset_index(drop=True)
        users = frozenset(int(u) for u in part["user"].unique())
        items = {int(i) for i in part["item"].unique()}
        new_items = tuple(sorted(items - seen_items))
        seen_users |= users
        seen_items |= items
        blocks.append(
            DataBlock(
                index=t,
                interactions=part,
                train=part,
                valid=_empty_interactions(),
                test=_empty_interactions(),
                users=users,
                accumulated_users=frozenset(seen_users),
                items=frozenset(seen_items),
                new_items=new_items,
            )
        )
        logger.info(
            f"  ✓ blok {t}: {len(part)} interakcí, "
            f"{len(seen_users)} akumulovaných uživatelů, {len(seen_items)} položek"
        )

    return blocks


def _split_counts(n: int, valid_ratio: float, test_ratio: float) -> tuple[int, int, int]:
    """Počty (train, valid, test) pro uživatele s n interakcemi."""
    if n >= 3:
        n_test = int(n * test_ratio + 0.5)
        n_valid = int(n * valid_ratio + 0.5)
        if test_ratio > 0:
            n_test = max(1, n_test)
        if valid_ratio > 0:
            n_valid = max(1, n_valid)
        return n - n_valid - n_test, n_valid, n_test
    # Méně než 3 interakce: train → test → valid
    n_train = min(n, 1)
    n_test = min(n - n_train, 1) if test_ratio > 0 else 0
    n_valid = n - n_train - n_test if valid_ratio > 0 else 0
    return n - n_valid - n_test, n_valid, n_test


def split_train_valid_test(
    block: DataBlock, valid_ratio: float = 0.1, test_ratio: float = 0.1, seed: int = 0
) -> DataBlock:
    """
    Náhodně rozděl interakce každého uživatele v bloku na train/valid/test.

    Uživatel s 10 interakcemi → 8/1/1; s méně než 3 interakcemi dostane aspoň
    jednu interakci do train a zbytek v pořadí train → test → valid.
    Deterministické pro daný seed a index bloku.

    Raises:
        FCRecValidationError: Neplatné poměry
    """
    if valid_ratio < 0 or test_ratio < 0 or valid_ratio + test_ratio >= 1.0:
        raise FCRecValidationError(
            f"Neplatné poměry splitu: valid={valid_ratio}, test={test_ratio}"
        )

    rng = derive_rng(seed, "split", block.index)
    df = block.interactions
    labels = np.zeros(len(df), dtype=np.int8)

    for _, positions in sorted(df.groupby("user", sort=True).indices.items()):
        n = len(positions)
        n_train, n_valid, _ = _split_counts(n, valid_ratio, test_ratio)
        order = positions[rng.permutation(n)]
        labels[order[n_train : n_train + n_valid]] = 1
        labels[order[n_train + n_valid :]] = 2

    return replace(
        block,
        train=df[labels == 0].reset_index(drop=True),
        valid=df[labels == 1].reset_index(drop=True),
        test=df[labels == 2].reset_index(drop=True),
    )


# === Negativní vzorkování ===


def sample_negatives(
    user: int,
    positives: np.ndarray | set[int],
    universe: np.ndarray | set[int],
    ratio: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Vzorkuj ratio × |positives| negativních položek s opakováním z universe \\ positives.

    Raises:
        FCRecValidationError: Prázdná množina kandidátů nebo záporný ratio
    """
    pos = np.fromiter(positives, dtype=np.int64) if isinstance(positives, set) else positives
    uni = np.fromiter(universe, dtype=np.int64) if isinstance(universe, set) else universe
    candidates = np.setdiff1d(uni, pos)
    if candidates.size == 0:
        raise FCRecValidationError(f"Uživatel {user}: žádní kandidáti pro negativní vzorky")
    if ratio < 0:
        raise FCRecValidationError(f"Negative ratio musí být ≥ 0 (zadáno: {ratio})")
    size = ratio * len(np.unique(pos))
    if size == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(candidates, size=size, replace=True).astype(np.int64)


# === Statistiky a manifest ===


def block_stats(block: DataBlock) -> BlockStats:
    """Spočítej statistiky bloku (včetně sparsity na akumulovaných množinách)."""
    n_users = len(block.accumulated_users)
    n_items = len(block.items)
    interactions = len(block.interactions)
    sparsity = 1.0 - interactions / (n_users * n_items) if n_users and n_items else 1.0
    ts = block.interactions["timestamp"]
    return BlockStats(
        block=block.index,
        interactions=interactions,
        train=len(block.train),
        valid=len(block.valid),
        test=len(block.test),
        users=len(block.users),
        accumulated_users=n_users,
        accumulated_items=n_items,
        sparsity=min(max(sparsity, 0.0), 1.0),
        min_timestamp=int(ts.min()) if interactions else 0,
        max_timestamp=int(ts.max()) if interactions else 0,
    )


def write_block_manifest(blocks: list[DataBlock], output_dir: Path) -> None:
    """Zapiš blocks.tsv (počty) a splits.tsv (přiřazení interakcí do splitů)."""
    output_dir.mkdir(parents=True, exist_ok=True)
    stats = pd.DataFrame([block_stats(b).model_dump() for b in blocks])
    stats.to_csv(output_dir / "blocks.tsv", sep="\t", index=False)

    frames = []
    for block in blocks:
        for label in SPLIT_LABELS:
            part = getattr(block, label)
            if part.empty:
                continue
            frames.append(part.assign(block=block.index, split=label))
    if frames:
        splits = pd.concat(frames, ignore_index=True)
        splits = splits.sort_values(["block", "timestamp", "user", "item"], kind="mergesort")
        splits[["block", *INTERACTION_COLUMNS, "split"]].to_csv(
            output_dir / "splits.tsv", sep="\t", index=False
        )
    logger.info(f"Manifest bloků zapsán do {output_dir}")


def prepare_blocks(config: ExperimentConfig) -> list[DataBlock]:
    """
    Kompletní pipeline: načtení → filtr → bloky → split.

    Raises:
        FCRecDataError: Chybějící cesta k datasetu nebo chyba dat
    """
    if config.dataset_path is None:
        raise FCRecDataError("Není zadána cesta k datasetu (--dataset nebo FCREC_DATA_PATH)")

    interactions = load_interactions(config.dataset_path, config.dataset_schema)
    interactions = filter_min_interactions(
        interactions, config.min_user_interactions, config.min_item_interactions
    )
    blocks = partition_blocks(interactions, config.base_fraction, config.n_incremental)
    return [
        (
            split_train_valid_test(b, config.valid_ratio, config.test_ratio, config.seed)
            if b.index > 0 or config.split_base_block
            else b
        )
        for b in blocks
    ]
