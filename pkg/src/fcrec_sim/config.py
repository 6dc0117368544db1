"""
Konfigurace experimentu (konfigurovatelné přes ENV, konfigurační soubor a CLI).

Obsahuje:
- DatasetSchema a presety pro podporované datasety
- Výčty metod (včetně ablací) a backbone modelů
- MethodProfile: rozklad metody na přepínače mechanismů
- ExperimentConfig: všechny hyperparametry s validací rozsahů
"""

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from fcrec_sim.exceptions import FCRecConfigError

logger = logging.getLogger(__name__)


# === Dataset schema ===


class DatasetSchema(BaseModel):
    """Popis oddělovačem členěného souboru interakcí."""

    delimiter: str = Field("\t", description="Oddělovač sloupců")
    columns: list[str] = Field(
        default_factory=lambda: ["user", "item", "rating", "timestamp"],
        description="Názvy sloupců v pořadí souboru",
    )
    user_column: str = "user"
    item_column: str = "item"
    timestamp_column: str = "timestamp"
    skip_rows: int = Field(0, ge=0, description="Počet řádků hlavičky k přeskočení")
    timestamp_unit: Literal["s", "ms"] = "s"

    @model_validator(mode="after")
    def _check_columns(self) -> "DatasetSchema":
        for name in (self.user_column, self.item_column, self.timestamp_column):
            if name not in self.columns:
                raise ValueError(f"Sloupec '{name}' není ve schématu {self.columns}")
        return self


# Presety datasetů (Lastfm-2K: soubor s časy tagování, viz README)
DATASET_PRESETS: dict[str, tuple[DatasetSchema, int]] = {
    "ml-100k": (DatasetSchema(), 10),
    "ml-latest-small": (
        DatasetSchema(
            delimiter=",",
            columns=["user", "item", "rating", "timestamp"],
            skip_rows=1,
        ),
        10,
    ),
    "lastfm-2k": (
        DatasetSchema(
            delimiter="\t",
            columns=["user", "item", "tag", "timestamp"],
            skip_rows=1,
            timestamp_unit="ms",
        ),
        5,
    ),
    "hetrec2011": (
        DatasetSchema(
            delimiter="\t",
            columns=["user", "item", "rating", "timestamp"],
            skip_rows=1,
            timestamp_unit="ms",
        ),
        10,
    ),
}


def get_preset(name: str) -> tuple[DatasetSchema, int]:
    """Vrať (schema, min_interactions) presetu podle názvu."""
    key = name.strip().lower()
    if key not in DATASET_PRESETS:
        raise FCRecConfigError(
            f"Neznámý preset datasetu: '{name}' (dostupné: {', '.join(DATASET_PRESETS)})"
        )
    schema, min_interactions = DATASET_PRESETS[key]
    return schema.model_copy(deep=True), min_interactions


# === Metody a backbone ===


class Method(str, Enum):
    """Metoda kontinuálního učení (včetně baseline a ablací)."""

    F3CREC = "f3crec"
    FT = "ft"
    REG = "reg"
    KD = "kd"
    F3CREC_WO_CC = "f3crec_wo_cc"  # bez client-side CL
    F3CREC_WO_ARM = "f3crec_wo_arm"  # pevná top-N replay paměť
    F3CREC_WO_SC = "f3crec_wo_sc"  # bez server-side CL
    F3CREC_WO_ITM = "f3crec_wo_itm"  # uniformní temporal mean


class Backbone(str, Enum):
    """Federovaný backbone model."""

    FEDMF = "fedmf"
    FEDNCF1 = "fedncf1"


ServerRetention = Literal["none", "itemwise", "uniform"]


class MethodProfile(BaseModel):
    """Přepínače mechanismů odvozené z metody."""

    method: Method
    use_kd: bool
    adaptive_replay: bool
    use_reg: bool
    server_retention: ServerRetention


_PROFILES: dict[Method, tuple[bool, bool, bool, ServerRetention]] = {
    # method: (use_kd, adaptive_replay, use_reg, server_retention)
    Method.F3CREC: (True, True, False, "itemwise"),
    Method.FT: (False, False, False, "none"),
    Method.REG: (False, False, True, "none"),
    Method.KD: (True, False, False, "none"),
    Method.F3CREC_WO_CC: (False, False, False, "itemwise"),
    Method.F3CREC_WO_ARM: (True, False, False, "itemwise"),
    Method.F3CREC_WO_SC: (True, True, False, "none"),
    Method.F3CREC_WO_ITM: (True, True, False, "uniform"),
}


def method_profile(method: Method | str) -> MethodProfile:
    """Rozlož metodu na přepínače client/server mechanismů."""
    m = Method(method)
    use_kd, adaptive, use_reg, retention = _PROFILES[m]
    return MethodProfile(
        method=m,
        use_kd=use_kd,
        adaptive_replay=adaptive,
        use_reg=use_reg,
        server_retention=retention,
    )


# === ENV defaults ===


def _get_data_path() -> Path | None:
    """Get dataset path from ENV (FCREC_DATA_PATH) or None."""
    env_path = os.getenv("FCREC_DATA_PATH")
    return Path(env_path) if env_path else None


def _get_output_dir() -> Path:
    """Get output directory from ENV or default ./results."""
    return Path(os.getenv("FCREC_OUTPUT_DIR", "results"))


def _get_seed() -> int:
    """Get root seed from ENV or default 0."""
    return int(os.getenv("FCREC_SEED", "0"))


def _get_log_level() -> str:
    """Get log level from ENV or default INFO."""
    return os.getenv("LOG_LEVEL", "INFO").upper()


# === Experiment config ===


class ExperimentConfig(BaseModel):
    """Konfigurace experimentu (všechny hyperparametry)."""

    # Data
    dataset_path: Path | None = Field(default_factory=_get_data_path)
    dataset_name: str = Field("ml-100k", description="Popisek datasetu ve výsledcích")
    dataset_schema: DatasetSchema = Field(default_factory=DatasetSchema)
    min_user_interactions: int = Field(10, ge=1)
    min_item_interactions: int = Field(10, ge=1)
    base_fraction: float = 0.6
    n_incremental: int = Field(3, ge=1)
    valid_ratio: float = Field(0.1, ge=0.0)
    test_ratio: float = Field(0.1, ge=0.0)
    split_base_block: bool = True

    # Metoda a backbone
    method: Method = Method.F3CREC
    backbone: Backbone = Backbone.FEDMF

    # Model
    dim: int = Field(32, ge=1, description="Dimenze embeddingů d")
    init_scale: float = Field(0.01, gt=0.0)
    top_n: int = Field(30, ge=1, description="Velikost top-N seznamu S_u")

    # Client-side CL
    eps: float = Field(1e-3, ge=0.0, description="Škálování sampling rate ε")
    lambda_kd: float = Field(0.01, ge=0.0, description="Váha KD loss λ_KD")
    mu_reg: float = Field(0.01, ge=0.0, description="Váha Reg penalizace μ")
    shift_every: Literal["batch", "epoch"] = "batch"
    exclude_train_in_top_n: bool = False

    # Server-side CL
    beta: float = Field(0.5, description="β ∈ [0,1); 0 vypíná server-side retenci")

    # Trénink
    lr: float = Field(0.5, gt=0.0, description="Learning rate η")
    local_epochs: int = Field(1, ge=1, description="Lokální epochy E")
    rounds: int = Field(40, ge=1, description="Počet kol R na blok")
    client_fraction: float = 1.0
    batch_size: int = Field(512, ge=1)
    negative_ratio: int = Field(4, ge=0)
    loss_reduction: Literal["mean", "sum"] = "mean"
    weight_decay: float = Field(0.0, ge=0.0)
    workers: int = Field(1, ge=1, description="Vlákna pro paralelní klientskou sekci")

    # Soukromí
    noise: float = Field(0.0, ge=0.0, description="Škála Laplaceova šumu λ")

    # Evaluace
    eval_k: int = Field(20, ge=1)
    exclude_valid_in_eval: bool = True
    select_best_valid: bool = False
    run_analyses: bool = True

    # Běh
    seed: int = Field(default_factory=_get_seed, ge=0, description="Kořenový seed (≥ 0)")
    output_dir: Path = Field(default_factory=_get_output_dir)
    log_level: str = Field(default_factory=_get_log_level)

    @field_validator("base_fraction")
    @classmethod
    def _check_base_fraction(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"base_fraction musí být v (0,1) (zadáno: {v})")
        return v

    @field_validator("beta")
    @classmethod
    def _check_beta(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError(f"beta musí být v [0,1) (zadáno: {v})")
        return v

    @field_validator("client_fraction")
    @classmethod
    def _check_fraction(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"client_fraction musí být v (0,1] (zadáno: {v})")
        return v

    @model_validator(mode="after")
    def _check_ratios(self) -> "ExperimentConfig":
        if self.valid_ratio + self.test_ratio >= 1.0:
            raise ValueError(
                f"valid_ratio + test_ratio musí být < 1 "
                f"(zadáno: {self.valid_ratio} + {self.test_ratio})"
            )
        return self

    @property
    def profile(self) -> MethodProfile:
        """Přepínače mechanismů pro zvolenou metodu."""
        return method_profile(self.method)

    def provenance(self) -> dict[str, Any]:
        """Všechna pole konfigurace v JSON-kompatibilní podobě (pro manifest)."""
        return self.model_dump(mode="json")


def build_config(values: dict[str, Any]) -> ExperimentConfig:
    """
    Sestav ExperimentConfig ze slovníku, chyby převeď na FCRecConfigError.

    Klíč `preset` (pokud je uveden) nastaví schema, název datasetu
    a minimální počty interakcí; explicitní hodnoty mají přednost.
    """
    data = {k.replace("-", "_"): v for k, v in values.items() if v is not None}
    preset = data.pop("preset", None)
    if preset:
        schema, min_count = get_preset(str(preset))
        data.setdefault("dataset_schema", schema)
        data.setdefault("dataset_name", str(preset).lower())
        data.setdefault("min_user_interactions", min_count)
        data.setdefault("min_item_interactions", min_count)
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        messages = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise FCRecConfigError(f"Neplatná konfigurace: {messages}") from e


def read_config_file(path: Path) -> dict[str, str]:
    """
    Načti key-value konfigurační soubor.

    Formát: `klíč = hodnota` na řádek, `#` uvozuje komentář, pomlčky v klíčích
    se převádí na podtržítka.

    Raises:
        FCRecConfigError: Když soubor neexistuje nebo řádek nemá formát klíč=hodnota
    """
    if not path.exists():
        raise FCRecConfigError(f"Konfigurační soubor neexistuje: {path}")

    values: dict[str, str] = {}
    for line_number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FCRecConfigError(f"{path}:{line_number}: očekáván formát 'klíč = hodnota'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()

    logger.debug(f"Načten konfigurační soubor {path}: {len(values)} klíčů")
    return values
