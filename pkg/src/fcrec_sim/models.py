"""
Pydantic modely výsledků simulátoru.

Definuje datové struktury pro evaluaci, reporty kol, statistiky bloků,
analýzy a souhrn experimentu.
"""

from pydantic import BaseModel, Field


# === Evaluace ===


class EvalResult(BaseModel):
    """Výsledek full-ranking evaluace jedné metriky na jednom bloku."""

    block: int = Field(..., ge=0, description="Index bloku t")
    metric: str = Field(..., description="Název metriky (např. ndcg@20)")
    value: float = Field(..., ge=0.0, le=1.0, description="Průměr přes uživatele")
    user_count: int = Field(..., ge=0, description="Počet evaluovaných uživatelů")
    skipped_users: int = Field(
        0, ge=0, description="Uživatelé s test daty, kteří nejsou v registru klientů"
    )


# === Federovaný trénink ===


class ClientLossSummary(BaseModel):
    """Souhrn lokálního tréninku jednoho klienta v kole."""

    user: int
    rec_loss: float = Field(..., description="Průměrná BCE recommendation loss")
    kd_loss: float = Field(0.0, description="Průměrná KD loss (0 bez distilace)")
    memory_size: int = Field(0, ge=0, description="Velikost replay paměti |M|")
    delta: int | None = Field(None, description="Preference shift Δ (poslední měření)")


class RoundReport(BaseModel):
    """Report jednoho kola federovaného tréninku."""

    block: int = Field(..., ge=0)
    round: int = Field(..., ge=1)
    participating_users: int = Field(..., ge=0)
    failed_users: int = Field(0, ge=0)
    mean_phi: float = Field(0.0, ge=0.0, description="Průměrný knowledge shift φ")
    mean_gamma: float = Field(0.0, ge=0.0, description="Průměrná retenční váha γ")
    mean_loss: float = Field(0.0, description="Průměrná loss přes klienty")
    clients: list[ClientLossSummary] = Field(default_factory=list)


# === Data ===


class BlockStats(BaseModel):
    """Statistiky datového bloku (řádek manifestu bloků)."""

    block: int = Field(..., ge=0)
    interactions: int = Field(..., ge=0)
    train: int = Field(..., ge=0)
    valid: int = Field(..., ge=0)
    test: int = Field(..., ge=0)
    users: int = Field(..., ge=0, description="Aktivní uživatelé v bloku")
    accumulated_users: int = Field(..., ge=0)
    accumulated_items: int = Field(..., ge=0)
    sparsity: float = Field(..., ge=0.0, le=1.0)
    min_timestamp: int
    max_timestamp: int


# === Analýzy ===


class AnalysisResult(BaseModel):
    """Jedna hodnota analýzy (degradace, ranking change rate, ...)."""

    analysis: str = Field(..., description="Název analýzy")
    segment: str = Field(..., description="Segment (static/dynamic/gap/all)")
    block: int = Field(..., ge=0, description="Blok, ke kterému se hodnota vztahuje")
    value: float


# === Souhrn ===


class ExperimentSummary(BaseModel):
    """Souhrnný řádek běhu (Avg přes inkrementální bloky)."""

    method: str
    backbone: str
    dataset: str
    seed: int
    blocks: int = Field(..., ge=0, description="Počet evaluovaných inkrementálních bloků")
    avg_ndcg: float = Field(..., description="Průměrné N@k přes D1..DT")
    avg_recall: float = Field(..., description="Průměrné R@k přes D1..DT")
    output_dir: str
    parameters: dict[str, float | int | str] = Field(
        default_factory=dict, description="Hodnoty parametrů sweepu"
    )
