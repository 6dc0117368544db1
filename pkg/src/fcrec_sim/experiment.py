"""
Orchestrace experimentu.

Implementuje:
- Blokový cyklus 𝒟⁰..𝒟ᵀ (R kol na blok, evaluace po každém bloku)
- Analýzu degradace statických/dynamických uživatelů
- Analýzu ranking change rate statických/dynamických položek
- Zápis výsledkových souborů (TSV, JSONL, manifest)
- Sweep přes mřížku hyperparametrů se sdílenými splity
- Report: průměry po blocích, Improv. vůči FT a Decrease vůči F³CRec
"""

import itertools
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from fcrec_sim.backbone import get_backbone
from fcrec_sim.client_cl import ClientRegistry
from fcrec_sim.config import ExperimentConfig, build_config
from fcrec_sim.data_pipeline import DataBlock, block_stats, prepare_blocks, write_block_manifest
from fcrec_sim.evaluation import (
    accumulate_exclusions,
    degradation_rate,
    full_ranking_eval,
    item_ranking_change_rate,
    per_user_metrics,
    segment_by_quantile,
    segment_users_by_shift,
    user_item_ranks,
)
from fcrec_sim.exceptions import FCRecConfigError, FCRecDataError
from fcrec_sim.models import (
    AnalysisResult,
    BlockStats,
    EvalResult,
    ExperimentSummary,
    RoundReport,
)
from fcrec_sim.server_cl import GlobalState, advance_block, init_global, run_round

logger = logging.getLogger(__name__)

# Hyperparametry, přes které lze sweepovat (nemění datové splity)
SWEEP_AXES = frozenset(
    {
        "eps",
        "beta",
        "lambda_kd",
        "mu_reg",
        "lr",
        "noise",
        "top_n",
        "rounds",
        "local_epochs",
        "client_fraction",
        "method",
        "backbone",
    }
)

SEGMENT_QUANTILE = 0.2


@dataclass
class ExperimentResult:
    """Výsledek jednoho běhu."""

    summary: ExperimentSummary
    evals: list[EvalResult] = field(default_factory=list)
    rounds: list[RoundReport] = field(default_factory=list)
    analyses: list[AnalysisResult] = field(default_factory=list)
    blocks: list[BlockStats] = field(default_factory=list)


# === Analýzy ===


class UserDegradationAnalysis:
    """
    Degradace výkonu na 𝒟⁰ pro statické a dynamické uživatele.

    Δ se měří po prvním kole bloku 1 pro uživatele přítomné v 𝒟⁰ i 𝒟¹.
    N@k na test 𝒟⁰ se měří po bloku 0 a po bloku 1 nad ℐ⁰ se stejnou
    množinou vyřazených položek.
    """

    def __init__(self, base_block: DataBlock, config: ExperimentConfig):
        self.base_block = base_block
        self.k = config.eval_k
        self.exclusions = accumulate_exclusions([base_block], config.exclude_valid_in_eval)
        self.n_items = 0
        self.a_prev: dict[int, float] = {}
        self.shifts: dict[int, int] = {}

    def _ndcg(self, registry: ClientRegistry, state: GlobalState) -> dict[int, float]:
        table = state.q_current.prefix(self.n_items)
        per_user = per_user_metrics(
            registry, table, self.base_block.test_by_user, self.exclusions, self.k
        )
        return {user: values[0] for user, values in per_user.items()}

    def record_base(self, registry: ClientRegistry, state: GlobalState) -> None:
        self.n_items = len(state.q_current)
        self.a_prev = self._ndcg(registry, state)

    def record_shift(self, registry: ClientRegistry, state: GlobalState) -> None:
        for user in sorted(state.active_users & self.base_block.users):
            delta = registry.measure_shift(user, state.q_current)
            if delta is not None:
                self.shifts[user] = delta

    def finish(self, registry: ClientRegistry, state: GlobalState) -> list[AnalysisResult]:
        a_now = self._ndcg(registry, state)
        population = {u: d for u, d in self.shifts.items() if u in self.a_prev and u in a_now}
        if len(population) < 2:
            logger.warning("Analýza degradace: málo uživatelů s Δ, přeskočeno")
            return []

        static, dynamic = segment_users_by_shift(population, SEGMENT_QUANTILE)
        results: list[AnalysisResult] = []
        rates: dict[str, float] = {}
        for segment, users in (("static", static), ("dynamic", dynamic)):
            before = float(np.mean([self.a_prev[u] for u in users]))
            after = float(np.mean([a_now[u] for u in users]))
            results.append(
                AnalysisResult(analysis="base_ndcg", segment=segment, block=0, value=before)
            )
            results.append(
                AnalysisResult(analysis="previous_task_ndcg", segment=segment, block=1, value=after)
            )
            results.append(
                AnalysisResult(
                    analysis="mean_shift",
                    segment=segment,
                    block=1,
                    value=float(np.mean([population[u] for u in users])),
                )
            )
            if before > 0:
                rates[segment] = degradation_rate(before, after)
                results.append(
                    AnalysisResult(
                        analysis="degradation_rate", segment=segment, block=1, value=rates[segment]
                    )
                )
        if len(rates) == 2:
            results.append(
                AnalysisResult(
                    analysis="degradation_rate",
                    segment="gap",
                    block=1,
                    value=rates["dynamic"] - rates["static"],
                )
            )
        logger.info(
            f"  ✓ degradace: static={rates.get('static', float('nan')):.4f}, "
            f"dynamic={rates.get('dynamic', float('nan')):.4f} ({len(population)} uživatelů)"
        )
        return results


class ItemRankChangeAnalysis:
    """
    Ranking change rate statických a dynamických položek při přechodu t−1 → t.

    Populace: uživatelé trénovaní v 𝒟ᵗ⁻¹, ale ne v 𝒟ᵗ. Pořadí se počítá nad
    ℐᵗ⁻¹ na konci obou bloků; položky se dělí podle φ z posledního kola bloku t.
    """

    def __init__(self) -> None:
        self.n_prev = 0
        self.ranks_prev: dict[int, np.ndarray] = {}
        self.per_transition: dict[str, list[float]] = {"static": [], "dynamic": [], "gap": []}
        self.last_block = 0

    def before_advance(
        self, registry: ClientRegistry, state: GlobalState, next_block: DataBlock
    ) -> None:
        users = state.trained_users - set(next_block.train_by_user)
        self.n_prev = len(state.q_current)
        self.ranks_prev = user_item_ranks(registry, users, state.q_current)

    def after_block(
        self, registry: ClientRegistry, state: GlobalState
    ) -> list[AnalysisResult]:
        if not self.ranks_prev or state.last_phi is None or self.n_prev < 2:
            return []
        table = state.q_current.prefix(self.n_prev)
        phi = {int(item): float(v) for item, v in zip(table.item_ids, state.last_phi, strict=True)}
        static, dynamic = segment_by_quantile(phi, SEGMENT_QUANTILE)
        ranks_now = user_item_ranks(registry, self.ranks_prev, table)

        results: list[AnalysisResult] = []
        rates: dict[str, float] = {}
        for segment, items in (("static", static), ("dynamic", dynamic)):
            positions = table.positions(items)
            prev = np.concatenate([self.ranks_prev[u][positions] for u in sorted(ranks_now)])
            now = np.concatenate([ranks_now[u][positions] for u in sorted(ranks_now)])
            rates[segment] = item_ranking_change_rate(prev, now)
        rates["gap"] = rates["dynamic"] - rates["static"]
        for segment, value in rates.items():
            self.per_transition[segment].append(value)
            results.append(
                AnalysisResult(
                    analysis="item_ranking_change", segment=segment, block=state.block, value=value
                )
            )
        self.last_block = state.block
        logger.info(
            f"  ✓ ranking change {state.block - 1}→{state.block}: "
            f"static={rates['static']:.4f}, dynamic={rates['dynamic']:.4f}"
        )
        return results

    def summary(self) -> list[AnalysisResult]:
        return [
            AnalysisResult(
                analysis="item_ranking_change_avg",
                segment=segment,
                block=self.last_block,
                value=float(np.mean(values)),
            )
            for segment, values in self.per_transition.items()
            if values
        ]


# === Běh experimentu ===


def _train_block(
    state: GlobalState,
    registry: ClientRegistry,
    block: DataBlock,
    valid_exclusions: dict[int, set[int]],
    config: ExperimentConfig,
    rounds: list[RoundReport],
    degradation: UserDegradationAnalysis | None,
) -> GlobalState:
    best: tuple[float, GlobalState, dict] | None = None
    for r in range(config.rounds):
        state, report = run_round(state, registry, config)
        rounds.append(report)
        if r == 0 and degradation is not None and block.index == 1:
            degradation.record_shift(registry, state)
        if config.select_best_valid:
            valid = full_ranking_eval(
                registry, state.q_current, block, valid_exclusions, config.eval_k, split="valid"
            )
            if valid and (best is None or valid[0].value > best[0]):
                best = (valid[0].value, state, registry.snapshot())

    if best is not None:
        logger.info(f"  ✓ vybráno kolo {best[1].round} (valid N@{config.eval_k}={best[0]:.4f})")
        state = best[1]
        registry.restore(best[2])
    return state


def run_experiment(
    config: ExperimentConfig, blocks: list[DataBlock] | None = None, write: bool = True
) -> ExperimentResult:
    """
    Spusť celý experiment: 𝒟⁰ (bez CL mechanismů) a poté inkrementální bloky.

    Args:
        config: Validovaná konfigurace
        blocks: Předpřipravené bloky (sweep sdílí splity); jinak prepare_blocks
        write: Zapsat výsledkové soubory do config.output_dir

    Returns:
        ExperimentResult se souhrnem (Avg přes 𝒟¹..𝒟ᵀ)

    Raises:
        FCRecDataError: Chyba datové pipeline
        FCRecAggregationError: Všichni klienti v kole selhali
    """
    if blocks is None:
        blocks = prepare_blocks(config)
    if not blocks:
        raise FCRecDataError("Žádné datové bloky")

    logger.info(
        f"Experiment: method={config.method.value}, backbone={config.backbone.value}, "
        f"dataset={config.dataset_name}, seed={config.seed}, bloky={len(blocks)}"
    )

    backbone = get_backbone(config.backbone, config.dim, config.init_scale)
    registry = ClientRegistry(backbone, config)
    state = init_global(blocks[0], registry, backbone, config.seed)

    evals: list[EvalResult] = []
    rounds: list[RoundReport] = []
    analyses: list[AnalysisResult] = []
    degradation = (
        UserDegradationAnalysis(blocks[0], config)
        if config.run_analyses and len(blocks) > 1 and blocks[0].is_split
        else None
    )
    rank_change = ItemRankChangeAnalysis() if config.run_analyses else None

    for t, block in enumerate(blocks):
        if t > 0:
            if rank_change is not None:
                rank_change.before_advance(registry, state, block)
            state = advance_block(state, block, registry, backbone, config.seed)

        logger.info(f"Blok {t}: {config.rounds} kol, {len(state.active_users)} klientů")
        valid_exclusions = accumulate_exclusions(blocks[: t + 1], include_valid=False)
        state = _train_block(
            state, registry, block, valid_exclusions, config, rounds, degradation
        )

        exclusions = accumulate_exclusions(blocks[: t + 1], config.exclude_valid_in_eval)
        block_evals = full_ranking_eval(
            registry, state.q_current, block, exclusions, config.eval_k
        )
        evals.extend(block_evals)
        if block_evals:
            logger.info(
                f"  ✓ blok {t}: N@{config.eval_k}={block_evals[0].value:.4f}, "
                f"R@{config.eval_k}={block_evals[1].value:.4f} "
                f"({block_evals[0].user_count} uživatelů, "
                f"{block_evals[0].skipped_users} neregistrovaných)"
            )
        else:
            logger.warning(f"  ✗ blok {t}: žádní uživatelé s test daty")

        if degradation is not None and t == 0:
            degradation.record_base(registry, state)
        if degradation is not None and t == 1:
            analyses.extend(degradation.finish(registry, state))
        if rank_change is not None and t > 0:
            analyses.extend(rank_change.after_block(registry, state))

    if rank_change is not None:
        analyses.extend(rank_change.summary())

    result = ExperimentResult(
        summary=_summarize(config, evals),
        evals=evals,
        rounds=rounds,
        analyses=analyses,
        blocks=[block_stats(b) for b in blocks],
    )
    if write:
        write_results(result, config, blocks)
    logger.info(
        f"Hotovo: Avg N@{config.eval_k}={result.summary.avg_ndcg:.4f}, "
        f"Avg R@{config.eval_k}={result.summary.avg_recall:.4f}"
    )
    return result


def _summarize(
    config: ExperimentConfig, evals: list[EvalResult], parameters: dict[str, Any] | None = None
) -> ExperimentSummary:
    incremental = [e for e in evals if e.block >= 1]
    ndcg = [e.value for e in incremental if e.metric.startswith("ndcg")]
    recall = [e.value for e in incremental if e.metric.startswith("recall")]
    return ExperimentSummary(
        method=config.method.value,
        backbone=config.backbone.value,
        dataset=config.dataset_name,
        seed=config.seed,
        blocks=len(ndcg),
        avg_ndcg=float(np.mean(ndcg)) if ndcg else 0.0,
        avg_recall=float(np.mean(recall)) if recall else 0.0,
        output_dir=str(config.output_dir),
        parameters=parameters or {},
    )


# === Výsledkové soubory ===


def write_results(
    result: ExperimentResult, config: ExperimentConfig, blocks: list[DataBlock]
) -> None:
    """Zapiš výsledkové soubory běhu a manifest bloků do config.output_dir."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    labels = {
        "method": config.method.value,
        "backbone": config.backbone.value,
        "dataset": config.dataset_name,
    }

    results = pd.DataFrame(
        [
            {
                **labels,
                **e.model_dump(exclude={"user_count", "skipped_users"}),
                "seed": config.seed,
            }
            for e in result.evals
        ],
        columns=["method", "backbone", "dataset", "block", "metric", "value", "seed"],
    )
    results.to_csv(out / "results.tsv", sep="\t", index=False)

    with open(out / "rounds.jsonl", "w", encoding="utf-8") as f:
        for report in result.rounds:
            f.write(report.model_dump_json() + "\n")

    analysis = pd.DataFrame(
        [{**a.model_dump(), "seed": config.seed} for a in result.analyses],
        columns=["analysis", "segment", "block", "value", "seed"],
    )
    analysis.to_csv(out / "analysis.tsv", sep="\t", index=False)

    summary_row = result.summary.model_dump(exclude={"parameters", "output_dir"})
    pd.DataFrame([summary_row]).to_csv(out / "summary.tsv", sep="\t", index=False)

    manifest = {
        "config": config.provenance(),
        "summary": result.summary.model_dump(mode="json"),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    write_block_manifest(blocks, out)
    logger.info(f"Výsledky zapsány do {out}")


# === Sweep ===


def _plain(value: Any) -> float | int | str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (int, float, str)):
        return value
    return str(value)


def sweep(config: ExperimentConfig, grid: Mapping[str, Sequence[Any]]) -> list[ExperimentSummary]:
    """
    Spusť run_experiment pro každý bod mřížky se sdílenými datovými splity.

    Každý bod zapisuje do podadresáře `<klíč>=<hodnota>_...`; souhrn všech bodů
    jde do `sweep.tsv` v config.output_dir.

    Raises:
        FCRecConfigError: Prázdná mřížka nebo osa, která by měnila splity
    """
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise FCRecConfigError("Mřížka sweepu je prázdná")
    unknown = sorted(set(grid) - SWEEP_AXES)
    if unknown:
        raise FCRecConfigError(
            f"Nepodporované osy sweepu: {', '.join(unknown)} "
            f"(povolené: {', '.join(sorted(SWEEP_AXES))})"
        )

    blocks = prepare_blocks(config)
    keys = list(grid)
    base = config.model_dump()
    summaries: list[ExperimentSummary] = []

    for values in itertools.product(*(grid[k] for k in keys)):
        raw = dict(zip(keys, values, strict=True))
        name = "_".join(f"{k}={v}" for k, v in raw.items())
        point_config = build_config({**base, **raw, "output_dir": config.output_dir / name})
        parameters = {k: _plain(getattr(point_config, k)) for k in keys}
        logger.info(f"Sweep bod: {parameters}")
        result = run_experiment(point_config, blocks=blocks)
        summaries.append(result.summary.model_copy(update={"parameters": parameters}))

    rows = [{**s.parameters, **s.model_dump(exclude={"parameters"})} for s in summaries]
    config.output_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(config.output_dir / "sweep.tsv", sep="\t", index=False)
    logger.info(f"Sweep hotov: {len(summaries)} bodů")
    return summaries


# === Report ===


def _result_files(paths: Sequence[Path]) -> list[Path]:
    files: list[Path] = []
    for path in paths:
        path = Path(path)
        if path.is_file():
            files.append(path)
        elif (path / "results.tsv").is_file():
            files.append(path / "results.tsv")
        elif path.is_dir() and sorted(path.glob("*/results.tsv")):
            files.extend(sorted(path.glob("*/results.tsv")))
        else:
            raise FCRecDataError(f"Výsledkový soubor nenalezen: {path}")
    return files


def load_results(paths: Sequence[Path]) -> pd.DataFrame:
    """Načti a spoj results.tsv z adresářů běhů (nebo sweepů)."""
    if not paths:
        raise FCRecDataError("Nebyly zadány žádné výsledky")
    frames = [pd.read_csv(f, sep="\t") for f in _result_files(paths)]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    if df.empty:
        raise FCRecDataError("Prázdný výsledek: žádné řádky ve výsledkových souborech")
    return df


def relative_change(value: float, baseline: float) -> float:
    """(value − baseline) / baseline v procentech; NaN pro nekladný baseline."""
    if baseline <= 0:
        return float("nan")
    return (value - baseline) / baseline * 100.0


def report_table(results: pd.DataFrame) -> pd.DataFrame:
    """
    Tabulka: řádek = (dataset, backbone, metric, method), sloupce = bloky, Avg,
    Improv. (%) vůči FT a Decrease (%) ablací vůči F³CRec.
    """
    grouped = (
        results.groupby(["dataset", "backbone", "metric", "method", "block"])["value"]
        .mean()
        .unstack("block")
    )
    grouped.columns = [f"D{int(b)}" for b in grouped.columns]
    incremental = [c for c in grouped.columns if c != "D0"]
    grouped["Avg"] = grouped[incremental].mean(axis=1) if incremental else np.nan

    improv: list[float] = []
    decrease: list[float] = []
    for (dataset, backbone, metric, method), row in grouped.iterrows():
        ft_key = (dataset, backbone, metric, "ft")
        full_key = (dataset, backbone, metric, "f3crec")
        improv.append(
            relative_change(row["Avg"], grouped.loc[ft_key, "Avg"])
            if ft_key in grouped.index
            else float("nan")
        )
        decrease.append(
            -relative_change(row["Avg"], grouped.loc[full_key, "Avg"])
            if method.startswith("f3crec_wo") and full_key in grouped.index
            else float("nan")
        )
    grouped["Improv(%)"] = improv
    grouped["Decrease(%)"] = decrease
    return grouped.reset_index()


def report(paths: Sequence[Path]) -> str:
    """Formátovaná tabulka výsledků pro zadané běhy."""
    table = report_table(load_results(paths))
    return table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


def dataset_statistics(config: ExperimentConfig) -> list[BlockStats]:
    """Statistiky bloků po předzpracování."""
    return [block_stats(b) for b in prepare_blocks(config)]
