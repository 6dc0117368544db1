"""
Příkazová řádka simulátoru.

Použití:
    fcrec-sim run --dataset ml-100k/u.data --method f3crec --seed 0 --out results/f3crec
    fcrec-sim sweep --config base.conf --grid eps=1e-4,1e-3 --grid beta=0.3,0.5
    fcrec-sim report results/ft results/f3crec
    fcrec-sim stats --dataset ml-100k/u.data

Priorita hodnot: CLI > konfigurační soubor > ENV > výchozí hodnoty.
"""

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd

from fcrec_sim import __version__
from fcrec_sim.config import (
    DATASET_PRESETS,
    Backbone,
    ExperimentConfig,
    Method,
    build_config,
    read_config_file,
)
from fcrec_sim.exceptions import FCRecConfigError, FCRecException
from fcrec_sim.experiment import dataset_statistics, report, run_experiment, sweep

logger = logging.getLogger("fcrec_sim")

# CLI volby mimo konvenci `--pole-configu`
_RENAMED = {"dataset": "dataset_path", "out": "output_dir"}


def _add_data_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("data")
    group.add_argument("--config", type=Path, help="Key-value konfigurační soubor")
    group.add_argument("--dataset", type=Path, help="Soubor interakcí (default: FCREC_DATA_PATH)")
    group.add_argument(
        "--preset", choices=sorted(DATASET_PRESETS), help="Preset schématu datasetu"
    )
    group.add_argument("--dataset-name", help="Popisek datasetu ve výsledcích")
    group.add_argument("--min-user-interactions", type=int)
    group.add_argument("--min-item-interactions", type=int)
    group.add_argument("--base-fraction", type=float)
    group.add_argument("--n-incremental", type=int)
    group.add_argument("--seed", type=int, help="Kořenový seed (default: FCREC_SEED nebo 0)")
    group.add_argument("--out", type=Path, help="Výstupní adresář (default: FCREC_OUTPUT_DIR)")
    group.add_argument("--log-level", help="DEBUG/INFO/WARNING (default: LOG_LEVEL nebo INFO)")


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model a trénink")
    group.add_argument("--method", choices=[m.value for m in Method])
    group.add_argument("--backbone", choices=[b.value for b in Backbone])
    group.add_argument("--dim", type=int)
    group.add_argument("--top-n", type=int)
    group.add_argument("--eps", type=float)
    group.add_argument("--beta", type=float)
    group.add_argument("--lambda-kd", type=float)
    group.add_argument("--mu-reg", type=float)
    group.add_argument("--lr", type=float)
    group.add_argument("--local-epochs", type=int)
    group.add_argument("--rounds", type=int)
    group.add_argument("--client-fraction", type=float)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--negative-ratio", type=int)
    group.add_argument("--noise", type=float, help="Škála Laplaceova šumu λ")
    group.add_argument("--eval-k", type=int)
    group.add_argument("--workers", type=int, help="Vlákna pro klientskou sekci kola")
    group.add_argument("--shift-every", choices=["batch", "epoch"])
    group.add_argument(
        "--select-best-valid",
        action="store_true",
        default=None,
        help="Výběr kola podle valid N@k",
    )
    group.add_argument(
        "--no-analyses", dest="run_analyses", action="store_false", default=None
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcrec-sim",
        description="Simulátor federovaného kontinuálního doporučování",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Spusť jeden experiment")
    _add_data_options(run)
    _add_model_options(run)

    sw = sub.add_parser("sweep", help="Sweep přes mřížku hyperparametrů")
    _add_data_options(sw)
    _add_model_options(sw)
    sw.add_argument(
        "--grid",
        action="append",
        default=[],
        metavar="KLÍČ=V1,V2,...",
        help="Osa mřížky (lze opakovat), např. eps=1e-4,1e-3",
    )

    rep = sub.add_parser("report", help="Tabulka výsledků z adresářů běhů")
    rep.add_argument("paths", nargs="+", type=Path)
    rep.add_argument("--log-level")

    stats = sub.add_parser("stats", help="Statistiky datových bloků")
    _add_data_options(stats)
    return parser


def parse_grid(specs: Sequence[str]) -> dict[str, list[str]]:
    """Převeď `klíč=v1,v2` na {klíč: [v1, v2]}."""
    grid: dict[str, list[str]] = {}
    for spec in specs:
        if "=" not in spec:
            raise FCRecConfigError(f"Neplatná osa mřížky '{spec}' (očekáváno klíč=v1,v2)")
        key, values = spec.split("=", 1)
        items = [v.strip() for v in values.split(",") if v.strip()]
        if not items:
            raise FCRecConfigError(f"Osa mřížky '{key}' nemá žádné hodnoty")
        grid[key.strip().replace("-", "_")] = items
    return grid


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Sestav konfiguraci: soubor, pak CLI přepisy."""
    values: dict[str, Any] = {}
    if getattr(args, "config", None) is not None:
        file_values = read_config_file(args.config)
        values.update({_RENAMED.get(k, k): v for k, v in file_values.items()})

    skip = {"command", "config", "grid", "paths"}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        values[_RENAMED.get(key, key)] = value
    return build_config(values)


def _setup_logging(level: str | None) -> None:
    name = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Vstupní bod; vrací exit code (0 úspěch, 1 chyba simulátoru)."""
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "log_level", None))

    try:
        if args.command == "report":
            print(report(args.paths))
            return 0

        config = config_from_args(args)
        if args.command == "run":
            run_experiment(config)
        elif args.command == "sweep":
            grid = parse_grid(args.grid)
            summaries = sweep(config, grid)
            table = pd.DataFrame(
                [
                    {**s.parameters, "avg_ndcg": s.avg_ndcg, "avg_recall": s.avg_recall}
                    for s in summaries
                ]
            )
            print(table.to_string(index=False))
        elif args.command == "stats":
            table = pd.DataFrame([s.model_dump() for s in dataset_statistics(config)])
            print(table.to_string(index=False))
    except FCRecException as e:
        logger.error(f"✗ {type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
