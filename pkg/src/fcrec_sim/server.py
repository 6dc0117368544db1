"""
FCRec MCP Server - FastMCP rozhraní k simulátoru federovaného kontinuálního doporučování.

Poskytuje AI agentům spouštění experimentů, sweepů, reportů a statistik datových bloků.
"""

import asyncio
import logging
import os
from pathlib import Path
from typing import Any, Literal

from fastmcp import Context, FastMCP
from fastmcp.dependencies import CurrentContext
from fastmcp.server.middleware.error_handling import ErrorHandlingMiddleware
from fastmcp.server.middleware.logging import LoggingMiddleware
from fastmcp.server.middleware.rate_limiting import RateLimitingMiddleware
from fastmcp.server.middleware.timing import TimingMiddleware

# Absolutní importy pro FastMCP Cloud compatibility
from fcrec_sim import experiment
from fcrec_sim.config import Backbone, ExperimentConfig, Method, build_config, method_profile

# Logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SERVER_VERSION = "1.0.0"


# === FastMCP instance ===

mcp = FastMCP(
    name="FCRec Simulator",
    version=SERVER_VERSION,
    instructions="""
    Tento MCP server spouští simulace federovaného kontinuálního doporučování.

    Umožňuje:
    - Spustit experiment (metoda, baseline nebo ablace) na datasetu interakcí
    - Sweep přes mřížku hyperparametrů (ε, β, λ_KD, η, šum λ)
    - Report výsledků (N@k, R@k po blocích, Avg, Improv. vůči FT)
    - Statistiky datových bloků po předzpracování

    Výsledky se zapisují do výstupního adresáře (FCREC_OUTPUT_DIR).
    """,
)

# === Middleware Stack ===
# Pořadí: ErrorHandling -> RateLimiting -> Timing -> Logging
mcp.add_middleware(ErrorHandlingMiddleware())
mcp.add_middleware(RateLimitingMiddleware(max_requests_per_second=10))
mcp.add_middleware(TimingMiddleware())
mcp.add_middleware(LoggingMiddleware())


# === MCP Prompts ===


@mcp.prompt
def compare_methods_prompt(dataset_path: str) -> str:
    """Vytvoří dotaz pro porovnání F³CRec s baseline metodami."""
    return f"""Porovnej metody na datasetu {dataset_path}:

1. Spusť run_experiment pro metody ft, reg, kd a f3crec se stejným seedem
2. Zavolej report_results na výstupní adresáře všech běhů
3. Shrň průměrné N@20 přes inkrementální bloky a relativní zlepšení vůči FT"""


# === Helpers ===


def _config(
    values: dict[str, Any], overrides: dict[str, Any] | None
) -> ExperimentConfig:
    merged = {k: v for k, v in values.items() if v is not None}
    merged.update(overrides or {})
    return build_config(merged)


async def _in_thread(func: Any, *args: Any) -> Any:
    """Spusť blokující výpočet mimo event loop."""
    loop = asyncio.get_running_loop()
    return await loop.run_in_executor(None, func, *args)


# === MCP Tools ===


@mcp.tool(
    tags={"simulation"},
    annotations={"readOnlyHint": False, "idempotentHint": True, "openWorldHint": False},
)
async def run_experiment(
    method: str = "f3crec",
    dataset_path: str | None = None,
    preset: str | None = None,
    rounds: int | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
    overrides: dict[str, Any] | None = None,
    ctx: Context = CurrentContext(),
) -> dict:
    """
    Spustí jeden experiment a zapíše výsledkové soubory.

    Args:
        method: f3crec, ft, reg, kd nebo ablace f3crec_wo_cc/_arm/_sc/_itm
        dataset_path: Soubor interakcí (default: FCREC_DATA_PATH)
        preset: Preset schématu (ml-100k, ml-latest-small, lastfm-2k, hetrec2011)
        rounds: Počet kol na blok
        seed: Kořenový seed
        output_dir: Výstupní adresář
        overrides: Další pole konfigurace (např. {"beta": 0.3, "noise": 0.1})

    Returns:
        Souhrn (Avg N@k/R@k), výsledky po blocích a analýzy

    Examples:
        - run_experiment("ft", "data/u.data", rounds=10)
        - run_experiment("f3crec", preset="ml-100k", overrides={"eps": 0.001})
    """
    config = _config(
        {
            "method": method,
            "dataset_path": dataset_path,
            "preset": preset,
            "rounds": rounds,
            "seed": seed,
            "output_dir": output_dir,
        },
        overrides,
    )
    if ctx:
        await ctx.info(f"Running {config.method.value} on {config.dataset_path}")

    result = await _in_thread(experiment.run_experiment, config)
    return {
        "summary": result.summary.model_dump(mode="json"),
        "results": [e.model_dump() for e in result.evals],
        "analyses": [a.model_dump() for a in result.analyses],
    }


@mcp.tool(
    tags={"simulation", "sweep"},
    annotations={"readOnlyHint": False, "idempotentHint": True, "openWorldHint": False},
)
async def run_sweep(
    grid: dict[str, list[Any]],
    method: str = "f3crec",
    dataset_path: str | None = None,
    preset: str | None = None,
    rounds: int | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
    overrides: dict[str, Any] | None = None,
    ctx: Context = CurrentContext(),
) -> list[dict]:
    """
    Sweep přes mřížku hyperparametrů se sdílenými datovými splity.

    Args:
        grid: Osy mřížky, např. {"eps": [1e-4, 1e-3], "beta": [0.3, 0.5]}
        method: Metoda pro všechny body mřížky (nebo osa "method")

    Returns:
        Jeden souhrnný řádek na bod mřížky
    """
    config = _config(
        {
            "method": method,
            "dataset_path": dataset_path,
            "preset": preset,
            "rounds": rounds,
            "seed": seed,
            "output_dir": output_dir,
        },
        overrides,
    )
    if ctx:
        await ctx.info(f"Sweep over {', '.join(grid)}")
    summaries = await _in_thread(experiment.sweep, config, grid)
    return [s.model_dump(mode="json") for s in summaries]


@mcp.tool(
    tags={"report"},
    annotations={"readOnlyHint": True, "idempotentHint": True, "openWorldHint": False},
)
async def report_results(paths: list[str]) -> str:
    """
    Formátovaná tabulka výsledků (bloky, Avg, Improv. vůči FT, Decrease ablací).

    Args:
        paths: Výstupní adresáře běhů nebo sweepů
    """
    return await _in_thread(experiment.report, [Path(p) for p in paths])


@mcp.tool(
    tags={"data"},
    annotations={"readOnlyHint": True, "idempotentHint": True, "openWorldHint": False},
)
async def dataset_statistics(
    dataset_path: str | None = None,
    preset: str | None = None,
    min_user_interactions: int | None = None,
    min_item_interactions: int | None = None,
    base_fraction: float | None = None,
    n_incremental: int | None = None,
) -> list[dict]:
    """
    Statistiky datových bloků po předzpracování (interakce, uživatelé, položky, sparsity).

    Examples:
        - dataset_statistics("data/u.data")
        - dataset_statistics("data/tags.dat", preset="lastfm-2k")
    """
    config = _config(
        {
            "dataset_path": dataset_path,
            "preset": preset,
            "min_user_interactions": min_user_interactions,
            "min_item_interactions": min_item_interactions,
            "base_fraction": base_fraction,
            "n_incremental": n_incremental,
        },
        None,
    )
    stats = await _in_thread(experiment.dataset_statistics, config)
    return [s.model_dump() for s in stats]


# === MCP Resources ===


@mcp.resource("fcrec://methods")
async def get_methods_resource() -> dict:
    """Profily metod: které client/server mechanismy jsou zapnuté."""
    return {m.value: method_profile(m).model_dump(mode="json", exclude={"method"}) for m in Method}


@mcp.resource("fcrec://health")
async def get_health_resource() -> dict:
    """Stav serveru a podporované metody/backbone."""
    return {
        "status": "online",
        "version": SERVER_VERSION,
        "methods": [m.value for m in Method],
        "backbones": [b.value for b in Backbone],
        "data_path": os.getenv("FCREC_DATA_PATH"),
    }


def main() -> None:
    """Spusť MCP server s automatickou detekcí transportu."""
    transport_str = os.getenv("MCP_TRANSPORT", "stdio").lower()

    if transport_str in {"http", "sse", "streamable-http"}:
        transport: Literal["http", "sse", "streamable-http"] = transport_str  # type: ignore[assignment]
        host = os.getenv("MCP_HOST", "0.0.0.0")
        port = int(os.getenv("MCP_PORT", "8000"))

        logger.info(f"Starting FCRec MCP Server on {transport}://{host}:{port}")
        mcp.run(transport=transport, host=host, port=port)
    else:
        logger.info("Starting FCRec MCP Server on stdio")
        mcp.run()


if __name__ == "__main__":
    main()
