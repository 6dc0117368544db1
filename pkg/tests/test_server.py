"""
Testy MCP serveru (server.py).

Volá nástroje a resources přes in-memory FastMCP klienta.
"""

import json

import pytest
from fastmcp import Client

from fcrec_sim.server import mcp

BASE_OVERRIDES = {
    "min_user_interactions": 1,
    "min_item_interactions": 1,
    "n_incremental": 2,
    "dim": 4,
    "eval_k": 5,
}


@pytest.fixture
async def client():
    async with Client(mcp) as c:
        yield c


async def _resource(client, uri: str) -> dict:
    contents = await client.read_resource(uri)
    return json.loads(contents[0].text)


class TestTools:
    """Testy MCP nástrojů."""

    async def test_tools_registered(self, client):
        names = {tool.name for tool in await client.list_tools()}
        assert {"run_experiment", "run_sweep", "report_results", "dataset_statistics"} <= names

    async def test_run_experiment(self, client, dataset_file, tmp_path):
        result = await client.call_tool(
            "run_experiment",
            {
                "method": "ft",
                "dataset_path": str(dataset_file),
                "rounds": 1,
                "output_dir": str(tmp_path / "mcp"),
                "overrides": BASE_OVERRIDES,
            },
        )
        data = result.structured_content
        assert data["summary"]["method"] == "ft"
        assert data["summary"]["blocks"] == 2
        assert (tmp_path / "mcp" / "results.tsv").is_file()

    async def test_dataset_statistics(self, client, dataset_file):
        result = await client.call_tool(
            "dataset_statistics",
            {
                "dataset_path": str(dataset_file),
                "min_user_interactions": 1,
                "min_item_interactions": 1,
                "n_incremental": 2,
            },
        )
        rows = result.structured_content["result"]
        assert [row["block"] for row in rows] == [0, 1, 2]

    async def test_invalid_config_is_tool_error(self, client):
        with pytest.raises(Exception, match="beta"):
            await client.call_tool("run_experiment", {"overrides": {"beta": 2.0}})


class TestResources:
    """Testy MCP resources."""

    async def test_methods(self, client):
        methods = await _resource(client, "fcrec://methods")
        assert methods["ft"]["server_retention"] == "none"
        assert methods["f3crec"]["adaptive_replay"] is True
        assert "method" not in methods["kd"]

    async def test_health(self, client):
        health = await _resource(client, "fcrec://health")
        assert health["status"] == "online"
        assert "fedncf1" in health["backbones"]
