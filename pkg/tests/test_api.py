import orjson
import pytest
import yaml
from fastapi.testclient import TestClient
from typer.testing import CliRunner

import main
from tests.conftest import TINY


@pytest.fixture
def client():
    return TestClient(main.app)


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


class TestHTTP:
    def test_health(self, client):
        response = client.get("/")
        assert response.status_code == 200
        assert response.json()["status"] == "online"

    def test_run_experiment(self, client):
        response = client.post("/experiments", json=TINY)
        assert response.status_code == 200
        document = response.json()
        assert document["config"]["sampler"] == "ntd"
        assert [t["seed"] for t in document["trials"]] == [0]
        assert "last_test_accuracy" in document["aggregate"]

    def test_compare(self, client):
        response = client.post("/experiments", json={**TINY, "compare": True})
        assert response.status_code == 200
        document = response.json()
        assert [e["config"]["sampler"] for e in document["experiments"]] == ["ntd", "reservoir"]

    def test_invalid_config(self, client):
        response = client.post("/experiments", json={**TINY, "noise_rate": 3.0})
        assert response.status_code == 400

    def test_unknown_key(self, client):
        response = client.post("/experiments", json={**TINY, "epochs": 3})
        assert response.status_code == 400


class TestCLI:
    def test_run_writes_results(self, tiny_yaml, tmp_path):
        out = tmp_path / "out" / "ntd.json"
        result = CliRunner().invoke(main.cli, ["run", "--config", str(tiny_yaml), "--out", str(out)])
        assert result.exit_code == 0, result.output
        document = orjson.loads(out.read_bytes())
        assert document["config"]["memory_size"] == 40
        assert '"ntd"' in result.output

    def test_overrides_and_paired_comparison(self, tiny_yaml, tmp_path):
        out = tmp_path / "compare.json"
        result = CliRunner().invoke(main.cli, [
            "run", "--config", str(tiny_yaml), "--out", str(out),
            "--sampler", "both", "--noise-type", "asym", "--seeds", "0,1", "--tta", "4",
        ])
        assert result.exit_code == 0, result.output
        document = orjson.loads(out.read_bytes())
        for experiment in document["experiments"]:
            assert experiment["config"]["stream"]["noise_type"] == "asymmetric"
            assert experiment["config"]["trials"] == [0, 1]
            assert experiment["config"]["tta"]["jitter_count"] == 2
        assert (tmp_path / "compare.comparison.csv").exists()

    def test_invalid_noise_rate(self, tiny_yaml, tmp_path):
        result = CliRunner().invoke(main.cli, [
            "run", "--config", str(tiny_yaml), "--noise-rate", "1.5", "--out", str(tmp_path / "x.json"),
        ])
        assert result.exit_code == 1
        assert "ConfigError" in result.output
        assert not (tmp_path / "x.json").exists()

    def test_bad_seed_list(self, tiny_yaml):
        result = CliRunner().invoke(main.cli, ["run", "--config", str(tiny_yaml), "--seeds", "0,a"])
        assert result.exit_code != 0
