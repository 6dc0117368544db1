"""Testy příkazové řádky (cli.py)."""

import pytest

from fcrec_sim.cli import build_parser, config_from_args, main, parse_grid
from fcrec_sim.exceptions import FCRecConfigError


class TestParseGrid:
    """Testy parse_grid."""

    def test_axes(self):
        assert parse_grid(["eps=1e-4,1e-3", "lambda-kd=0.1"]) == {
            "eps": ["1e-4", "1e-3"],
            "lambda_kd": ["0.1"],
        }

    def test_missing_equals(self):
        with pytest.raises(FCRecConfigError, match="Neplatná osa"):
            parse_grid(["eps"])

    def test_no_values(self):
        with pytest.raises(FCRecConfigError, match="nemá žádné hodnoty"):
            parse_grid(["eps= , "])


class TestConfigPrecedence:
    """CLI > konfigurační soubor > ENV > výchozí hodnoty."""

    def test_cli_overrides_file(self, tmp_path):
        conf = tmp_path / "base.conf"
        conf.write_text("method = kd\nrounds = 7\nbeta = 0.2\n", encoding="utf-8")
        args = build_parser().parse_args(
            ["run", "--config", str(conf), "--rounds", "3", "--out", str(tmp_path / "o")]
        )
        config = config_from_args(args)
        assert config.method.value == "kd"
        assert config.rounds == 3
        assert config.beta == 0.2
        assert config.output_dir == tmp_path / "o"

    def test_file_renamed_keys(self, tmp_path):
        conf = tmp_path / "base.conf"
        conf.write_text(f"dataset = {tmp_path / 'u.data'}\n", encoding="utf-8")
        args = build_parser().parse_args(["run", "--config", str(conf)])
        assert config_from_args(args).dataset_path == tmp_path / "u.data"

    def test_file_overrides_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FCREC_SEED", "9")
        conf = tmp_path / "base.conf"
        conf.write_text("seed = 4\n", encoding="utf-8")
        args = build_parser().parse_args(["run", "--config", str(conf)])
        assert config_from_args(args).seed == 4

    def test_env_default(self, monkeypatch):
        monkeypatch.setenv("FCREC_SEED", "9")
        assert config_from_args(build_parser().parse_args(["run"])).seed == 9

    def test_boolean_flags(self):
        args = build_parser().parse_args(["run", "--select-best-valid", "--no-analyses"])
        config = config_from_args(args)
        assert config.select_best_valid is True
        assert config.run_analyses is False


class TestMain:
    """Exit kódy a výstupy main()."""

    def test_run_writes_results(self, dataset_file, tmp_path):
        out = tmp_path / "run"
        code = main(
            [
                "run",
                "--dataset",
                str(dataset_file),
                "--min-user-interactions",
                "1",
                "--min-item-interactions",
                "1",
                "--n-incremental",
                "2",
                "--dim",
                "4",
                "--rounds",
                "1",
                "--eval-k",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert (out / "results.tsv").is_file()

    def test_report(self, dataset_file, tmp_path, capsys):
        out = tmp_path / "run"
        main(
            [
                "run",
                "--dataset",
                str(dataset_file),
                "--min-user-interactions",
                "1",
                "--min-item-interactions",
                "1",
                "--rounds",
                "1",
                "--method",
                "ft",
                "--out",
                str(out),
            ]
        )
        capsys.readouterr()
        assert main(["report", str(out)]) == 0
        assert "Improv(%)" in capsys.readouterr().out

    def test_stats(self, dataset_file, capsys):
        code = main(
            [
                "stats",
                "--dataset",
                str(dataset_file),
                "--min-user-interactions",
                "1",
                "--min-item-interactions",
                "1",
            ]
        )
        assert code == 0
        assert "sparsity" in capsys.readouterr().out

    def test_missing_dataset_returns_error(self, tmp_path):
        assert main(["run", "--dataset", str(tmp_path / "missing.data")]) == 1

    def test_invalid_config_returns_error(self, dataset_file):
        assert main(["run", "--dataset", str(dataset_file), "--beta", "1.5"]) == 1

    def test_report_missing_results(self, tmp_path):
        assert main(["report", str(tmp_path / "nothing")]) == 1

    def test_sweep_rejects_split_axis(self, dataset_file):
        code = main(["sweep", "--dataset", str(dataset_file), "--grid", "base-fraction=0.5,0.6"])
        assert code == 1

    def test_unknown_method_is_usage_error(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["run", "--method", "ewc"])
        assert exc_info.value.code == 2
