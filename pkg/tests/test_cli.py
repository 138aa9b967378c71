import json

import pandas as pd
import pytest

from dsdsim.dsd_cli import (
    EXIT_FAIL,
    EXIT_IO,
    EXIT_OK,
    EXIT_VALIDATION,
    OUTPUT_DIR_ENV,
    get_cli_parser,
    main,
)

SIM_ARGS = ["--vocab-size", "16", "--k", "4", "--gamma", "3", "--rounds", "200"]


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_help_has_examples():
    parser = get_cli_parser()
    assert "Example usage" in parser.format_help()
    with pytest.raises(SystemExit) as e:
        parser.parse_args(["simulate", "--gama", "3"])
    assert e.value.code == 2


def test_plan_text(capsys):
    assert main(["plan", "--alpha", "0.8", "--b", "0.005", "--c", "0.005"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "mode: DSD" in out
    assert "gamma_star: 14" in out


def test_plan_json(capsys):
    code = main(["-v", "plan", "--alpha", "0.4", "--b", "0.3", "--c", "0.3", "--format", "json"])
    assert code == EXIT_OK
    doc = _stdout_json(capsys)
    assert doc["schema_version"] == 1
    assert doc["plan"]["mode"] == "standalone"
    assert doc["plan"]["gamma_star"] == 1
    assert doc["plan"]["s_star"] == pytest.approx(0.875)


def test_plan_no_speedup_region(capsys):
    code = main(["plan", "--alpha", "0.9", "--b", "0.6", "--c", "0.5", "--format", "json"])
    assert code == EXIT_OK
    doc = _stdout_json(capsys)
    assert doc["plan"]["mode"] == "standalone"
    assert doc["plan"]["gamma_zero"] is None


@pytest.mark.parametrize(
    "argv",
    [
        ["plan", "--alpha", "0.5"],
        ["plan", "--alpha", "1.5", "--b", "0.1", "--c", "0.1"],
        ["plan", "--alpha", "0.5", "--b", "-0.1", "--c", "0.1"],
        ["simulate", *SIM_ARGS[:-1], "0"],
        ["simulate", "--vocab-size", "16", "--k", "17", "--rounds", "10"],
        ["verify-equivalence", "--overlap-lambda", "2.0", "--samples", "10"],
        ["simulate", *SIM_ARGS, "--uplink-rate", "0"],
        ["sweep-k", "--alpha", "0.8", "--ks", "32", "--uplink-rate", "inf"],
    ],
)
def test_validation_errors(argv, capsys):
    assert main(argv) == EXIT_VALIDATION
    assert "error:" in capsys.readouterr().err


def test_sweep_gamma(tmp_path, reference_tables, capsys):
    table = reference_tables["optimal_gamma"]
    argv = ["sweep-gamma", "--out-dir", str(tmp_path)]
    argv += ["--alphas", *map(str, table["alphas"]), "--Ls", *map(str, table["Ls"])]
    assert main(argv) == EXIT_OK

    summary = _stdout_json(capsys)
    assert summary["n_cells"] == 15
    assert summary["config"]["gamma_max"] == 30
    assert json.loads((tmp_path / "gamma_sweep.json").read_text()) == summary

    df = pd.read_csv(tmp_path / "gamma_table.csv")
    assert list(df.columns) == [
        "schema_version", "alpha", "L", "gamma_zero", "gamma_star", "s_star", "mode"
    ]
    for alpha, group in df.groupby("alpha"):
        assert group["gamma_star"].tolist() == table["gamma_star"][str(alpha)]
    standalone = df[df["mode"] == "standalone"]
    assert sorted(zip(standalone["alpha"], standalone["L"])) == [(0.4, 0.6), (0.6, 0.6)]

    curves = pd.read_csv(tmp_path / "gamma_curves.csv")
    assert len(curves) == 15 * 30
    assert curves["gamma"].max() == 30


def test_sweep_gamma_is_reproducible(tmp_path):
    for name in ("a", "b"):
        argv = ["sweep-gamma", "--alphas", "0.5", "0.7", "--Ls", "0.05", "0.3"]
        assert main(argv + ["--out-dir", str(tmp_path / name)]) == EXIT_OK
    for name in ("gamma_table.csv", "gamma_curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_gamma_single_step(tmp_path):
    argv = ["sweep-gamma", "--gamma-max", "1", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    df = pd.read_csv(tmp_path / "gamma_table.csv")
    assert set(df["gamma_star"]) == {1}
    assert len(pd.read_csv(tmp_path / "gamma_curves.csv")) == len(df)


def test_output_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["sweep-gamma", "--alphas", "0.6", "--Ls", "0.1"]) == EXIT_OK
    assert (tmp_path / "env" / "gamma_table.csv").exists()

    # the flag wins over the environment
    argv = ["sweep-gamma", "--alphas", "0.6", "--Ls", "0.1", "--out-dir", str(tmp_path / "flag")]
    assert main(argv) == EXIT_OK
    assert (tmp_path / "flag" / "gamma_table.csv").exists()


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("")
    argv = ["sweep-gamma", "--out-dir", str(blocker / "out")]
    assert main(argv) == EXIT_IO
    assert "error:" in capsys.readouterr().err


def test_sweep_k_with_alpha(tmp_path, reference_tables):
    params = reference_tables["top_k_latency"]
    argv = ["sweep-k", "--alpha", "0.8", "--out-dir", str(tmp_path)]
    argv += ["--ks", *map(str, params["ks"])]
    assert main(argv) == EXIT_OK

    df = pd.read_csv(tmp_path / "k_table.csv")
    assert df["K"].tolist() == params["ks"]
    assert df["L"].tolist() == pytest.approx(params["L"], abs=params["tolerance"])
    assert set(df["mode"]) == {"DSD"}


def test_sweep_k_analytic(tmp_path):
    argv = [
        "sweep-k", "--vocab-size", "16", "--ks", "16", "2", "--analytic",
        "--rounds", "100", "--gamma-max", "4", "--out-dir", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    df = pd.read_csv(tmp_path / "k_table.csv")
    assert df["K"].tolist() == [2, 16]
    assert (df["rounds"] == 100).all()
    assert (df["gamma"] <= 4).all()


def test_simulate(capsys):
    assert main(["simulate", *SIM_ARGS, "--seed", "4"]) == EXIT_OK
    first = _stdout_json(capsys)
    assert main(["simulate", *SIM_ARGS, "--seed", "4"]) == EXIT_OK
    assert _stdout_json(capsys) == first

    metrics = first["metrics"]
    assert metrics["rounds"] == 200
    assert metrics["gamma"] == 3 and metrics["k"] == 4
    assert first["config"]["vocab_size"] == 16


def test_simulate_workers_do_not_change_results(capsys):
    base = ["simulate", *SIM_ARGS, "--replications", "3"]
    assert main(base) == EXIT_OK
    serial = _stdout_json(capsys)["metrics"]
    assert main(base + ["--workers", "3"]) == EXIT_OK
    assert _stdout_json(capsys)["metrics"] == serial


def test_simulate_to_file(tmp_path, capsys):
    out = tmp_path / "run" / "metrics.json"
    assert main(["simulate", *SIM_ARGS, "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert json.loads(out.read_text())["metrics"]["rounds"] == 200


def test_verify_equivalence_pass(capsys):
    argv = ["verify-equivalence", "--vocab-size", "8", "--k", "2", "--samples", "5000"]
    assert main(argv) == EXIT_OK
    captured = capsys.readouterr()
    assert captured.err.strip().endswith("PASS")
    report = json.loads(captured.out)["report"]
    assert report["verdict"] == "PASS"
    assert report["tv"] <= report["threshold"]


def test_verify_equivalence_broken_verifier(capsys):
    argv = [
        "verify-equivalence", "--vocab-size", "8", "--k", "1", "--gamma", "1",
        "--overlap-lambda", "0", "--logit-scale", "0.5", "--samples", "2000",
        "--break-verifier",
    ]
    assert main(argv) == EXIT_FAIL
    captured = capsys.readouterr()
    assert captured.err.strip().endswith("FAIL")
    assert json.loads(captured.out)["report"]["verdict"] == "FAIL"


def test_config_file(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"gamma": 2, "rounds": 50, "vocab_size": 16, "k": 4}))
    assert main(["simulate", "--config", str(config), "--rounds", "30"]) == EXIT_OK
    doc = _stdout_json(capsys)
    # flags override the file, the file overrides the defaults
    assert doc["config"]["rounds"] == 30
    assert doc["config"]["gamma"] == 2
    assert doc["config"]["replications"] == 1
    assert doc["metrics"]["rounds"] == 30


def test_config_file_errors(tmp_path):
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"gamma": 2, "draft_len": 3}))
    assert main(["simulate", "--config", str(unknown)]) == EXIT_VALIDATION

    not_object = tmp_path / "list.json"
    not_object.write_text("[1, 2]")
    assert main(["simulate", "--config", str(not_object)]) == EXIT_VALIDATION

    missing = tmp_path / "missing.json"
    assert main(["simulate", "--config", str(missing)]) == EXIT_IO


def test_sweep_gamma_single_cell(tmp_path):
    argv = ["sweep-gamma", "--alphas", "0.8", "--Ls", "0.01", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    df = pd.read_csv(tmp_path / "gamma_table.csv")
    assert len(df) == 1
    assert df["gamma_star"].tolist() == [14]

    curves = pd.read_csv(tmp_path / "gamma_curves.csv")
    assert curves["gamma"].tolist() == list(range(1, 31))


def test_sweep_k_full_vocab(tmp_path):
    argv = ["sweep-k", "--alpha", "0.8", "--ks", "32000", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    df = pd.read_csv(tmp_path / "k_table.csv")
    assert df["K"].tolist() == [32000]
    assert df["b"].tolist() == pytest.approx([0.23])
    assert df["L"].tolist() == pytest.approx([0.07 + 0.23])


def test_simulate_identical_models(capsys):
    argv = [
        "simulate", "--vocab-size", "16", "--k", "16", "--gamma", "3",
        "--overlap-lambda", "1.0", "--rounds", "300",
    ]
    assert main(argv) == EXIT_OK
    metrics = _stdout_json(capsys)["metrics"]
    assert metrics["alpha_hat"] == 1.0
    assert metrics["mean_tokens_per_round"] == 4
    # L = c + b_full at K = |V|
    assert metrics["measured_speedup"] == pytest.approx(4 / (1 + 3 * 0.3))


def test_verify_equivalence_small_run(capsys):
    argv = ["verify-equivalence", "--vocab-size", "4", "--k", "4", "--overlap-lambda", "1.0"]
    assert main(argv + ["--samples", "500"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["report"]["verdict"] == "PASS"


def test_sweep_k_golden_table(tmp_path, test_paths):
    # drafter == target under greedy verification: every draft is accepted
    argv = [
        "sweep-k", "--vocab-size", "16", "--ks", "1", "--target-temp", "0",
        "--overlap-lambda", "1.0", "--rounds", "50", "--gamma-max", "6",
        "--seed", "3", "--out-dir", str(tmp_path),
    ]
    with pytest.warns(UserWarning, match="clipped"):
        assert main(argv) == EXIT_OK

    df = pd.read_csv(tmp_path / "k_table.csv")
    expected = pd.read_csv(test_paths.golden_k_table)
    assert df.columns.tolist() == expected.columns.tolist()
    pd.testing.assert_frame_equal(
        df, expected, check_dtype=False, check_exact=False, rtol=1e-9, atol=1e-12
    )


def test_sweep_k_same_seed_same_bytes(tmp_path):
    argv = [
        "sweep-k", "--vocab-size", "16", "--ks", "2", "16", "--overlap-lambda", "0.6",
        "--rounds", "200", "--gamma-max", "4", "--seed", "11",
    ]
    tables = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        assert main([*argv, "--out-dir", str(out_dir)]) == EXIT_OK
        tables.append((out_dir / "k_table.csv").read_bytes())
    assert tables[0] == tables[1]
