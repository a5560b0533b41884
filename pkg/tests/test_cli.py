import csv
import subprocess
import sys

import numpy as np
import pytest

from drsandwich.cli import (
    EXIT_CONVERGENCE,
    EXIT_INGESTION,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    exit_code,
    ingest_csv,
    main,
    write_dataset_csv,
)
from drsandwich.errors import ConvergenceError, IngestionError, PositivityError, SingularBreadError
from drsandwich.simulation import CORRECT_OUTCOME, CORRECT_PROPENSITY, DGPConfig, generate_sample


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "cs.csv"
    write_dataset_csv(generate_sample(DGPConfig(n=800, seed=21), 0), path)
    return path


def estimate_args(path, *extra):
    return [
        "estimate", "--data", str(path),
        "--propensity-model", CORRECT_PROPENSITY,
        "--outcome-model", CORRECT_OUTCOME,
        *extra,
    ]


class TestIngest:
    def test_small_file(self, tmp_path):
        p = write(tmp_path / "a.csv", "X,Y,age\n1,3.5,20\n0,2.0,31\n1,4.25,25\n")
        d = ingest_csv(p)
        assert d.n == 3
        np.testing.assert_array_equal(d.outcome, [3.5, 2.0, 4.25])
        assert list(d.covariates) == ["age"]

    def test_bad_exposure_names_row(self, tmp_path):
        lines = ["X,Y,Z"] + ["1,1.0,2.0", "0,2.0,3.0"] * 3 + ["2,1.0,1.0"]
        p = write(tmp_path / "b.csv", "\n".join(lines) + "\n")
        with pytest.raises(IngestionError, match="row 7"):
            ingest_csv(p)

    def test_missing_value_names_row_and_column(self, tmp_path):
        p = write(tmp_path / "c.csv", "X,Y,Z\n1,1,2\n0,,3\n")
        with pytest.raises(IngestionError, match=r"row 2, column 'Y'"):
            ingest_csv(p)

    def test_non_numeric(self, tmp_path):
        p = write(tmp_path / "d.csv", "X,Y,Z\n1,1,abc\n0,2,3\n")
        with pytest.raises(IngestionError, match="not numeric"):
            ingest_csv(p)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path / "e.csv", "A,Y\n1,2\n0,3\n")
        with pytest.raises(IngestionError, match="missing columns"):
            ingest_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            ingest_csv(tmp_path / "nope.csv")

    def test_single_arm(self, tmp_path):
        p = write(tmp_path / "f.csv", "X,Y\n1,2\n1,3\n")
        with pytest.raises(IngestionError):
            ingest_csv(p)

    def test_categorical_expansion(self, tmp_path):
        p = write(tmp_path / "g.csv", "X,Y,parity\n1,2,0\n0,3,1\n1,4,2+\n0,5,1\n")
        d = ingest_csv(p, categorical=["parity"])
        assert list(d.covariates) == ["parity_1", "parity_2"]
        np.testing.assert_array_equal(d.column("parity_1"), [0, 1, 0, 1])
        np.testing.assert_array_equal(d.column("parity_2"), [0, 0, 1, 0])

    def test_round_trip_is_bit_exact(self, tmp_path):
        d = generate_sample(DGPConfig(n=250, seed=8), 3)
        write_dataset_csv(d, tmp_path / "rt.csv")
        back = ingest_csv(tmp_path / "rt.csv", potential_outcomes=("Y0", "Y1"))
        assert back == d


class TestEstimate:
    def test_table_and_csv(self, sample_csv, tmp_path, capsys):
        out = tmp_path / "est.csv"
        assert main(estimate_args(sample_csv, "--out", str(out))) == EXIT_OK
        table = capsys.readouterr().out.splitlines()
        assert "ES-95% CI" in table[0] and "IF-95% CI" in table[0]
        assert [line.split()[0] for line in table[1:]] == ["Classic", "Weighted", "TMLE"]
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["estimator", "ace", "es_se", "es_ci_lo", "es_ci_hi", "if_se", "if_ci_lo", "if_ci_hi"]
        assert len(rows) == 4
        # three estimators times two variance methods
        assert sum(1 for r in rows[1:] for v in (r[2], r[5]) if float(v) > 0) == 6

    def test_single_estimator_single_variance(self, sample_csv, tmp_path, capsys):
        out = tmp_path / "one.csv"
        assert main(estimate_args(sample_csv, "--estimator", "tmle", "--variance", "if", "--out", str(out))) == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["estimator", "ace", "if_se", "if_ci_lo", "if_ci_hi"]
        assert rows[1][0] == "tmle"

    def test_config_file(self, sample_csv, tmp_path, capsys):
        cfg = write(tmp_path / "run.cfg", "\n".join([
            "# estimate with a config file",
            f"data = {sample_csv}",
            f"propensity-model = {CORRECT_PROPENSITY}",
            f"outcome_model = {CORRECT_OUTCOME}",
            "estimator = classic",
            "level = 0.9",
        ]) + "\n")
        assert main(["estimate", "--config", str(cfg), "--estimator", "wr"]) == 0
        table = capsys.readouterr().out
        assert "ES-90% CI" in table and "Weighted" in table and "Classic" not in table

    def test_naive_propensity_direction(self, tmp_path, capsys):
        # an MW-style sample: the misspecified weight model widens sandwich intervals
        path = tmp_path / "mw.csv"
        write_dataset_csv(generate_sample(DGPConfig(n=20_000, seed=31), 0), path)
        out = tmp_path / "mw_est.csv"
        code = main([
            "estimate", "--data", str(path), "--propensity-model", "1",
            "--outcome-model", "1, X, Z1, Z2", "--estimator", "classic", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            row = list(csv.DictReader(fh))[0]
        assert float(row["es_se"]) > float(row["if_se"])

    def test_unknown_column_is_usage_error(self, sample_csv, capsys):
        args = estimate_args(sample_csv)
        args[args.index("--outcome-model") + 1] = "1, X, W"
        assert main(args) == EXIT_USAGE
        assert "W" in capsys.readouterr().err

    def test_bad_data_is_ingestion_error(self, tmp_path, capsys):
        p = write(tmp_path / "bad.csv", "X,Y,Z1,Z2,Z3\n3,1,1,1,1\n")
        assert main(estimate_args(p)) == EXIT_INGESTION

    def test_bad_level_is_usage(self, sample_csv):
        with pytest.raises(SystemExit) as ex:
            main(estimate_args(sample_csv, "--level", "1.5"))
        assert ex.value.code == EXIT_USAGE

    def test_bad_bounds_is_usage(self, sample_csv):
        assert main(estimate_args(sample_csv, "--estimator", "tmle", "--bounds", "0,10")) == EXIT_USAGE

    def test_separation_is_convergence_error(self, tmp_path):
        rows = ["X,Y,Z1,Z2,Z3"] + [f"{int(i >= 10)},{i},{i},{i % 2},{i % 3}" for i in range(20)]
        p = write(tmp_path / "sep.csv", "\n".join(rows) + "\n")
        args = estimate_args(p)
        args[args.index("--propensity-model") + 1] = "1, Z1"
        assert main(args) == EXIT_CONVERGENCE


class TestExitCodes:
    @pytest.mark.parametrize("error,code", [
        (IngestionError("x"), EXIT_INGESTION),
        (ConvergenceError("x"), EXIT_CONVERGENCE),
        (PositivityError("x"), EXIT_NUMERICAL),
        (SingularBreadError("x"), EXIT_NUMERICAL),
    ])
    def test_mapping(self, error, code):
        assert exit_code(error) == code

    def test_codes_distinct(self):
        assert len({EXIT_OK, EXIT_USAGE, EXIT_INGESTION, EXIT_CONVERGENCE, EXIT_NUMERICAL}) == 5


class TestSimulate:
    def test_smoke_and_determinism(self, tmp_path, capsys):
        args = ["simulate", "--n", "800", "--sigma", "400", "--reps", "4", "--seed", "1", "--workers", "1"]
        assert main([*args, "--out", str(tmp_path / "a" / "run")]) == 0
        printed = capsys.readouterr().out
        assert "runtime" in printed and "excluded" in printed
        assert main([*args, "--out", str(tmp_path / "b" / "run")]) == 0
        for suffix in ("results", "summary", "vr"):
            a = (tmp_path / "a" / f"run_{suffix}.csv").read_bytes()
            b = (tmp_path / "b" / f"run_{suffix}.csv").read_bytes()
            assert a == b and len(a) > 0

    def test_scenario_subset(self, tmp_path, capsys):
        out = tmp_path / "cs"
        assert main(["simulate", "--reps", "3", "--n", "300", "--scenarios", "CS,MB", "--workers", "1",
                     "--out", str(out)]) == 0
        with open(f"{out}_summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["scenario"] for r in rows} == {"CS", "MB"}

    def test_invalid_reps_is_usage(self):
        with pytest.raises(SystemExit) as ex:
            main(["simulate", "--reps", "0"])
        assert ex.value.code == EXIT_USAGE

    def test_unknown_scenario_is_usage(self, tmp_path):
        assert main(["simulate", "--reps", "2", "--scenarios", "ZZ", "--out", str(tmp_path / "z")]) == EXIT_USAGE


def test_module_entry_point(sample_csv):
    proc = subprocess.run(
        [sys.executable, "-m", "drsandwich", *estimate_args(sample_csv, "--estimator", "classic")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "Classic AIPW" in proc.stdout
