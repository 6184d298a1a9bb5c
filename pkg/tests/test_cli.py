import numpy as np
import pytest

from villagesim.cli import main
from villagesim.census import read_census


def run_cli(*argv):
    return main(list(argv))


class TestSynthCensus:
    def test_default_counts_and_determinism(self, tmp_path, capsys):
        p1 = tmp_path / "c1.csv"
        p2 = tmp_path / "c2.csv"
        assert run_cli("synth-census", "--out", str(p1), "--seed", "2024") == 0
        assert run_cli("synth-census", "--out", str(p2), "--seed", "2024") == 0
        assert p1.read_bytes() == p2.read_bytes()
        census = read_census(p1)
        assert len(census) == 350
        out = capsys.readouterr().out
        assert "224" in out and "126" in out

    def test_spec_file_overrides(self, tmp_path):
        spec = tmp_path / "spec.ini"
        spec.write_text("[group1]\nvillage_count = 30\n[group2]\nvillage_count = 20\n")
        out = tmp_path / "c.csv"
        assert run_cli("synth-census", "--spec", str(spec), "--out", str(out)) == 0
        assert len(read_census(out)) == 50

    def test_malformed_spec_exits_2(self, tmp_path, capsys):
        spec = tmp_path / "spec.ini"
        spec.write_text("[group1]\nnot_a_key = 3\n")
        out = tmp_path / "c.csv"
        assert run_cli("synth-census", "--spec", str(spec), "--out", str(out)) == 2
        assert "not_a_key" in capsys.readouterr().err


class TestFitBaseline:
    def test_signs_match_published_direction(self, tmp_path, capsys):
        census_path = tmp_path / "census.csv"
        run_cli("synth-census", "--out", str(census_path), "--seed", "2024")
        capsys.readouterr()
        assert run_cli("fit-baseline", str(census_path)) == 0
        out = capsys.readouterr().out
        pop_line = next(line for line in out.splitlines() if "population" in line)
        dist_line = next(line for line in out.splitlines() if "distance" in line)
        assert pop_line.split()[-2].startswith("-")
        assert dist_line.split()[-2].startswith("+")
        assert "ICC" in out

    def test_constant_distance_reports_rank_problem(self, tmp_path, capsys):
        census_path = tmp_path / "census.csv"
        rows = ["id,health_area,group,population,distance_km,children_12_24,penta0_count"]
        rng = np.random.default_rng(0)
        for g, prefix in (("group1_control", "g1"), ("group2_intervention", "g2")):
            for i in range(15):
                rows.append(
                    f"{prefix}-{i},{prefix}a1,{g},{float(rng.uniform(100, 900))!r},3.0,"
                    f"{int(rng.integers(8, 30))},{int(rng.integers(1, 7))}"
                )
        census_path.write_text("\n".join(rows) + "\n")
        code = run_cli("fit-baseline", str(census_path))
        out = capsys.readouterr().out
        assert code == 1
        assert "collinear" in out or "rank" in out


class TestEvalue:
    def test_examples(self, capsys):
        assert run_cli("evalue", "--or", "4") == 0
        assert "3.414214" in capsys.readouterr().out
        assert run_cli("evalue", "--or", "1") == 0
        assert "E-value = 1.000000" in capsys.readouterr().out
        assert run_cli("evalue", "--or", "0.5", "--rct", "2", "--rco", "2") == 0
        out = capsys.readouterr().out
        assert "0.281250" in out and "squared (as published)" in out

    def test_unsquared_flag(self, capsys):
        assert run_cli("evalue", "--or", "0.5", "--rct", "2", "--rco", "2", "--unsquared") == 0
        out = capsys.readouterr().out
        assert "0.375000" in out and "unsquared" in out

    def test_partial_ratio_args_exit_2(self):
        assert run_cli("evalue", "--or", "2", "--rct", "2") == 2

    def test_invalid_or_exit_2(self):
        assert run_cli("evalue", "--or", "-1") == 2


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run_cli(
        "simulate", "--out", str(out), "--scenario", "base",
        "--delta", "0", "0.5", "--n", "20", "--reps", "40",
        "--max-draws", "20000", "--pool-cap", "300",
        "--methods", "beta,naive",
    )
    assert code == 0
    return out


class TestSimulateAndReport:
    def test_results_written(self, sim_dir):
        text = (sim_dir / "results.csv").read_text()
        assert text.startswith("scenario_id,")
        assert len(text.strip().split("\n")) == 5  # header + 2 scenarios x 2 methods

    def test_rerun_resumes(self, sim_dir, capsys):
        code = run_cli(
            "simulate", "--out", str(sim_dir), "--scenario", "base",
            "--delta", "0", "0.5", "--n", "20", "--reps", "40",
            "--max-draws", "20000", "--pool-cap", "300",
            "--methods", "beta,naive",
        )
        assert code == 0
        assert "(4 reloaded)" in capsys.readouterr().out

    def test_report_outputs_are_deterministic(self, sim_dir, tmp_path):
        census_path = tmp_path / "census.csv"
        run_cli("synth-census", "--out", str(census_path), "--seed", "2024")
        r1 = tmp_path / "rep1"
        r2 = tmp_path / "rep2"
        for r in (r1, r2):
            assert run_cli(
                "report", "--results", str(sim_dir / "results.csv"),
                "--census", str(census_path), "--out", str(r),
            ) == 0
        for name in ("type1_error.csv", "power.csv", "power_beta_icc0.22.svg", "baseline_rates.svg"):
            assert (r1 / name).read_bytes() == (r2 / name).read_bytes()

    def test_report_on_missing_columns_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("scenario_id,method\nx,beta\n")
        assert run_cli("report", "--results", str(bad), "--out", str(tmp_path / "r")) == 2

    def test_report_on_empty_results_errors(self, tmp_path):
        empty = tmp_path / "empty.csv"
        from villagesim.harness import RESULTS_HEADER

        empty.write_text(RESULTS_HEADER + "\n")
        code = run_cli("report", "--results", str(empty), "--out", str(tmp_path / "r"))
        assert code == 2
        assert not (tmp_path / "r" / "type1_error.csv").exists()

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[grid]\nbogus = 1\n")
        assert run_cli("simulate", "--out", str(tmp_path / "o"), "--config", str(cfg)) == 2

    def test_infeasible_pool_is_total_failure(self, tmp_path, capsys):
        code = run_cli(
            "simulate", "--out", str(tmp_path / "o"), "--scenario", "base",
            "--delta", "0", "--n", "20", "--reps", "10",
            "--max-draws", "500", "--smd-threshold", "1e-9",
        )
        assert code == 2
        assert "relaxing" in capsys.readouterr().err
