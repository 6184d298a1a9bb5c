import numpy as np
import pytest

from villagesim.allocation import AcceptanceRule
from villagesim.errors import SchemaError
from villagesim.estimators import Method
from villagesim.harness import (
    Grid,
    build_grid_pools,
    calibrate_grid,
    census_fingerprint,
    find_min_n,
    mc_ci,
    mcse,
    read_manifest,
    read_results,
    rle_decode,
    rle_encode,
    run_cell,
    run_grid,
)


class TestMcse:
    def test_hand_value(self):
        assert abs(mcse(0.5, 10_000) - 0.005) < 1e-15

    def test_degenerate_rates(self):
        assert mcse(0.0, 100) == 0.0
        assert mcse(1.0, 100) == 0.0

    def test_symmetry(self):
        assert mcse(0.3, 777) == mcse(0.7, 777)

    def test_validation(self):
        with pytest.raises(ValueError):
            mcse(0.5, 0)
        with pytest.raises(ValueError):
            mcse(1.5, 10)


class TestMcCi:
    def test_hand_value(self):
        lo, hi = mc_ci(0.050, 10_000)
        assert lo == pytest.approx(0.0457, abs=1e-4)
        assert hi == pytest.approx(0.0543, abs=1e-4)

    def test_degenerate(self):
        assert mc_ci(0.0, 500) == (0.0, 0.0)

    def test_width_maximal_at_half(self):
        widths = [mc_ci(p, 400)[1] - mc_ci(p, 400)[0] for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert max(widths) == widths[2]

    def test_contains_estimate(self):
        for p in (0.0, 0.05, 0.5, 0.93, 1.0):
            lo, hi = mc_ci(p, 200)
            assert lo <= p <= hi


class TestRle:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        bits = tuple(bool(b) for b in rng.integers(0, 2, 257))
        assert rle_decode(rle_encode(bits)) == bits

    def test_empty(self):
        assert rle_decode(rle_encode(())) == ()

    def test_compact_runs(self):
        assert rle_encode((False,) * 53 + (True,) * 2) == "0x53,1x2"


@pytest.fixture(scope="module")
def smoke_grid():
    return Grid(
        delta_r=(0.0, 0.5),
        pi0=(0.2,),
        n_per_arm=(20,),
        coef_sets=(1,),
        icc=(0.22,),
        reps_null=60,
        reps_power=40,
        methods=(Method.BETA, Method.NAIVE),
        acceptance_rule=AcceptanceRule.MEAN_BELOW,
        max_draws=20_000,
        pool_cap=500,
    )


@pytest.fixture(scope="module")
def smoke_setup(default_census, smoke_grid):
    pools = build_grid_pools(default_census, smoke_grid, base_seed=11)
    dgms = calibrate_grid(default_census, smoke_grid, pools, base_seed=11)
    return pools, dgms


class TestRunCell:
    def test_deterministic_including_indicators(self, default_census, smoke_grid, smoke_setup):
        pools, dgms = smoke_setup
        scn = smoke_grid.scenarios()[0]
        dgm = dgms[scn.calibration_key]
        c1 = run_cell(scn, Method.NAIVE, 50, pools[20], dgm, default_census, base_seed=11)
        c2 = run_cell(scn, Method.NAIVE, 50, pools[20], dgm, default_census, base_seed=11)
        assert c1.indicators == c2.indicators
        assert c1.rejections == c2.rejections

    def test_rate_is_exact_fraction(self, default_census, smoke_grid, smoke_setup):
        pools, dgms = smoke_setup
        scn = smoke_grid.scenarios()[0]
        cell = run_cell(
            scn, Method.BETA, 40, pools[20], dgms[scn.calibration_key], default_census, 11
        )
        assert cell.rejection_rate * cell.n_rep == pytest.approx(cell.rejections, abs=1e-12)
        assert cell.rejections == sum(cell.indicators)

    def test_zero_reps_rejected(self, default_census, smoke_grid, smoke_setup):
        pools, dgms = smoke_setup
        scn = smoke_grid.scenarios()[0]
        with pytest.raises(ValueError):
            run_cell(scn, Method.BETA, 0, pools[20], dgms[scn.calibration_key], default_census, 11)


class TestRunGrid:
    def test_single_scenario_gives_one_row_per_method(self, default_census):
        grid = Grid(
            delta_r=(0.0,),
            pi0=(0.2,),
            n_per_arm=(20,),
            coef_sets=(1,),
            icc=(0.22,),
            reps_null=20,
            reps_power=20,
            acceptance_rule=AcceptanceRule.MEAN_BELOW,
            max_draws=20_000,
            pool_cap=300,
        )
        out = run_grid(grid, default_census, base_seed=11)
        assert len(out.cells) == 4
        assert not out.failures

    def test_reps_split_between_null_and_power(self, default_census, smoke_grid):
        out = run_grid(smoke_grid, default_census, base_seed=11)
        for cell in out.cells:
            expected = 60 if cell.scenario.delta_r == 0.0 else 40
            assert cell.n_rep == expected

    def test_results_file_round_trip(self, tmp_path, default_census, smoke_grid):
        out = run_grid(smoke_grid, default_census, base_seed=11, out_dir=tmp_path)
        rows = read_results(tmp_path / "results.csv")
        assert len(rows) == len(out.cells)
        by_key = {(r["scenario_id"], r["method"]): r for r in rows}
        for cell in out.cells:
            row = by_key[(cell.scenario.scenario_id, cell.method.value)]
            assert row["rejection_rate"] == cell.rejection_rate
            assert row["n_rep"] == cell.n_rep

    def test_resume_skips_finished_cells(self, tmp_path, default_census, smoke_grid):
        first = run_grid(smoke_grid, default_census, base_seed=11, out_dir=tmp_path)
        again = run_grid(smoke_grid, default_census, base_seed=11, out_dir=tmp_path)
        assert again.skipped == len(first.cells)
        assert {c.scenario.scenario_id for c in again.cells} == {
            c.scenario.scenario_id for c in first.cells
        }
        a = sorted((c.scenario.scenario_id, c.method.value, c.rejections) for c in first.cells)
        b = sorted((c.scenario.scenario_id, c.method.value, c.rejections) for c in again.cells)
        assert a == b

    def test_worker_count_does_not_change_bytes(self, tmp_path, default_census, smoke_grid):
        import time

        d1 = tmp_path / "w1"
        d2 = tmp_path / "w2"
        started = time.perf_counter()
        run_grid(smoke_grid, default_census, base_seed=11, out_dir=d1, workers=1)
        assert time.perf_counter() - started < 60.0  # smoke grid stays interactive
        run_grid(smoke_grid, default_census, base_seed=11, out_dir=d2, workers=2)
        assert (d1 / "results.csv").read_bytes() == (d2 / "results.csv").read_bytes()

    def test_default_grid_is_full_factorial(self):
        grid = Grid()
        assert len(grid.scenarios()) == 5 * 4 * 6 * 3 * 2
        assert len(grid.scenarios()) * len(grid.methods) == 720 * 4

    def test_manifest_round_trip(self, tmp_path, default_census, smoke_grid):
        out = run_grid(smoke_grid, default_census, base_seed=11, out_dir=tmp_path)
        loaded = read_manifest(tmp_path / "manifest.txt")
        assert loaded.matches(out.manifest)
        assert loaded.census_hash == census_fingerprint(default_census)

    def test_indicator_log(self, tmp_path, default_census, smoke_grid):
        out = run_grid(
            smoke_grid, default_census, base_seed=11, out_dir=tmp_path, keep_indicators=True
        )
        lines = (tmp_path / "indicators.txt").read_text().strip().split("\n")[1:]
        assert len(lines) == len(out.cells)
        by_key = {(c.scenario.scenario_id, c.method.value): c for c in out.cells}
        for line in lines:
            sid, method, rle = line.split("\t")
            assert rle_decode(rle) == by_key[(sid, method)].indicators

    def test_missing_column_is_schema_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("scenario_id,method\nx,beta\n")
        with pytest.raises(SchemaError, match="missing columns"):
            read_results(p)


class TestFindMinN:
    def test_monotone_contract_and_report(self, default_census):
        answer, rows = find_min_n(
            default_census,
            Method.NAIVE,
            delta_r=0.5,
            pi0=0.2,
            coef_set=1,
            icc=0.22,
            candidate_ns=(20, 30),
            base_seed=11,
            target_power=0.5,
            n_rep=60,
            grid_defaults=Grid(max_draws=20_000, pool_cap=300),
        )
        assert [r["n"] for r in rows] == [20, 30]
        assert all(0.0 <= r["power"] <= 1.0 for r in rows)
        if rows[0]["power"] >= 0.5:
            assert answer == 20

    def test_none_when_unreachable(self, default_census):
        answer, rows = find_min_n(
            default_census,
            Method.IPTW,
            delta_r=0.15,
            pi0=0.2,
            coef_set=1,
            icc=0.22,
            candidate_ns=(20,),
            base_seed=11,
            target_power=0.999,
            n_rep=40,
            grid_defaults=Grid(max_draws=20_000, pool_cap=300),
        )
        assert answer is None

    def test_unsorted_candidates_rejected(self, default_census):
        with pytest.raises(ValueError):
            find_min_n(
                default_census, Method.BETA, 0.5, 0.2, 1, 0.22,
                candidate_ns=(30, 20), base_seed=1,
            )
