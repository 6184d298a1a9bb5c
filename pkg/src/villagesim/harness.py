"""Simulation runner: scenario x method x replicate, with Monte Carlo error.

Replicate randomness derives solely from (base_seed, scenario, method,
replicate index), so any cell - or any single replicate - is reproducible
in isolation and results are identical regardless of worker count or
scheduling. Cells already present in a results file are skipped when the
run manifest matches.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.stats

from . import __version__ as ENGINE_VERSION
from .allocation import AcceptanceRule, AllocationPool, AllocationSpec, build_pool
from .census import Village, write_census
from .dgm import (
    COEFFICIENT_SETS,
    CalibratedDGM,
    ScenarioSpec,
    calibrate_intercept,
    generate_outcomes,
    with_effect,
)
from .errors import ConfigurationError, SchemaError
from .estimators import ANALYZERS, Method, build_analysis_input
from .rng import substream

RESULTS_HEADER = (
    "scenario_id,delta_r,pi0,n,coef_set,icc,method,n_rep,"
    "rejection_rate,mcse,ci_low,ci_high,nonconverged"
)

DEFAULT_POOL_CAP = 5000


def mcse(p_hat: float, n_rep: int) -> float:
    """Monte Carlo standard error sqrt(p (1 - p) / n_rep)."""
    if n_rep < 1:
        raise ValueError("n_rep must be at least 1")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError("p_hat must lie in [0, 1]")
    return float(np.sqrt(p_hat * (1.0 - p_hat) / n_rep))


def mc_ci(p_hat: float, n_rep: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation Monte Carlo confidence interval, clipped to [0, 1]."""
    z = float(scipy.stats.norm.ppf(0.5 + level / 2.0))
    half = z * mcse(p_hat, n_rep)
    return (max(p_hat - half, 0.0), min(p_hat + half, 1.0))


@dataclass(frozen=True)
class Grid:
    """Simulation grid; the defaults are the full published factorial."""

    delta_r: tuple[float, ...] = (0.0, 0.15, 0.25, 0.375, 0.5)
    pi0: tuple[float, ...] = (0.15, 0.2, 0.25, 0.3)
    n_per_arm: tuple[int, ...] = (50, 75, 80, 100, 110, 126)
    coef_sets: tuple[int, ...] = (1, 2, 3)
    icc: tuple[float, ...] = (0.22, 1.0 / 3.0)
    reps_null: int = 10_000
    reps_power: int = 1_000
    methods: tuple[Method, ...] = (Method.QUASIBINOMIAL, Method.BETA, Method.IPTW, Method.NAIVE)
    acceptance_rule: AcceptanceRule = AcceptanceRule.MEAN_BELOW
    smd_threshold: float = 0.2
    max_draws: int = 1_000_000
    pool_cap: int = DEFAULT_POOL_CAP

    def scenarios(self) -> list[ScenarioSpec]:
        out = []
        for icc in self.icc:
            for cs in self.coef_sets:
                for pi0 in self.pi0:
                    for n in self.n_per_arm:
                        for d in self.delta_r:
                            out.append(
                                ScenarioSpec(
                                    delta_r=d,
                                    pi0=pi0,
                                    n_per_arm=n,
                                    coef=COEFFICIENT_SETS[cs],
                                    icc=icc,
                                )
                            )
        return out

    def reps_for(self, scenario: ScenarioSpec) -> int:
        return self.reps_null if scenario.delta_r == 0.0 else self.reps_power

    def grid_hash(self) -> str:
        parts = [
            repr(self.delta_r),
            repr(self.pi0),
            repr(self.n_per_arm),
            repr(self.coef_sets),
            repr(self.icc),
            repr(self.reps_null),
            repr(self.reps_power),
            repr(tuple(m.value for m in self.methods)),
            self.acceptance_rule.value,
            repr(self.smd_threshold),
            repr(self.max_draws),
            repr(self.pool_cap),
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CellResult:
    scenario: ScenarioSpec
    method: Method
    n_rep: int
    rejections: int
    non_convergence_count: int
    wall_time_s: float
    indicators: tuple[bool, ...] = field(repr=False, default=())

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.n_rep

    @property
    def mcse(self) -> float:
        return mcse(self.rejection_rate, self.n_rep)

    @property
    def ci(self) -> tuple[float, float]:
        return mc_ci(self.rejection_rate, self.n_rep)

    def csv_row(self) -> str:
        s = self.scenario
        lo, hi = self.ci
        return (
            f"{s.scenario_id},{s.delta_r!r},{s.pi0!r},{s.n_per_arm},{s.coef.label},"
            f"{s.icc!r},{self.method.value},{self.n_rep},{self.rejection_rate!r},"
            f"{self.mcse!r},{lo!r},{hi!r},{self.non_convergence_count}"
        )


@dataclass(frozen=True)
class RunManifest:
    base_seed: int
    grid_hash: str
    census_hash: str
    engine_version: str
    pool_ids: tuple[str, ...]
    timestamp: str

    def matches(self, other: "RunManifest") -> bool:
        """Reproducibility identity: everything except the timestamp."""
        return (
            self.base_seed == other.base_seed
            and self.grid_hash == other.grid_hash
            and self.census_hash == other.census_hash
            and self.engine_version == other.engine_version
            and self.pool_ids == other.pool_ids
        )


def census_fingerprint(census: list[Village]) -> str:
    lines = [
        f"{v.id},{v.health_area},{v.group.value},{v.population!r},"
        f"{v.distance_km!r},{v.children_12_24},{v.penta0_count}"
        for v in census
    ]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def run_cell(
    scenario: ScenarioSpec,
    method: Method,
    n_rep: int,
    pool: AllocationPool,
    dgm: CalibratedDGM,
    census: list[Village],
    base_seed: int,
    alpha: float = 0.05,
) -> CellResult:
    """Run one (scenario, method) cell for n_rep replicates.

    Each replicate consumes its own substream: first the uniform pool draw,
    then the outcome generation, then the analysis (deterministic).
    """
    if n_rep <= 0:
        raise ValueError("n_rep must be positive")
    if not pool.accepted:
        raise ConfigurationError("cannot run a cell against an empty pool")
    analyze = ANALYZERS[method]
    started = time.perf_counter()
    indicators = []
    nonconv = 0
    for r in range(n_rep):
        rng = substream(base_seed, "replicate", scenario.scenario_id, method.value, r)
        alloc = pool.accepted[int(rng.integers(0, len(pool.accepted)))]
        records = generate_outcomes(alloc, census, dgm, rng)
        result = analyze(build_analysis_input(alloc, census, records), alpha=alpha)
        indicators.append(bool(result.rejected))
        if not result.diagnostics.get("converged", True):
            nonconv += 1
    return CellResult(
        scenario=scenario,
        method=method,
        n_rep=n_rep,
        rejections=int(sum(indicators)),
        non_convergence_count=nonconv,
        wall_time_s=time.perf_counter() - started,
        indicators=tuple(indicators),
    )


@dataclass
class GridRunResult:
    cells: list[CellResult]
    manifest: RunManifest
    failures: list[tuple[str, str, str]]  # (scenario_id, method, error)
    skipped: int = 0


def build_grid_pools(
    census: list[Village], grid: Grid, base_seed: int
) -> dict[int, AllocationPool]:
    pools = {}
    for n in sorted(set(grid.n_per_arm)):
        spec = AllocationSpec(
            villages_per_arm=n,
            smd_threshold=grid.smd_threshold,
            max_draws=grid.max_draws,
            acceptance_rule=grid.acceptance_rule,
        )
        pools[n] = build_pool(census, spec, base_seed, max_accepted=grid.pool_cap)
    return pools


def calibrate_grid(
    census: list[Village],
    grid: Grid,
    pools: dict[int, AllocationPool],
    base_seed: int,
) -> dict[str, CalibratedDGM]:
    """One calibration per (pi0, coefficient set, ICC), on the smallest-n pool."""
    ref_n = min(pools)
    out: dict[str, CalibratedDGM] = {}
    for scenario in grid.scenarios():
        key = scenario.calibration_key
        if key in out:
            continue
        base = ScenarioSpec(
            delta_r=0.0,
            pi0=scenario.pi0,
            n_per_arm=ref_n,
            coef=scenario.coef,
            icc=scenario.icc,
        )
        out[key] = calibrate_intercept(census, pools[ref_n], base, base_seed)
    return out


_WORKER_STATE: dict = {}


def _init_worker(census, pools, dgms, base_seed, alpha):
    _WORKER_STATE["census"] = census
    _WORKER_STATE["pools"] = pools
    _WORKER_STATE["dgms"] = dgms
    _WORKER_STATE["base_seed"] = base_seed
    _WORKER_STATE["alpha"] = alpha


def _run_cell_task(args):
    scenario, method, n_rep = args
    census = _WORKER_STATE["census"]
    pool = _WORKER_STATE["pools"][scenario.n_per_arm]
    dgm = with_effect(
        _WORKER_STATE["dgms"][scenario.calibration_key], scenario.delta_r, scenario.pi0
    )
    try:
        cell = run_cell(
            scenario,
            method,
            n_rep,
            pool,
            dgm,
            census,
            _WORKER_STATE["base_seed"],
            alpha=_WORKER_STATE["alpha"],
        )
        return ("ok", cell)
    except Exception as exc:  # cell errors are recorded, the run continues
        return ("error", (scenario.scenario_id, method.value, f"{type(exc).__name__}: {exc}"))


def run_grid(
    grid: Grid,
    census: list[Village],
    base_seed: int,
    out_dir: str | Path | None = None,
    workers: int = 1,
    resume: bool = True,
    alpha: float = 0.05,
    keep_indicators: bool = False,
) -> GridRunResult:
    """Execute every (scenario, method) cell of the grid.

    Pools are built per arm size and the intercept is calibrated once per
    (pi0, coefficient set, ICC). With ``out_dir`` set, results and manifest
    are persisted; a rerun against a matching manifest skips finished cells.
    Cells that fail are recorded and the run continues.
    """
    pools = build_grid_pools(census, grid, base_seed)
    dgms = calibrate_grid(census, grid, pools, base_seed)

    pool_ids = tuple(
        f"n{n}:rule={p.spec.acceptance_rule.value};threshold={p.spec.smd_threshold!r};"
        f"draws={p.draws_attempted};accepted={len(p.accepted)}"
        for n, p in sorted(pools.items())
    )
    manifest = RunManifest(
        base_seed=base_seed,
        grid_hash=grid.grid_hash(),
        census_hash=census_fingerprint(census),
        engine_version=ENGINE_VERSION,
        pool_ids=pool_ids,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )

    done: dict[tuple[str, str], CellResult] = {}
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        if resume:
            existing = _load_existing(out_path, manifest, grid)
            done.update(existing)

    tasks = []
    for scenario in grid.scenarios():
        for method in grid.methods:
            if (scenario.scenario_id, method.value) not in done:
                tasks.append((scenario, method, grid.reps_for(scenario)))

    failures: list[tuple[str, str, str]] = []
    cells: list[CellResult] = list(done.values())

    if workers <= 1:
        _init_worker(census, pools, dgms, base_seed, alpha)
        outcomes = map(_run_cell_task, tasks)
        for status, payload in outcomes:
            if status == "ok":
                cells.append(payload)
                _append_partial(out_path, payload)
            else:
                failures.append(payload)
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(census, pools, dgms, base_seed, alpha),
        ) as pool_exec:
            for status, payload in pool_exec.map(_run_cell_task, tasks):
                if status == "ok":
                    cells.append(payload)
                    _append_partial(out_path, payload)
                else:
                    failures.append(payload)

    cells.sort(key=lambda c: (c.scenario.scenario_id, c.method.value))
    if out_path is not None:
        write_results(cells, out_path / "results.csv")
        write_manifest(manifest, out_path / "manifest.txt")
        write_census(census, out_path / "census_used.csv")
        if keep_indicators:
            write_indicator_log(cells, out_path / "indicators.txt")
        partial = out_path / "results.partial.csv"
        if partial.exists():
            partial.unlink()
    return GridRunResult(cells=cells, manifest=manifest, failures=failures, skipped=len(done))


def find_min_n(
    census: list[Village],
    method: Method,
    delta_r: float,
    pi0: float,
    coef_set: int,
    icc: float,
    candidate_ns: tuple[int, ...],
    base_seed: int,
    target_power: float = 0.8,
    n_rep: int = 1000,
    grid_defaults: Grid = Grid(),
) -> tuple[int | None, list[dict]]:
    """Smallest candidate arm size reaching the target power, with a report.

    Returns (n or None, rows); each row carries the estimated power and its
    Monte Carlo standard error for one candidate size.
    """
    if list(candidate_ns) != sorted(candidate_ns):
        raise ValueError("candidate_ns must be sorted ascending")
    rows = []
    answer = None
    for n in candidate_ns:
        sub = Grid(
            delta_r=(delta_r,),
            pi0=(pi0,),
            n_per_arm=(n,),
            coef_sets=(coef_set,),
            icc=(icc,),
            reps_null=n_rep,
            reps_power=n_rep,
            methods=(method,),
            acceptance_rule=grid_defaults.acceptance_rule,
            smd_threshold=grid_defaults.smd_threshold,
            max_draws=grid_defaults.max_draws,
            pool_cap=grid_defaults.pool_cap,
        )
        result = run_grid(sub, census, base_seed, out_dir=None)
        cell = result.cells[0]
        rows.append(
            {
                "n": n,
                "power": cell.rejection_rate,
                "mcse": cell.mcse,
                "nonconverged": cell.non_convergence_count,
            }
        )
        if answer is None and cell.rejection_rate >= target_power:
            answer = n
    return answer, rows


def write_results(cells: list[CellResult], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for cell in cells:
            fh.write(cell.csv_row() + "\n")


def read_results(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != RESULTS_HEADER:
            missing = set(RESULTS_HEADER.split(",")) - set(header.split(","))
            raise SchemaError(f"results file missing columns: {sorted(missing)}")
        for line in fh:
            if not line.strip():
                continue
            vals = line.strip().split(",")
            rows.append(
                {
                    "scenario_id": vals[0],
                    "delta_r": float(vals[1]),
                    "pi0": float(vals[2]),
                    "n": int(vals[3]),
                    "coef_set": vals[4],
                    "icc": float(vals[5]),
                    "method": vals[6],
                    "n_rep": int(vals[7]),
                    "rejection_rate": float(vals[8]),
                    "mcse": float(vals[9]),
                    "ci_low": float(vals[10]),
                    "ci_high": float(vals[11]),
                    "nonconverged": int(vals[12]),
                }
            )
    return rows


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("#villagesim-manifest v1\n")
        fh.write(f"engine_version={manifest.engine_version}\n")
        fh.write(f"base_seed={manifest.base_seed}\n")
        fh.write(f"grid_hash={manifest.grid_hash}\n")
        fh.write(f"census_hash={manifest.census_hash}\n")
        for pid in manifest.pool_ids:
            fh.write(f"pool={pid}\n")
        fh.write(f"created={manifest.timestamp}\n")


def read_manifest(path: str | Path) -> RunManifest:
    pool_ids = []
    fields: dict[str, str] = {}
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != "#villagesim-manifest v1":
            raise SchemaError("not a villagesim manifest file")
        for line in fh:
            key, _, value = line.strip().partition("=")
            if key == "pool":
                pool_ids.append(value)
            else:
                fields[key] = value
    try:
        return RunManifest(
            base_seed=int(fields["base_seed"]),
            grid_hash=fields["grid_hash"],
            census_hash=fields["census_hash"],
            engine_version=fields["engine_version"],
            pool_ids=tuple(pool_ids),
            timestamp=fields.get("created", ""),
        )
    except KeyError as exc:
        raise SchemaError(f"manifest missing key {exc}") from exc


def rle_encode(bits: tuple[bool, ...]) -> str:
    """Run-length encode a rejection indicator sequence, e.g. '0x53,1x2'."""
    if not bits:
        return ""
    runs = []
    current = bits[0]
    length = 0
    for b in bits:
        if b == current:
            length += 1
        else:
            runs.append(f"{int(current)}x{length}")
            current = b
            length = 1
    runs.append(f"{int(current)}x{length}")
    return ",".join(runs)


def rle_decode(text: str) -> tuple[bool, ...]:
    if not text:
        return ()
    bits: list[bool] = []
    for run in text.split(","):
        value, _, length = run.partition("x")
        bits.extend([value == "1"] * int(length))
    return tuple(bits)


def write_indicator_log(cells: list[CellResult], path: str | Path) -> None:
    """Per-replicate rejection indicators, one RLE line per freshly run cell.

    Cells reloaded from a previous run carry no indicator sequence and are
    omitted (their lines live in that run's log).
    """
    with open(path, "w") as fh:
        fh.write("scenario_id\tmethod\tindicators_rle\n")
        for cell in cells:
            if not cell.indicators:
                continue
            fh.write(
                f"{cell.scenario.scenario_id}\t{cell.method.value}\t"
                f"{rle_encode(cell.indicators)}\n"
            )


def _append_partial(out_path: Path | None, cell: CellResult) -> None:
    if out_path is None:
        return
    partial = out_path / "results.partial.csv"
    new = not partial.exists()
    with open(partial, "a") as fh:
        if new:
            fh.write(RESULTS_HEADER + "\n")
        fh.write(cell.csv_row() + "\n")
        fh.flush()


def _load_existing(
    out_path: Path, manifest: RunManifest, grid: Grid
) -> dict[tuple[str, str], CellResult]:
    """Reload finished cells from a previous run with a matching manifest."""
    manifest_path = out_path / "manifest.txt"
    if not manifest_path.exists():
        return {}
    try:
        previous = read_manifest(manifest_path)
    except SchemaError:
        return {}
    if not manifest.matches(previous):
        return {}

    by_id = {s.scenario_id: s for s in grid.scenarios()}
    found: dict[tuple[str, str], CellResult] = {}
    for name in ("results.csv", "results.partial.csv"):
        path = out_path / name
        if not path.exists():
            continue
        try:
            rows = read_results(path)
        except (SchemaError, ValueError, IndexError):
            continue
        for row in rows:
            scenario = by_id.get(row["scenario_id"])
            if scenario is None or row["method"] not in {m.value for m in grid.methods}:
                continue
            key = (row["scenario_id"], row["method"])
            if key in found:
                continue
            found[key] = CellResult(
                scenario=scenario,
                method=Method(row["method"]),
                n_rep=row["n_rep"],
                rejections=round(row["rejection_rate"] * row["n_rep"]),
                non_convergence_count=row["nonconverged"],
                wall_time_s=0.0,
            )
    return found
