"""Covariate-constrained random selection of villages.

Candidate allocations draw villages from each arm's health areas in
proportion to area size; an allocation is retained when its standardized
mean differences on population, distance, and baseline unvaccinated rate
satisfy the acceptance rule. Pool construction is chunked and vectorized so
a hundred thousand draws take seconds, and every accepted allocation's
balance report is reproducible bit-for-bit from its member ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .census import StudyGroup, Village
from .errors import ConfigurationError, PoolError, SchemaError
from .rng import substream

_CHUNK = 4096


class AcceptanceRule(Enum):
    ALL_BELOW = "all_below"
    MEAN_BELOW = "mean_below"


@dataclass(frozen=True)
class AllocationSpec:
    """Selection size and balance constraints (1:1 ratio)."""

    villages_per_arm: int
    smd_threshold: float = 0.2
    max_draws: int = 1_000_000
    acceptance_rule: AcceptanceRule = AcceptanceRule.ALL_BELOW

    def __post_init__(self) -> None:
        if self.villages_per_arm <= 0:
            raise ConfigurationError("villages_per_arm must be positive")
        if self.smd_threshold <= 0:
            raise ConfigurationError("smd_threshold must be positive")
        if self.max_draws <= 0:
            raise ConfigurationError("max_draws must be positive")


@dataclass(frozen=True)
class BalanceReport:
    smd_population: float
    smd_distance: float
    smd_penta0: float
    accepted: bool

    def values(self) -> tuple[float, float, float]:
        return (self.smd_population, self.smd_distance, self.smd_penta0)


@dataclass(frozen=True)
class Allocation:
    """One selected pair of arms with its balance report."""

    control_ids: tuple[str, ...]
    intervention_ids: tuple[str, ...]
    balance: BalanceReport


@dataclass
class AllocationPool:
    spec: AllocationSpec
    seed: int
    accepted: list[Allocation]
    draw_indices: tuple[int, ...]
    draws_attempted: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / self.draws_attempted


def smd(arm0, arm1) -> float:
    """Standardized mean difference |m1 - m0| / sqrt((s0^2 + s1^2) / 2).

    Sample SDs (ddof=1). A zero pooled SD yields 0 for equal means and
    +infinity otherwise.
    """
    v0 = np.asarray(arm0, dtype=float)[None, :]
    v1 = np.asarray(arm1, dtype=float)[None, :]
    return float(_smd_batch(v0, v1)[0])


def _smd_batch(v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    diff = np.abs(v1.mean(axis=1) - v0.mean(axis=1))
    pooled = np.sqrt((v0.var(axis=1, ddof=1) + v1.var(axis=1, ddof=1)) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = diff / pooled
    return np.where(pooled > 0.0, out, np.where(diff == 0.0, 0.0, np.inf))


def _rule_accepts(rule: AcceptanceRule, smds: np.ndarray, threshold: float) -> np.ndarray:
    if rule is AcceptanceRule.ALL_BELOW:
        return np.max(smds, axis=0) <= threshold
    return np.mean(smds, axis=0) <= threshold


class _ArmFrame:
    """Canonical arrays for one arm: covariates plus per-area row indices."""

    def __init__(self, villages: list[Village]):
        self.villages = villages
        self.ids = np.array([v.id for v in villages])
        self.population = np.array([v.population for v in villages], dtype=float)
        self.distance = np.array([v.distance_km for v in villages], dtype=float)
        self.rate = np.array([v.baseline_rate for v in villages], dtype=float)
        areas: dict[str, list[int]] = {}
        for row, v in enumerate(villages):
            areas.setdefault(v.health_area, []).append(row)
        self.area_rows = {a: np.array(rows, dtype=np.int64) for a, rows in sorted(areas.items())}
        self.row_of_id = {v.id: row for row, v in enumerate(villages)}

    def quotas(self, n: int) -> dict[str, int]:
        """Largest-remainder proportional quotas, ties broken by area id."""
        sizes = {a: rows.size for a, rows in self.area_rows.items()}
        total = sum(sizes.values())
        if n > total:
            raise ConfigurationError(
                f"cannot select {n} villages from an arm with {total} eligible"
            )
        raw = {a: n * size / total for a, size in sizes.items()}
        counts = {a: int(np.floor(r)) for a, r in raw.items()}
        short = n - sum(counts.values())
        by_remainder = sorted(raw, key=lambda a: (-(raw[a] - counts[a]), a))
        for a in by_remainder[:short]:
            counts[a] += 1
        for a, q in counts.items():
            if q > sizes[a]:
                raise ConfigurationError(
                    f"health area '{a}' cannot supply {q} of its {sizes[a]} villages"
                )
        return counts


def split_arms(census: list[Village]) -> tuple[_ArmFrame, _ArmFrame]:
    control = [v for v in census if v.group is StudyGroup.GROUP1_CONTROL]
    intervention = [v for v in census if v.group is StudyGroup.GROUP2_INTERVENTION]
    if not control or not intervention:
        raise ConfigurationError("census must contain villages in both groups")
    return _ArmFrame(control), _ArmFrame(intervention)


def _draw_rows_chunk(rng: np.random.Generator, arm: _ArmFrame, quotas: dict[str, int], k: int):
    """Draw k allocations for one arm; rows are sorted into canonical order."""
    parts = []
    for area, rows in arm.area_rows.items():
        q = quotas[area]
        if q == 0:
            continue
        keys = rng.random((k, rows.size))
        take = np.argpartition(keys, q - 1, axis=1)[:, :q]
        parts.append(rows[take])
    out = np.concatenate(parts, axis=1)
    out.sort(axis=1)
    return out


def _balance_batch(
    control: _ArmFrame, intervention: _ArmFrame, rows0: np.ndarray, rows1: np.ndarray
) -> np.ndarray:
    """(3, k) array of SMDs: population, distance, baseline rate."""
    return np.stack(
        [
            _smd_batch(control.population[rows0], intervention.population[rows1]),
            _smd_batch(control.distance[rows0], intervention.distance[rows1]),
            _smd_batch(control.rate[rows0], intervention.rate[rows1]),
        ]
    )


def compute_balance(
    census: list[Village],
    control_ids,
    intervention_ids,
    spec: AllocationSpec,
) -> BalanceReport:
    """Recompute the balance report for stored member ids.

    Uses the same canonical ordering and batched reductions as pool
    construction, so the result is bit-identical to the stored report.
    """
    control, intervention = split_arms(census)
    rows0 = np.array(sorted(control.row_of_id[i] for i in control_ids), dtype=np.int64)[None, :]
    rows1 = np.array(
        sorted(intervention.row_of_id[i] for i in intervention_ids), dtype=np.int64
    )[None, :]
    smds = _balance_batch(control, intervention, rows0, rows1)[:, 0]
    accepted = bool(_rule_accepts(spec.acceptance_rule, smds[:, None], spec.smd_threshold)[0])
    return BalanceReport(float(smds[0]), float(smds[1]), float(smds[2]), accepted)


def _allocation_from_rows(
    control: _ArmFrame,
    intervention: _ArmFrame,
    rows0: np.ndarray,
    rows1: np.ndarray,
    smds: np.ndarray,
    accepted: bool,
) -> Allocation:
    return Allocation(
        control_ids=tuple(control.ids[rows0]),
        intervention_ids=tuple(intervention.ids[rows1]),
        balance=BalanceReport(float(smds[0]), float(smds[1]), float(smds[2]), accepted),
    )


def draw_allocation(
    census: list[Village], spec: AllocationSpec, rng: np.random.Generator
) -> Allocation:
    """Draw a single candidate allocation (no acceptance filtering)."""
    control, intervention = split_arms(census)
    n = spec.villages_per_arm
    rows0 = _draw_rows_chunk(rng, control, control.quotas(n), 1)
    rows1 = _draw_rows_chunk(rng, intervention, intervention.quotas(n), 1)
    smds = _balance_batch(control, intervention, rows0, rows1)[:, 0]
    accepted = bool(_rule_accepts(spec.acceptance_rule, smds[:, None], spec.smd_threshold)[0])
    return _allocation_from_rows(control, intervention, rows0[0], rows1[0], smds, accepted)


def build_pool(
    census: list[Village],
    spec: AllocationSpec,
    seed: int,
    max_accepted: int | None = None,
) -> AllocationPool:
    """Attempt up to ``max_draws`` allocations and retain the accepted ones.

    Draws are generated in fixed-size chunks, each on its own seed
    substream, so the pool is bit-identical across runs and independent of
    how chunks might be sharded across workers. With ``max_accepted`` set,
    drawing stops at the end of the first chunk that reaches that many
    accepted allocations (still deterministic).
    """
    control, intervention = split_arms(census)
    n = spec.villages_per_arm
    quotas0 = control.quotas(n)
    quotas1 = intervention.quotas(n)

    accepted: list[Allocation] = []
    draw_indices: list[int] = []
    done = 0
    chunk_index = 0
    while done < spec.max_draws:
        k = min(_CHUNK, spec.max_draws - done)
        rng = substream(seed, "pool", n, chunk_index)
        rows0 = _draw_rows_chunk(rng, control, quotas0, k)
        rows1 = _draw_rows_chunk(rng, intervention, quotas1, k)
        smds = _balance_batch(control, intervention, rows0, rows1)
        keep = _rule_accepts(spec.acceptance_rule, smds, spec.smd_threshold)
        for i in np.nonzero(keep)[0]:
            accepted.append(
                _allocation_from_rows(control, intervention, rows0[i], rows1[i], smds[:, i], True)
            )
            draw_indices.append(done + int(i))
        done += k
        chunk_index += 1
        if max_accepted is not None and len(accepted) >= max_accepted:
            break

    if not accepted:
        raise PoolError(
            f"no allocation met the balance constraint in {spec.max_draws} draws; "
            "consider relaxing smd_threshold or switching the acceptance rule"
        )
    return AllocationPool(
        spec=spec,
        seed=seed,
        accepted=accepted,
        draw_indices=tuple(draw_indices),
        draws_attempted=done,
    )


def write_pool(pool: AllocationPool, path: str | Path) -> None:
    """Persist a pool as delimited text, round-trippable bit-exactly."""
    with open(path, "w") as fh:
        fh.write("#villagesim-pool v1\n")
        fh.write(f"seed={pool.seed}\n")
        fh.write(f"villages_per_arm={pool.spec.villages_per_arm}\n")
        fh.write(f"smd_threshold={pool.spec.smd_threshold!r}\n")
        fh.write(f"max_draws={pool.spec.max_draws}\n")
        fh.write(f"acceptance_rule={pool.spec.acceptance_rule.value}\n")
        fh.write(f"draws_attempted={pool.draws_attempted}\n")
        fh.write("draw_index\tcontrol_ids\tintervention_ids\tsmd_population\tsmd_distance\tsmd_penta0\n")
        for idx, alloc in zip(pool.draw_indices, pool.accepted):
            b = alloc.balance
            fh.write(
                f"{idx}\t{';'.join(alloc.control_ids)}\t{';'.join(alloc.intervention_ids)}"
                f"\t{b.smd_population!r}\t{b.smd_distance!r}\t{b.smd_penta0!r}\n"
            )


def read_pool(path: str | Path) -> AllocationPool:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != "#villagesim-pool v1":
            raise SchemaError("not a villagesim pool file")
        header: dict[str, str] = {}
        for _ in range(6):
            key, _, value = fh.readline().strip().partition("=")
            header[key] = value
        try:
            spec = AllocationSpec(
                villages_per_arm=int(header["villages_per_arm"]),
                smd_threshold=float(header["smd_threshold"]),
                max_draws=int(header["max_draws"]),
                acceptance_rule=AcceptanceRule(header["acceptance_rule"]),
            )
            seed = int(header["seed"])
            draws_attempted = int(header["draws_attempted"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"malformed pool header: {exc}") from exc
        fh.readline()  # column header
        accepted = []
        draw_indices = []
        for line in fh:
            if not line.strip():
                continue
            idx, c_ids, i_ids, s_pop, s_dist, s_rate = line.rstrip("\n").split("\t")
            draw_indices.append(int(idx))
            accepted.append(
                Allocation(
                    control_ids=tuple(c_ids.split(";")),
                    intervention_ids=tuple(i_ids.split(";")),
                    balance=BalanceReport(
                        float(s_pop), float(s_dist), float(s_rate), accepted=True
                    ),
                )
            )
    return AllocationPool(
        spec=spec,
        seed=seed,
        accepted=accepted,
        draw_indices=tuple(draw_indices),
        draws_attempted=draws_attempted,
    )
