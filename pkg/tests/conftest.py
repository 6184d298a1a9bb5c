import numpy as np
import pytest

from villagesim.census import (
    StudyGroup,
    Village,
    default_census_spec,
    filter_eligible,
    synthesize_census,
)


@pytest.fixture(scope="session")
def default_census():
    return filter_eligible(synthesize_census(default_census_spec()))


def make_village(
    vid="v-1",
    area="g1a1",
    group=StudyGroup.GROUP1_CONTROL,
    population=500.0,
    distance=5.0,
    children=20,
    penta0=4,
    children_6_59=None,
):
    return Village(
        id=vid,
        health_area=area,
        group=group,
        population=population,
        distance_km=distance,
        children_12_24=children,
        penta0_count=penta0,
        children_6_59=children_6_59,
    )


@pytest.fixture
def toy_census():
    """Two areas per group, varied covariates, all eligible."""
    rng = np.random.default_rng(5)
    villages = []
    for g, (group, prefix) in enumerate(
        [(StudyGroup.GROUP1_CONTROL, "g1"), (StudyGroup.GROUP2_INTERVENTION, "g2")]
    ):
        for i in range(24):
            area = f"{prefix}a{1 + i % 2}"
            children = int(rng.integers(8, 40))
            villages.append(
                make_village(
                    vid=f"{prefix}-{i:03d}",
                    area=area,
                    group=group,
                    population=float(rng.uniform(100, 2000)),
                    distance=float(rng.uniform(0.5, 12)),
                    children=children,
                    penta0=int(rng.integers(1, children)),
                )
            )
    return villages
