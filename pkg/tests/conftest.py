import os

import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

from u5mr_apc.data import BirthRecord, month_index
from u5mr_apc.spatial import AdjacencyGraph, delaunay_graph
from u5mr_apc.synth import SurveyDesign, SynthConfig, draw_survey, generate_population
from u5mr_apc.temporal import period_grid

if "CI" in os.environ:
    settings.register_profile(
        "ci",
        deadline=settings.default.deadline * 10,
        max_examples=settings.default.max_examples * 5,
    )
    settings.load_profile("ci")


def record(child, birth, death=None, interview=None, cluster="C1", weight=1.0, region="A", urban=False):
    """Birth record with months given as (year, month) pairs."""
    interview = interview or (2014, 6)
    return BirthRecord(
        child_id=child,
        birth_month=month_index(*birth),
        death_month=None if death is None else month_index(*death),
        interview_month=month_index(*interview),
        cluster_id=cluster,
        mother_weight=weight,
        region_id=region,
        is_urban=urban,
    )


def toy_cells(graph, periods, seed=0, exposure_per_month=20, hazard=0.002, urban=(0, 1)):
    """Count cells on the full month grid of ``periods`` for every region and stratum."""
    rng = np.random.default_rng(seed)
    grid = period_grid(periods)
    frames = []
    for region in graph.regions:
        for flag in urban:
            cells = grid.copy()
            cells["cluster_id"] = f"{region}-{flag}"
            cells["region_id"] = region
            cells["urban"] = bool(flag)
            cells["exposure"] = cells["months"] * exposure_per_month
            cells["deaths"] = rng.binomial(cells["exposure"], hazard)
            frames.append(cells)
    cells = pd.concat(frames, ignore_index=True)
    return cells[["age_band", "period", "cohort", "cluster_id", "region_id", "urban", "deaths", "exposure"]]


@pytest.fixture
def path3():
    return AdjacencyGraph.from_mapping({"A": ["B"], "B": ["A", "C"], "C": ["B"]})


@pytest.fixture
def square4():
    return AdjacencyGraph.from_mapping({"A": ["B", "D"], "B": ["A", "C"], "C": ["B", "D"], "D": ["C", "A"]})


@pytest.fixture
def kenya_like_graph():
    rng = np.random.default_rng(47)
    ids = [f"R{i + 1:02d}" for i in range(47)]
    return delaunay_graph(rng.uniform(0, 800, size=(47, 2)), ids)


@pytest.fixture(scope="session")
def tiny_config():
    return SynthConfig(
        n_regions=4,
        n_all_urban_regions=0,
        eas_per_region=6,
        urban_share=(0.3, 0.5),
        mean_households=30.0,
        women_per_household=4.0,
        tau_period=200.0,
        tau_cohort=200.0,
        tau_interaction=400.0,
    )


@pytest.fixture(scope="session")
def tiny_population(tiny_config):
    return generate_population(tiny_config, seed=11)


@pytest.fixture(scope="session")
def tiny_survey(tiny_population):
    return draw_survey(tiny_population, SurveyDesign(clusters_per_stratum=2, households_per_cluster=10), seed=5)
