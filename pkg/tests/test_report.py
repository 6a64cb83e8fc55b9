import numpy as np
import pandas as pd
import pytest

from u5mr_apc.errors import ConfigError
from u5mr_apc.report import (
    TRAJECTORY_COLUMNS,
    age_curves,
    direct_intervals,
    national_trajectories,
    region_map,
    region_trajectories,
    write_report,
)


@pytest.fixture
def estimates():
    rows = []
    for period, source in ((2012, "estimate"), (2013, "estimate"), (2014, "forecast")):
        base = 60.0 - 5 * (period - 2012)
        rows.append({"level": "national", "region": "", "period": period, "stratum": "",
                     "median": base, "lower": base - 5, "upper": base + 5, "width": 10.0, "N": 100,
                     "source": source})
        for i, region in enumerate(("A", "B")):
            m = base + 10 * i
            rows.append({"level": "region", "region": region, "period": period, "stratum": "",
                         "median": m, "lower": m - 8, "upper": m + 8, "width": 16.0, "N": 100, "source": source})
    return pd.DataFrame(rows)


@pytest.fixture
def direct():
    return pd.DataFrame({
        "region": ["national", "national", "A", "B"],
        "period": [2012, 2013, 2012, 2012],
        "logit_u5mr": [0.0, -2.5, -2.4, -2.6],
        "variance": [0.0, 0.01, 0.04, np.nan],
        "n_clusters": [40, 40, 10, 1],
        "defined": [True, True, True, False],
        "u5mr": [0.5, 0.076, 0.083, 0.069],
        "method": ["jackknife", "jackknife", "jackknife", ""],
    })


def test_direct_intervals(direct):
    table = direct_intervals(direct)
    assert len(table) == 3
    first = table.iloc[0]
    assert first["median"] == pytest.approx(500.0)
    assert first["lower"] == pytest.approx(500.0)
    assert (table["lower"] <= table["median"]).all() and (table["median"] <= table["upper"]).all()
    assert (table["source"] == "direct").all()


def test_national_trajectories(estimates, direct):
    table = national_trajectories(estimates, direct)
    assert table.columns.tolist() == TRAJECTORY_COLUMNS
    assert set(table["source"]) == {"estimate", "forecast", "direct"}
    assert (table["region"] == "national").all()
    assert len(national_trajectories(estimates)) == 3


def test_region_map_uses_last_estimated_period(estimates):
    table = region_map(estimates)
    assert table["period"].unique().tolist() == [2013]
    assert table["region"].tolist() == ["A", "B"]
    assert region_map(estimates, 2012)["median"].tolist() == [60.0, 70.0]


def test_region_trajectories_skip_national_direct(estimates, direct):
    table = region_trajectories(estimates, direct)
    assert "national" not in set(table["region"])
    assert len(table) == 6 + 1


def test_age_curves():
    age = pd.DataFrame({
        "by": ["period", "period", "cohort"], "age_band": [0, 1, 0], "time": [2012, 2012, 2010],
        "median": [1.0, 0.9, 1.1], "lower": [0.8, 0.7, 0.9], "upper": [1.2, 1.1, 1.3],
    })
    curves = age_curves(age, "cohort")
    assert curves.columns.tolist() == ["age_band", "cohort", "median", "lower", "upper"]
    assert len(curves) == 1


def test_write_report(tmp_path, estimates, direct):
    fit_dir, cv_dir, out = tmp_path / "fit", tmp_path / "cv", tmp_path / "report"
    for d in (fit_dir, cv_dir, out):
        d.mkdir()
    with pytest.raises(ConfigError):
        write_report(fit_dir, out)
    estimates.to_csv(fit_dir / "estimates.csv", index=False)
    direct.to_csv(tmp_path / "direct.csv", index=False)
    with pytest.raises(ConfigError):
        write_report(fit_dir, out, cv_dir=cv_dir)
    pd.DataFrame({"model": ["APC"], "MAE": [0.2]}).to_csv(cv_dir / "scores.csv", index=False)
    written = write_report(fit_dir, out, cv_dir=cv_dir, direct_path=tmp_path / "direct.csv", png=True)
    names = {p.name for p in written}
    assert names == {"fig_national.csv", "fig_region_map.csv", "fig_region_trajectories.csv",
                     "table_scores.csv", "fig_national.png"}
    assert all(p.stat().st_size > 0 for p in written)
    national = pd.read_csv(out / "fig_national.csv")
    assert set(national["source"]) == {"estimate", "forecast", "direct"}
