import json

import pandas as pd
import pytest

from u5mr_apc import __version__
from u5mr_apc.cli import build_parser, main

SURVEY = """child_id,birth_month,death_month,interview_month,cluster_id,region_id,urban,weight
c1,2010-03,,2014-06,C1,A,0,1.5
c2,2011-07,2011-09,2014-06,C1,A,0,1.5
c3,2012-01,2011-12,2014-06,C2,B,1,2.0
c4,2009-05,,2014-06,C2,Z,1,2.0
"""

SMALL_POPULATION = {
    "n_regions": 4,
    "n_all_urban_regions": 0,
    "eas_per_region": 6,
    "urban_share": [0.4, 0.5],
    "mean_households": 20.0,
    "women_per_household": 3.0,
}


@pytest.fixture
def survey_files(tmp_path):
    survey = tmp_path / "survey.csv"
    survey.write_text(SURVEY)
    adjacency = tmp_path / "adjacency.txt"
    adjacency.write_text("A: B\nB: A\n")
    return survey, adjacency


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["direct", "--survey", "s.csv", "--draws", "0"])
    assert exc.value.code == 2


def test_parser_defaults():
    args = build_parser().parse_args(["cv", "--survey", "s.csv", "--adjacency", "a.txt", "--proportions", "p.csv"])
    assert args.holdout is None
    assert args.variant is None
    assert args.draws == 1000


def test_missing_survey_returns_one(tmp_path, capsys):
    code = main(["-q", "expand", "--survey", str(tmp_path / "none.csv"), "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_expand(tmp_path, survey_files):
    survey, adjacency = survey_files
    out = tmp_path / "out"
    code = main(["-q", "expand", "--survey", str(survey), "--adjacency", str(adjacency),
                 "--periods", "2010", "2013", "--out", str(out)])
    assert code == 0
    rejections = pd.read_csv(out / "rejections.csv")
    assert rejections["row"].tolist() == [3, 4]
    cells = pd.read_csv(out / "cells.csv")
    assert cells["period"].between(2010, 2013).all()
    assert cells["deaths"].sum() == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "expand"
    assert manifest["counts"] == {"records": 2, "rejected": 2, "cells": len(cells)}
    assert {o["file"] for o in manifest["outputs"]} == {"cells.csv", "person_months.csv", "rejections.csv"}


def test_expand_rejects_empty_range(tmp_path, survey_files):
    survey, _ = survey_files
    code = main(["-q", "expand", "--survey", str(survey), "--periods", "2013", "2010", "--out", str(tmp_path)])
    assert code == 1


def test_simulate_is_deterministic(tmp_path):
    config = tmp_path / "population.json"
    config.write_text(json.dumps(SMALL_POPULATION))
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        args = ["-q", "simulate", "--config", str(config), "--seed", "3", "--clusters", "2",
                "--households", "5", "--out", str(out)]
        assert main(args) == 0
        outputs.append(out)
    for name in ("survey.csv", "clusters.csv", "truth.csv", "proportions.csv", "adjacency.txt"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
    manifest = json.loads((outputs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["counts"]["strata"] == 8


def test_simulate_design_error(tmp_path):
    config = tmp_path / "population.json"
    config.write_text(json.dumps(SMALL_POPULATION))
    code = main(["-q", "simulate", "--config", str(config), "--clusters", "50", "--out", str(tmp_path / "out")])
    assert code == 1
    assert not (tmp_path / "out" / "survey.csv").exists()


def test_bad_config_key(tmp_path):
    config = tmp_path / "population.json"
    config.write_text(json.dumps({**SMALL_POPULATION, "n_provinces": 3}))
    assert main(["-q", "simulate", "--config", str(config), "--out", str(tmp_path / "out")]) == 1


def write_estimates(fit_dir):
    fit_dir.mkdir()
    rows = []
    for period in (2012, 2013):
        rows.append({"level": "national", "region": "", "period": period, "stratum": "", "median": 60.0,
                     "lower": 50.0, "upper": 70.0, "width": 20.0, "N": 100, "source": "estimate"})
        for region in ("A", "B"):
            rows.append({"level": "region", "region": region, "period": period, "stratum": "", "median": 65.0,
                         "lower": 55.0, "upper": 75.0, "width": 20.0, "N": 100, "source": "estimate"})
    pd.DataFrame(rows).to_csv(fit_dir / "estimates.csv", index=False)


def test_failed_report_leaves_no_partial_tables(tmp_path):
    fit_dir, out = tmp_path / "fit", tmp_path / "report"
    write_estimates(fit_dir)
    code = main(["-q", "report", "--fit-dir", str(fit_dir), "--cv-dir", str(tmp_path / "absent"),
                 "--out", str(out)])
    assert code == 1
    assert list(out.iterdir()) == []
    assert main(["-q", "report", "--fit-dir", str(fit_dir), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert {o["file"] for o in manifest["outputs"]} == {
        "fig_national.csv", "fig_region_map.csv", "fig_region_trajectories.csv"}


def test_failed_run_keeps_previous_manifest(tmp_path):
    fit_dir, out = tmp_path / "fit", tmp_path / "report"
    write_estimates(fit_dir)
    assert main(["-q", "report", "--fit-dir", str(fit_dir), "--out", str(out)]) == 0
    previous = (out / "manifest.json").read_text()
    assert main(["-q", "expand", "--survey", str(tmp_path / "none.csv"), "--out", str(out)]) == 1
    assert (out / "manifest.json").read_text() == previous


@pytest.mark.slow
def test_fit_predict_direct_report(tmp_path):
    config = tmp_path / "population.json"
    config.write_text(json.dumps(SMALL_POPULATION))
    sim = tmp_path / "sim"
    assert main(["-q", "simulate", "--config", str(config), "--seed", "1", "--clusters", "2",
                 "--households", "10", "--out", str(sim)]) == 0
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"optimizer": {"max_evaluations": 150}}))
    common = ["--survey", str(sim / "survey.csv"), "--adjacency", str(sim / "adjacency.txt"),
              "--proportions", str(sim / "proportions.csv"), "--periods", "2008", "2013",
              "--config", str(model)]

    fit_dir = tmp_path / "fit"
    assert main(["-q", "fit", *common, "--variant", "AP", "--draws", "100", "--horizon", "2",
                 "--out", str(fit_dir)]) == 0
    estimates = pd.read_csv(fit_dir / "estimates.csv", keep_default_na=False)
    assert set(estimates["period"]) == set(range(2008, 2016))
    assert set(estimates.loc[estimates["period"] > 2013, "source"]) == {"forecast"}
    assert (estimates["lower"] <= estimates["upper"]).all()

    predict_dir = tmp_path / "predict"
    assert main(["-q", "predict", *common, "--fit", str(fit_dir / "fit.json"), "--draws", "100",
                 "--out", str(predict_dir)]) == 0
    predictions = pd.read_csv(predict_dir / "predictions.csv", keep_default_na=False)
    assert set(predictions["period"]) == {2014, 2015}

    direct_dir = tmp_path / "direct"
    assert main(["-q", "direct", "--survey", str(sim / "survey.csv"), "--periods", "2008", "2013",
                 "--draws", "200", "--out", str(direct_dir)]) == 0

    report_dir = tmp_path / "report"
    assert main(["-q", "report", "--fit-dir", str(fit_dir), "--direct", str(direct_dir / "direct.csv"),
                 "--out", str(report_dir)]) == 0
    assert (report_dir / "fig_age_cohort.csv").exists()
    assert (report_dir / "fig_region_map.csv").exists()
