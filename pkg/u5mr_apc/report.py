"""Plot-ready long tables built from the fit, direct and CV outputs."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from .direct import NATIONAL
from .errors import ConfigError

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["region", "period", "source", "median", "lower", "upper"]
MAP_COLUMNS = ["region", "period", "median", "width"]


def direct_intervals(direct: pd.DataFrame, level: float = 0.95) -> pd.DataFrame:
    """Direct estimates per 1000 with Wald intervals on the logit scale."""
    defined = direct[direct["defined"].astype(bool)].copy()
    z = norm.ppf(0.5 + level / 2)
    spread = z * np.sqrt(defined["variance"].to_numpy())
    centre = defined["logit_u5mr"].to_numpy()
    return pd.DataFrame({
        "region": defined["region"].to_numpy(),
        "period": defined["period"].astype(int).to_numpy(),
        "source": "direct",
        "median": 1000.0 * expit(centre),
        "lower": 1000.0 * expit(centre - spread),
        "upper": 1000.0 * expit(centre + spread),
    })


def _model_rows(estimates: pd.DataFrame, level: str) -> pd.DataFrame:
    rows = estimates[estimates["level"] == level]
    frame = rows[["region", "period", "median", "lower", "upper"]].copy()
    if level == "national":
        frame["region"] = NATIONAL
    frame.insert(2, "source", rows["source"] if "source" in rows else "estimate")
    return frame


def national_trajectories(estimates: pd.DataFrame, direct: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    frames = [_model_rows(estimates, "national")]
    if direct is not None:
        frames.append(direct_intervals(direct[direct["region"] == NATIONAL]))
    return pd.concat(frames, ignore_index=True)[TRAJECTORY_COLUMNS].sort_values(["source", "period"])


def region_map(estimates: pd.DataFrame, period: Optional[int] = None) -> pd.DataFrame:
    """Medians and interval widths per region for one period, the last estimated by default."""
    rows = estimates[estimates["level"] == "region"]
    if "source" in rows:
        rows = rows[rows["source"] == "estimate"] if (rows["source"] == "estimate").any() else rows
    period = int(rows["period"].max()) if period is None else int(period)
    rows = rows[rows["period"] == period]
    return rows[MAP_COLUMNS].sort_values("region").reset_index(drop=True)


def region_trajectories(estimates: pd.DataFrame, direct: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    frames = [_model_rows(estimates, "region")]
    if direct is not None:
        frames.append(direct_intervals(direct[direct["region"] != NATIONAL]))
    return pd.concat(frames, ignore_index=True)[TRAJECTORY_COLUMNS].sort_values(["region", "source", "period"])


def age_curves(age_specific: pd.DataFrame, by: str) -> pd.DataFrame:
    rows = age_specific[age_specific["by"] == by]
    return rows.drop(columns="by").rename(columns={"time": by}).reset_index(drop=True)


def plot_national(trajectories: pd.DataFrame, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for source, rows in trajectories.groupby("source", sort=True):
        rows = rows.sort_values("period")
        if source == "direct":
            ax.errorbar(rows["period"], rows["median"],
                        yerr=[rows["median"] - rows["lower"], rows["upper"] - rows["median"]],
                        fmt="o", color="black", capsize=3, label="direct")
        else:
            ax.plot(rows["period"], rows["median"], "-", linewidth=2, label=source)
            ax.fill_between(rows["period"], rows["lower"], rows["upper"], alpha=0.3)
    ax.set_xlabel("Year")
    ax.set_ylabel("U5MR (deaths per 1000 live births)")
    ax.set_title("National under-five mortality")
    ax.grid(True, linestyle=":")
    ax.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=120)
    plt.close(fig)


def write_report(
    fit_dir,
    out_dir,
    cv_dir=None,
    direct_path=None,
    png: bool = False,
    output: Optional[Callable[[str], Path]] = None,
) -> list[Path]:
    """Read the outputs of ``fit`` (and optionally ``direct`` and ``cv``) and
    write the long tables behind every figure.

    ``output`` maps each file name to its path before the file is written.
    """
    fit_dir, out_dir = Path(fit_dir), Path(out_dir)
    output = output or (lambda name: out_dir / name)
    estimates_path = fit_dir / "estimates.csv"
    if not estimates_path.exists():
        raise ConfigError(f"{estimates_path} not found, run fit first")
    estimates = pd.read_csv(estimates_path, dtype={"region": str}, keep_default_na=False)
    direct = None
    if direct_path is not None:
        direct = pd.read_csv(direct_path, dtype={"region": str})
    written = []

    def save(frame: pd.DataFrame, name: str) -> None:
        path = output(name)
        written.append(path)
        frame.to_csv(path, index=False, float_format="%.6f")

    national = national_trajectories(estimates, direct)
    save(national, "fig_national.csv")
    save(region_map(estimates), "fig_region_map.csv")
    save(region_trajectories(estimates, direct), "fig_region_trajectories.csv")
    age_path = fit_dir / "age_specific.csv"
    if age_path.exists():
        age_specific = pd.read_csv(age_path)
        save(age_curves(age_specific, "period"), "fig_age_period.csv")
        save(age_curves(age_specific, "cohort"), "fig_age_cohort.csv")
    if cv_dir is not None:
        scores_path = Path(cv_dir) / "scores.csv"
        if not scores_path.exists():
            raise ConfigError(f"{scores_path} not found, run cv first")
        save(pd.read_csv(scores_path), "table_scores.csv")
    if png:
        path = output("fig_national.png")
        written.append(path)
        plot_national(national, path)
    logger.info("report: %d files written to %s", len(written), out_dir)
    return written
