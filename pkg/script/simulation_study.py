import time
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from u5mr_apc.aggregate import summary_table, u5mr_draws
from u5mr_apc.config import ModelConfig, configure_logging
from u5mr_apc.data import aggregate_cells, expand_survey
from u5mr_apc.direct import NATIONAL, direct_table
from u5mr_apc.inference import fit
from u5mr_apc.synth import (
    SurveyDesign, draw_survey, generate_population, load_synth_config, population_proportions, true_u5mr,
)
from u5mr_apc.temporal import VARIANTS, period_grid

# ----- Paramètres -----
CONFIG = Path("data/synthetic_small.json")
OUT = Path("results")
SEED = 2014
N_DRAWS = 500
DESIGN = SurveyDesign(clusters_per_stratum=4, households_per_cluster=15)

configure_logging()
OUT.mkdir(exist_ok=True)

# 1️⃣ Population et vérité
config = load_synth_config(CONFIG)
population = generate_population(config, SEED)
truth = true_u5mr(population)
truth_national = truth[truth["level"] == "national"].set_index("period")["u5mr"] * 1000
proportions = population_proportions(population)

# 2️⃣ Enquête à deux degrés
survey = draw_survey(population, DESIGN, SEED + 1)
person_months = expand_survey(survey.records)
person_months = person_months[person_months["period"].between(config.first_period, config.last_period)]
cells = aggregate_cells(person_months)
periods = config.periods
print(f"{len(survey.clusters)} grappes, {len(survey.records)} enfants, {len(cells)} cellules")

# 3️⃣ Estimations directes (référence)
direct = direct_table(person_months, periods=periods)
direct_national = direct[(direct["region"] == NATIONAL) & direct["defined"]].set_index("period")

# 4️⃣ Ajustement des trois variantes
results = {}
for variant in VARIANTS:
    model_config = ModelConfig(variant=variant)
    start = time.perf_counter()
    model = model_config.assemble(cells, population.graph, extra=period_grid(periods))
    result = fit(model, model_config.optimizer)
    draws = result.sample(N_DRAWS, SEED)
    table = summary_table(u5mr_draws(model, draws, periods), proportions)
    results[variant] = table[table["level"] == "national"].set_index("period")
    print(f"{variant:>3} : {time.perf_counter() - start:6.1f} s")
    print(result.hyper_summary().to_string(index=False))

# 5️⃣ Erreurs par rapport à la vérité
print("\nVariant | MAE (pour 1000) | Couverture 95%")
print("-----------------------------------------")
rows = []
for variant, national in results.items():
    error = np.abs(national["median"] - truth_national.loc[national.index])
    covered = (national["lower"] <= truth_national.loc[national.index]) & (
        truth_national.loc[national.index] <= national["upper"]
    )
    rows.append({"variant": variant, "MAE": error.mean(), "coverage": 100 * covered.mean()})
    print(f"{variant:>7} | {error.mean():15.2f} | {100 * covered.mean():13.1f}")
pd.DataFrame(rows).to_csv(OUT / "simulation_scores.csv", index=False, float_format="%.4f")

# 6️⃣ Graphique national
fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(truth_national.index, truth_national.values, "k--", linewidth=2, label="vérité")
for variant, national in results.items():
    ax.plot(national.index, national["median"], "-", label=variant)
    ax.fill_between(national.index, national["lower"], national["upper"], alpha=0.2)
ax.plot(direct_national.index, 1000 * direct_national["u5mr"], "o", color="black", label="direct")
ax.set_xlabel("Année")
ax.set_ylabel("U5MR (pour 1000 naissances)")
ax.set_title("Simulation : U5MR national")
ax.grid(True, linestyle=":")
ax.legend()
plt.tight_layout()
plt.savefig(OUT / "simulation_national.png", dpi=120)
plt.close(fig)
