from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
from scipy.special import expit

from u5mr_apc.model import DEFAULT_PC_SPECS
from u5mr_apc.priors import PcMixingPrior, overdispersion_prior, pc_prior_precision
from u5mr_apc.spatial import icar_precision, scale_icar, scaled_eigenvalues
from u5mr_apc.synth import SynthConfig, generate_population

OUT = Path("results")
OUT.mkdir(exist_ok=True)

# ----- Graphe de 47 régions -----
population = generate_population(SynthConfig(eas_per_region=2), seed=0)
graph = population.graph
eigenvalues = scaled_eigenvalues(scale_icar(icar_precision(graph), graph))
print(f"{graph.size} régions, {len(eigenvalues)} valeurs propres non nulles")

# 1️⃣ Précisions : P(sigma > U) = p
tau = np.linspace(0.01, 20, 2000)
fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
for name in ("tau_age", "tau_space", "tau_interaction"):
    spec = DEFAULT_PC_SPECS[name]
    axes[0].plot(tau, np.exp(pc_prior_precision(spec)(tau)), label=f"{name} (U={spec.U}, p={spec.p:.2f})")
axes[0].set_xlabel("tau")
axes[0].set_title("Précision")
axes[0].legend(fontsize=7)

# 2️⃣ Mélange BYM2 : P(phi < U) = p
spec = DEFAULT_PC_SPECS["phi"]
prior = PcMixingPrior(spec, eigenvalues)
theta = np.linspace(-8, 8, 4001)
phi = expit(theta)
density = np.exp(prior.log_density_logit(theta))
mass = np.trapezoid(density, theta)
below = np.trapezoid(np.where(phi < spec.U, density, 0.0), theta)
print(f"phi : masse {mass:.4f}, P(phi < {spec.U}) = {below:.4f} (cible {spec.p:.4f})")
axes[1].plot(phi, np.exp(prior.log_density(phi)))
axes[1].set_xlabel("phi")
axes[1].set_title("Mélange spatial")

# 3️⃣ Surdispersion : P(d > U) = p
dispersion = overdispersion_prior()
d = np.linspace(1e-4, 0.2, 2000)
axes[2].plot(d, np.exp(dispersion.log_density(d)))
axes[2].set_xlabel("d")
axes[2].set_title("Surdispersion")

for ax in axes:
    ax.grid(True, linestyle=":")
plt.tight_layout()
plt.savefig(OUT / "prior_densities.png", dpi=120)
plt.close(fig)
