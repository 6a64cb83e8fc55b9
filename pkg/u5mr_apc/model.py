"""Latent Gaussian model assembly.

The latent vector stacks the blocks in a fixed order.  For the APC model it
is ``[fixed(4) | age | period | cohort | S, u* | interaction]`` with the
variant deciding which curvature blocks are present; the interaction block
uses the region-fastest ordering of :mod:`u5mr_apc.interaction`.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import expit, logit

from .data import DEFAULT_SCHEMA, AgeBandSchema
from .errors import ModelAssemblyError, ParameterError
from .interaction import DEFAULT_MAX_SIZE, kronecker_precision
from .likelihood import BetaBinomialLikelihood, GaussianLikelihood
from .priors import OverdispersionPrior, PcMixingPrior, PcPrecisionPrior, PcPriorSpec
from .spatial import AdjacencyGraph, Bym2Block, icar_precision, scale_icar, scaled_eigenvalues
from .structure import StructuredPrecision
from .temporal import ApcLayout, TemporalAxis, build_apc_layout, rw2_precision

logger = logging.getLogger(__name__)

FIXED_EFFECT_VARIANCE = 1000.0
LOGIT_NAMES = ("dispersion", "phi")

DEFAULT_PC_SPECS = {
    "tau_age": PcPriorSpec(1.0, 0.01),
    "tau_period": PcPriorSpec(1.0, 0.01),
    "tau_cohort": PcPriorSpec(1.0, 0.01),
    "tau_space": PcPriorSpec(1.0, 0.01),
    "phi": PcPriorSpec(0.5, 2.0 / 3.0),
    "tau_interaction": PcPriorSpec(0.5, 2.0 / 3.0),
}

# starting values on the natural scale
DEFAULT_START = {"dispersion": 0.01, "phi": 0.5}


class HyperParams(Mapping):
    """Named hyperparameters on their natural scale.

    ``dispersion`` lies in (0, 1), ``phi`` in [0, 1] and every ``tau_*`` is a
    positive precision.
    """

    def __init__(self, values: Union[Mapping[str, float], Sequence[tuple[str, float]]] = (), **kwargs):
        items = dict(values)
        items.update(kwargs)
        for name, value in items.items():
            value = float(value)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
            if name == "dispersion" and not 0.0 < value < 1.0:
                raise ParameterError(f"overdispersion must lie in (0, 1), got {value}")
            if name == "phi" and not 0.0 <= value <= 1.0:
                raise ParameterError(f"mixing must lie in [0, 1], got {value}")
            if name.startswith("tau_") and value <= 0:
                raise ParameterError(f"{name} must be positive, got {value}")
            items[name] = value
        self._values = items

    def __getitem__(self, name: str) -> float:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self._values.items())
        return f"HyperParams({inner})"

    def replace(self, **kwargs) -> "HyperParams":
        return HyperParams({**self._values, **kwargs})

    def to_internal(self, names: Sequence[str]) -> np.ndarray:
        return np.array([to_internal_scale(n, self[n]) for n in names])

    @classmethod
    def from_internal(cls, names: Sequence[str], vector: np.ndarray) -> "HyperParams":
        return cls({n: from_internal_scale(n, v) for n, v in zip(names, np.asarray(vector, dtype=float))})


def to_internal_scale(name: str, value: float) -> float:
    return float(logit(value)) if name in LOGIT_NAMES else math.log(value)


def from_internal_scale(name: str, value: float) -> float:
    return float(expit(value)) if name in LOGIT_NAMES else math.exp(value)


# ---------------------------------------------------------------------------
# latent blocks

@dataclass(frozen=True)
class FixedEffects:
    """Independent Normal(0, variance) coefficients."""

    labels: tuple[str, ...]
    variance: float = FIXED_EFFECT_VARIANCE
    name: str = "fixed"

    hyper_names = ()

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"fixed-effect variance must be positive, got {self.variance}")

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def constraints(self) -> np.ndarray:
        return np.zeros((0, self.dim))

    def precision(self, theta: HyperParams) -> sp.csr_matrix:
        return sp.identity(self.dim, format="csr") / self.variance

    def augmentation(self, theta: HyperParams) -> sp.csr_matrix:
        return sp.csr_matrix((self.dim, self.dim))


@dataclass(frozen=True)
class ScaledStructure:
    """``tau * Q`` for a fixed structure ``Q`` and one precision hyperparameter."""

    name: str
    structure: StructuredPrecision
    hyper: str
    _augmentation: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_augmentation", self.structure.null_augmentation())

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return (self.hyper,)

    @property
    def dim(self) -> int:
        return self.structure.dim

    @property
    def constraints(self) -> np.ndarray:
        return self.structure.constraints

    def precision(self, theta: HyperParams) -> sp.csr_matrix:
        return sp.csr_matrix(self.structure.matrix * theta[self.hyper])

    def augmentation(self, theta: HyperParams) -> sp.csr_matrix:
        return sp.csr_matrix(self._augmentation * theta[self.hyper])


@dataclass(frozen=True)
class Bym2Effect:
    """BYM2 spatial effect in its (S, u*) form; the linear predictor uses S."""

    scaled: StructuredPrecision
    name: str = "space"
    tau: str = "tau_space"
    mixing: str = "phi"
    _augmentation: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = Bym2Block(1.0, 0.5, self.scaled).constraints()
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = rows / np.where(norms > 0, norms, 1.0)
        object.__setattr__(self, "_augmentation", sp.csr_matrix(rows.T @ rows))

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return (self.tau, self.mixing)

    @property
    def dim(self) -> int:
        return 2 * self.scaled.dim

    @property
    def constraints(self) -> np.ndarray:
        return Bym2Block(1.0, 0.5, self.scaled).constraints()

    def block(self, theta: HyperParams) -> Bym2Block:
        return Bym2Block(theta[self.tau], theta[self.mixing], self.scaled)

    def precision(self, theta: HyperParams) -> sp.csr_matrix:
        return self.block(theta).precision()

    def augmentation(self, theta: HyperParams) -> sp.csr_matrix:
        return sp.csr_matrix(self._augmentation * theta[self.tau])


LatentBlock = Union[FixedEffects, ScaledStructure, Bym2Effect]


@dataclass(frozen=True)
class LatentModel:
    """Latent Gaussian model ``y | eta ~ likelihood``, ``eta = X x``.

    ``blocks`` hold the prior precision of ``x`` as a function of the
    hyperparameters; ``hyper_priors`` map each hyperparameter name to a prior
    with a ``log_density_internal`` method.
    """

    design: sp.csr_matrix
    likelihood: Union[BetaBinomialLikelihood, GaussianLikelihood]
    blocks: tuple
    hyper_priors: dict = field(compare=False)
    variant: Optional[str] = None
    layout: Optional[ApcLayout] = field(default=None, compare=False)
    graph: Optional[AdjacencyGraph] = field(default=None, compare=False)
    cells: Optional[pd.DataFrame] = field(default=None, compare=False)
    start: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "design", sp.csr_matrix(self.design, dtype=float))
        if self.design.shape[1] != self.dim:
            raise ModelAssemblyError(
                f"design has {self.design.shape[1]} columns but the blocks span {self.dim}"
            )
        if self.design.shape[0] != len(self.likelihood):
            raise ModelAssemblyError("design rows do not match the number of observations")
        missing = [n for n in self.hyper_names if n not in self.hyper_priors]
        if missing:
            raise ModelAssemblyError(f"no prior for hyperparameters {', '.join(missing)}")

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    @property
    def hyper_names(self) -> tuple[str, ...]:
        names = ["dispersion"] if self.likelihood.has_dispersion else []
        for block in self.blocks:
            names.extend(block.hyper_names)
        return tuple(names)

    @property
    def offsets(self) -> dict[str, int]:
        out, offset = {}, 0
        for block in self.blocks:
            out[block.name] = offset
            offset += block.dim
        return out

    def block_slice(self, name: str) -> slice:
        for block in self.blocks:
            if block.name == name:
                start = self.offsets[name]
                return slice(start, start + block.dim)
        raise KeyError(name)

    def get_block(self, name: str) -> LatentBlock:
        return next(b for b in self.blocks if b.name == name)

    @cached_property
    def constraints(self) -> np.ndarray:
        rows, offset = [], 0
        for block in self.blocks:
            a = block.constraints
            if a.shape[0]:
                padded = np.zeros((a.shape[0], self.dim))
                padded[:, offset:offset + block.dim] = a
                rows.append(padded)
            offset += block.dim
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    @property
    def rhs(self) -> np.ndarray:
        return np.zeros(self.constraints.shape[0])

    def check_hyper(self, theta: HyperParams) -> None:
        names = set(self.hyper_names)
        if set(theta) != names:
            raise ParameterError(
                f"model expects hyperparameters {sorted(names)}, got {sorted(theta)}"
            )

    def prior_precision(self, theta: HyperParams) -> sp.csc_matrix:
        return sp.block_diag([b.precision(theta) for b in self.blocks], format="csc")

    def augmentation(self, theta: HyperParams) -> sp.csc_matrix:
        return sp.block_diag([b.augmentation(theta) for b in self.blocks], format="csc")

    def log_prior_hyper(self, internal: np.ndarray) -> float:
        return float(
            sum(self.hyper_priors[n].log_density_internal(v) for n, v in zip(self.hyper_names, internal))
        )

    def default_hyper(self) -> HyperParams:
        values = {n: self.start.get(n, DEFAULT_START.get(n, 1.0)) for n in self.hyper_names}
        return HyperParams(values)

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return self.design @ x

    def subset(self, rows: np.ndarray) -> "LatentModel":
        """Same latent field with only the given observations."""
        rows = np.asarray(rows)
        cells = None if self.cells is None else self.cells.iloc[rows].reset_index(drop=True)
        return LatentModel(
            design=self.design[rows],
            likelihood=self.likelihood.subset(rows),
            blocks=self.blocks,
            hyper_priors=self.hyper_priors,
            variant=self.variant,
            layout=self.layout,
            graph=self.graph,
            cells=cells,
            start=self.start,
        )

    # -- APC specific -------------------------------------------------------

    def design_for(self, frame: pd.DataFrame, spatial: bool = True, interaction: bool = True) -> sp.csr_matrix:
        """Design rows for arbitrary cells with columns age_band, period,
        cohort and, when spatial terms are kept, region_id and urban."""
        if self.layout is None:
            raise ModelAssemblyError("design_for needs an APC model")
        layout = self.layout
        index = layout.index_cells(frame)
        m = len(index)
        offsets = self.offsets
        urban = frame["urban"].to_numpy(dtype=float) if "urban" in frame else np.zeros(m)
        rows = [np.arange(m)] * 4
        cols = [np.full(m, offsets["fixed"] + k) for k in range(4)]
        vals = [np.ones(m), urban, index.t1, index.t2]
        positions = {"age": index.age, "period": index.period, "cohort": index.cohort}
        for kind in layout.curvatures:
            rows.append(np.arange(m))
            cols.append(offsets[kind] + positions[kind])
            vals.append(np.ones(m))
        if spatial or interaction:
            if "region_id" not in frame:
                raise ModelAssemblyError("spatial design rows need a region_id column")
            lookup = self.graph.index()
            unknown = sorted(set(frame["region_id"]) - set(lookup))
            if unknown:
                raise ModelAssemblyError(f"regions {unknown[:5]} are not in the adjacency graph")
            region = frame["region_id"].map(lookup).to_numpy(dtype=int)
            if spatial:
                rows.append(np.arange(m))
                cols.append(offsets["space"] + region)
                vals.append(np.ones(m))
            if interaction:
                rows.append(np.arange(m))
                cols.append(offsets["interaction"] + index.period * self.graph.size + region)
                vals.append(np.ones(m))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, self.dim)
        )

    @property
    def fixed_labels(self) -> tuple[str, ...]:
        return self.get_block("fixed").labels


def _axis_structure(axis: TemporalAxis, scale: bool) -> StructuredPrecision:
    if axis.size < 3:
        raise ModelAssemblyError(f"the {axis.kind} axis has {axis.size} levels, at least 3 are needed")
    return rw2_precision(axis, scale=scale)


def assemble_model(
    cells: pd.DataFrame,
    adjacency: AdjacencyGraph,
    schema: AgeBandSchema = DEFAULT_SCHEMA,
    variant: str = "APC",
    pc_specs: Optional[Mapping[str, PcPriorSpec]] = None,
    fixed_effect_variance: float = FIXED_EFFECT_VARIANCE,
    *,
    extra: Optional[pd.DataFrame] = None,
    age_values: Optional[Sequence[float]] = None,
    slopes: Optional[tuple[str, str]] = None,
    scale_structures: bool = True,
    overdispersion: Optional[OverdispersionPrior] = None,
    max_interaction: int = DEFAULT_MAX_SIZE,
) -> LatentModel:
    """Build the spatio-temporal APC model over aggregated count cells.

    ``extra`` cells (forecast years) extend the period and cohort axes so the
    latent field also covers them.
    """
    if cells is None or len(cells) == 0:
        raise ModelAssemblyError("no count cells to model")
    specs = {**DEFAULT_PC_SPECS, **(pc_specs or {})}
    unknown = sorted(set(cells["region_id"]) - set(adjacency.regions))
    if unknown:
        raise ModelAssemblyError(f"regions {unknown[:5]} are not in the adjacency graph")
    age_values = schema.midpoints if age_values is None else age_values
    layout = build_apc_layout(cells, variant, age_values=age_values, extra=extra, slopes=slopes)
    if layout.period_axis.size < 3:
        raise ModelAssemblyError(f"the period axis has {layout.period_axis.size} levels, at least 3 are needed")

    slope_label = f"{layout.slopes[1]} slope"
    blocks: list = [FixedEffects(("rural intercept", "urban increment", "age slope", slope_label), fixed_effect_variance)]
    priors: dict = {"dispersion": overdispersion or OverdispersionPrior()}
    for kind in layout.curvatures:
        structure = _axis_structure(layout.axis(kind), scale_structures)
        blocks.append(ScaledStructure(kind, structure, f"tau_{kind}"))
        priors[f"tau_{kind}"] = PcPrecisionPrior(specs[f"tau_{kind}"])

    scaled = scale_icar(icar_precision(adjacency), adjacency)
    blocks.append(Bym2Effect(scaled))
    priors["tau_space"] = PcPrecisionPrior(specs["tau_space"])
    priors["phi"] = PcMixingPrior(specs["phi"], scaled_eigenvalues(scaled))

    q_period = rw2_precision(layout.period_axis, scale=scale_structures)
    block = kronecker_precision(q_period, scaled, max_size=max_interaction)
    blocks.append(ScaledStructure("interaction", block.structure(), "tau_interaction"))
    priors["tau_interaction"] = PcPrecisionPrior(specs["tau_interaction"])

    skeleton = LatentModel(
        design=sp.csr_matrix((0, sum(b.dim for b in blocks))),
        likelihood=BetaBinomialLikelihood(np.zeros(0), np.zeros(0)),
        blocks=tuple(blocks),
        hyper_priors=priors,
        variant=variant,
        layout=layout,
        graph=adjacency,
    )
    design = skeleton.design_for(cells)
    model = LatentModel(
        design=design,
        likelihood=BetaBinomialLikelihood(
            cells["deaths"].to_numpy(dtype=float), cells["exposure"].to_numpy(dtype=float)
        ),
        blocks=tuple(blocks),
        hyper_priors=priors,
        variant=variant,
        layout=layout,
        graph=adjacency,
        cells=cells.reset_index(drop=True),
    )
    logger.info(
        "assembled %s model: %d cells, latent dimension %d, %d constraints",
        variant, len(cells), model.dim, model.constraints.shape[0],
    )
    return model


def gaussian_model(
    design,
    observations: np.ndarray,
    variances: np.ndarray,
    blocks: Sequence[LatentBlock],
    pc_specs: Mapping[str, PcPriorSpec],
) -> LatentModel:
    """Latent model with Gaussian observations of known variance."""
    priors = {name: PcPrecisionPrior(spec) for name, spec in pc_specs.items()}
    return LatentModel(
        design=design,
        likelihood=GaussianLikelihood(np.asarray(observations, dtype=float), np.asarray(variances, dtype=float)),
        blocks=tuple(blocks),
        hyper_priors=priors,
    )
