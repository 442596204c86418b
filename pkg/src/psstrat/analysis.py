"""End-to-end subclassification analysis of one dataset."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .dataset import GroupSummary, ObservationalDataset, summarize
from .errors import DomainError, SchemaError
from .estimators import (
    WEIGHTINGS,
    BiasDecomposition,
    EffectEstimate,
    bias_decomposition,
    naive_difference,
    regression_adjusted_effect,
    stratified_effect,
)
from .glm import LINKS, DesignSpec, likelihood_ratio_test
from .numkit import TestResult
from .propensity import (
    PropensityModel,
    ScoredSample,
    SupportInterval,
    estimate_propensity,
    support_interval,
    trim_to_support,
)
from .stratify import (
    BalanceReport,
    RubinDiagnostics,
    StrataPartition,
    balance_table,
    initial_strata,
    refine_strata,
    rubin_diagnostics,
)

_WEIGHTING_ALIASES = {"total": "total_units", "treated": "treated_units"}


@dataclass(frozen=True)
class AnalysisConfig:
    """Every tunable of the pipeline; all of it is echoed into reports."""

    link: str = "probit"
    terms: Optional[tuple[str, ...]] = None
    interactions: tuple[str, ...] = ()
    quadratics: tuple[str, ...] = ()
    alpha: float = 0.05
    min_count: int = 5
    width: float = 0.2
    max_depth: int = 6
    weighting: str = "total_units"
    level: float = 0.95

    def __post_init__(self):
        if self.link not in LINKS:
            raise SchemaError(f"link must be one of {LINKS}, got {self.link!r}")
        w = _WEIGHTING_ALIASES.get(self.weighting, self.weighting)
        if w not in WEIGHTINGS:
            raise SchemaError(f"weighting must be 'total' or 'treated', got {self.weighting!r}")
        object.__setattr__(self, "weighting", w)
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        object.__setattr__(self, "quadratics", tuple(self.quadratics))
        for term in self.interactions:
            if term.count(":") != 1:
                raise SchemaError(f"interaction must look like 'a:b', got {term!r}")
        if not 0.0 < self.alpha < 1.0:
            raise SchemaError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.level < 1.0:
            raise SchemaError(f"level must be in (0, 1), got {self.level}")
        if int(self.min_count) != self.min_count or self.min_count < 2:
            raise SchemaError(f"min_count must be an integer >= 2, got {self.min_count}")
        if not 0.0 < self.width <= 1.0:
            raise SchemaError(f"width must be in (0, 1], got {self.width}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise SchemaError(f"max_depth must be a non-negative integer, got {self.max_depth}")

    @classmethod
    def from_mapping(cls, m: Optional[Mapping[str, Any]]) -> "AnalysisConfig":
        if not m:
            return cls()
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(m) - names
        if unknown:
            raise SchemaError(f"unknown analysis settings: {sorted(unknown)}")
        return cls(**dict(m))

    def replace(self, **changes) -> "AnalysisConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def design(self, dataset: ObservationalDataset) -> DesignSpec:
        """Propensity (and outcome) model terms; main effects default to every covariate."""
        main = dataset.covariate_names if self.terms is None else self.terms
        spec = DesignSpec.parse([*main, *self.interactions, *(f"{q}^2" for q in self.quadratics)])
        spec.validate(dataset.covariate_names)
        return spec

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["terms"] = None if self.terms is None else list(self.terms)
        d["interactions"] = list(self.interactions)
        d["quadratics"] = list(self.quadratics)
        return d


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    config: AnalysisConfig
    dataset: ObservationalDataset
    summary: GroupSummary
    propensity: PropensityModel
    selection_test: TestResult
    support: SupportInterval
    dropped: tuple[str, ...]
    sample: ScoredSample
    initial: StrataPartition
    partition: StrataPartition
    balance: BalanceReport
    rubin_before: RubinDiagnostics
    rubin_after: Optional[RubinDiagnostics]
    naive: Optional[EffectEstimate] = None
    stratified: Optional[EffectEstimate] = None
    regression: Optional[EffectEstimate] = None
    bias: Optional[BiasDecomposition] = None
    warnings: tuple[dict, ...] = field(default_factory=tuple)

    @property
    def resolved(self) -> bool:
        return self.partition.resolved


def run_analysis(dataset: ObservationalDataset, config: Optional[AnalysisConfig] = None,
                 estimate_effects: bool = True) -> AnalysisResult:
    """Propensity model, trimming, stratification, balance, and effect estimates.

    With ``estimate_effects=False`` the pipeline stops after the balance
    diagnostics; the outcome then only enters the descriptive summary.
    """
    config = config or AnalysisConfig()
    warnings: list[dict] = []
    spec = config.design(dataset)

    summary = summarize(dataset)
    model = estimate_propensity(dataset, spec, config.link)
    lr = likelihood_ratio_test(model.fit)
    support = support_interval(model.scores, dataset.z)
    sample, dropped = trim_to_support(dataset, model.scores, support)

    initial = initial_strata(sample, config.width, (support.low, support.high))
    partition = refine_strata(initial, sample, config.alpha, config.min_count, config.max_depth)
    for note in partition.notes:
        warnings.append({"kind": "stratification", "message": note})
    if not partition.resolved:
        warnings.append({"kind": "Unresolvable",
                         "message": f"score imbalance persists in strata "
                                    f"{[k + 1 for k in partition.unresolved]}"})

    balance = balance_table(partition, sample, config.alpha)
    for row in balance.rows:
        if row.p_value is not None and not row.balanced and row.variable != "score":
            warnings.append({"kind": "covariate_imbalance",
                             "message": f"stratum {row.stratum}: {row.variable} differs "
                                        f"(p={row.p_value:.3g}); consider adding interaction "
                                        f"or quadratic terms to the propensity model"})
        if row.degenerate:
            warnings.append({"kind": "DegenerateStratum",
                             "message": f"stratum {row.stratum}: {row.variable} has zero "
                                        f"variance in a group"})

    before, w1 = rubin_diagnostics(sample)
    try:
        after, w2 = rubin_diagnostics(sample, partition)
    except DomainError as exc:
        after, w2 = None, [f"post-stratification diagnostics unavailable: {exc}"]
    warnings += [{"kind": "rubin", "message": m} for m in (*w1, *w2)]

    result = AnalysisResult(config, dataset, summary, model, lr, support, dropped, sample,
                            initial, partition, balance, before, after)
    if not estimate_effects:
        return dataclasses.replace(result, warnings=tuple(warnings))

    naive = naive_difference(dataset, config.level)
    strat = stratified_effect(partition, sample, config.weighting, config.level)
    reg = regression_adjusted_effect(dataset, spec, config.link, config.level)
    bias = bias_decomposition(sample, partition, config.weighting)
    for est in (naive, strat, reg):
        if est.degenerate:
            warnings.append({"kind": "degenerate_estimate",
                             "message": f"{est.method}: an outcome rate of 0 or 1 gives a zero "
                                        f"variance contribution"})
    return dataclasses.replace(result, naive=naive, stratified=strat, regression=reg, bias=bias,
                               warnings=tuple(warnings))
