"""Naive, subclassification and regression-adjusted effect estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

from .dataset import ObservationalDataset
from .errors import DomainError, EmptyGroupInStratum
from .glm import DesignSpec, Link, discrete_effect_with_se, fit_binary_glm
from .numkit import EstimateWithSE, std_normal_quantile, two_proportion_diff
from .propensity import ScoredSample
from .stratify import StrataPartition

Method = Literal["naive", "stratified", "regression_adjusted"]
Weighting = Literal["total_units", "treated_units"]
WEIGHTINGS = ("total_units", "treated_units")


@dataclass(frozen=True)
class StratumEffect:
    index: int
    n_t: int
    n_c: int
    effect: float
    se: float
    degenerate: bool = False


@dataclass(frozen=True)
class EffectEstimate:
    method: Method
    estimate: float
    se: float
    ci: tuple[float, float]
    level: float = 0.95
    weighting: Optional[Weighting] = None
    per_stratum: tuple[StratumEffect, ...] = ()
    weights: tuple[float, ...] = ()
    degenerate: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "estimate": self.estimate,
            "se": self.se,
            "ci": list(self.ci),
            "level": self.level,
            "degenerate": self.degenerate,
        }
        if self.weighting is not None:
            d["weighting"] = self.weighting
        if self.per_stratum:
            d["per_stratum"] = [
                {"stratum": r.index, "n_treated": r.n_t, "n_control": r.n_c,
                 "effect": r.effect, "se": r.se, "weight": w, "degenerate": r.degenerate}
                for r, w in zip(self.per_stratum, self.weights)
            ]
        d.update(self.details)
        return d


def _ci(estimate: float, se: float, level: float) -> tuple[float, float]:
    half = std_normal_quantile(0.5 + level / 2.0) * se
    return estimate - half, estimate + half


def _from_ewse(method: Method, e: EstimateWithSE) -> EffectEstimate:
    return EffectEstimate(method, e.estimate, e.se, (e.ci_low, e.ci_high), e.level,
                          degenerate=e.degenerate)


def naive_difference(dataset: ObservationalDataset, level: float = 0.95) -> EffectEstimate:
    """Treated outcome rate minus control outcome rate."""
    t = dataset.z == 1
    y = dataset.y
    nt = int(t.sum())
    nc = len(dataset) - nt
    p1 = float(y[t].sum()) / nt
    p0 = float(y[~t].sum()) / nc
    return _from_ewse("naive", two_proportion_diff(p1, nt, p0, nc, level))


def aggregate_strata(rows: Sequence, weighting: Weighting = "total_units",
                     level: float = 0.95) -> EffectEstimate:
    """Combine per-stratum effects into one weighted estimate.

    ``rows`` holds ``(n_t, n_c, effect, se)`` tuples or :class:`StratumEffect`
    objects. Weights are stratum size over total size (``total_units``) or
    treated count over total treated (``treated_units``); the combined SE
    treats strata as independent with fixed weights.
    """
    if weighting not in WEIGHTINGS:
        raise DomainError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")
    effects = []
    for i, r in enumerate(rows):
        if not isinstance(r, StratumEffect):
            nt, nc, eff, se = r
            if int(nt) != nt or int(nc) != nc:
                raise DomainError(f"stratum {i + 1}: counts must be integers")
            r = StratumEffect(i + 1, int(nt), int(nc), float(eff), float(se))
        if r.n_t < 1 or r.n_c < 1:
            raise DomainError(f"stratum {r.index}: counts must be >= 1")
        if r.se < 0:
            raise DomainError(f"stratum {r.index}: negative standard error")
        effects.append(r)
    if not effects:
        raise DomainError("need at least one stratum")

    sizes = [r.n_t + r.n_c if weighting == "total_units" else r.n_t for r in effects]
    total = sum(sizes)
    weights = tuple(n / total for n in sizes)
    estimate = math.fsum(w * r.effect for w, r in zip(weights, effects))
    se = math.sqrt(math.fsum((w * r.se) ** 2 for w, r in zip(weights, effects)))
    return EffectEstimate("stratified", estimate, se, _ci(estimate, se, level), level,
                          weighting, tuple(effects), weights,
                          degenerate=any(r.degenerate for r in effects))


def stratified_effect(partition: StrataPartition, sample: ScoredSample,
                      weighting: Weighting = "total_units", level: float = 0.95) -> EffectEstimate:
    """Weighted average of within-stratum outcome-rate differences."""
    ds = sample.dataset
    rows = []
    for st, m in zip(partition.strata, partition.masks()):
        t = m & (ds.z == 1)
        c = m & (ds.z == 0)
        nt, nc = int(t.sum()), int(c.sum())
        if nt == 0 or nc == 0:
            raise EmptyGroupInStratum(
                f"stratum {st.index + 1} has {nt} treated and {nc} control units")
        pt = float(ds.y[t].sum()) / nt
        pc = float(ds.y[c].sum()) / nc
        se = math.sqrt(pt * (1 - pt) / nt + pc * (1 - pc) / nc)
        rows.append(StratumEffect(st.index + 1, nt, nc, pt - pc, se,
                                  degenerate=pt in (0.0, 1.0) or pc in (0.0, 1.0)))
    return aggregate_strata(rows, weighting, level)


def regression_adjusted_effect(dataset: ObservationalDataset, spec: Optional[DesignSpec] = None,
                               link: Link = "probit", level: float = 0.95) -> EffectEstimate:
    """Outcome model ``y ~ z + spec`` and the change in fitted probability for z: 0 -> 1.

    Other terms are held at their sample means; the SE is the delta-method SE
    of that difference. The raw treatment coefficient, its SE and Wald p-value
    are kept in ``details``.
    """
    if spec is None:
        spec = DesignSpec.main_effects(dataset.covariate_names)
    spec.validate(dataset.covariate_names)
    outcome_spec = spec.with_leading("z")
    X = outcome_spec.matrix(dataset.columns())
    fit = fit_binary_glm(X, dataset.y, link, outcome_spec.term_names)
    effect, se = discrete_effect_with_se(fit, "z")
    wald = fit.wald_test("z")
    details = {"link": link, "coefficient": fit.coef("z"), "coefficient_se": fit.coef_se("z"),
               "coefficient_p_value": wald.p_value}
    return EffectEstimate("regression_adjusted", effect, se, _ci(effect, se, level), level,
                          details=details)


@dataclass(frozen=True)
class BiasDecomposition:
    naive: float
    stratified: float
    bias_hat: float

    def to_dict(self) -> dict:
        return {"naive": self.naive, "stratified": self.stratified, "bias_hat": self.bias_hat}


def bias_decomposition(sample: ScoredSample, partition: StrataPartition,
                       weighting: Weighting = "total_units") -> BiasDecomposition:
    """Naive difference on the trimmed sample split into stratified effect plus bias."""
    naive = naive_difference(sample.dataset).estimate
    strat = stratified_effect(partition, sample, weighting).estimate
    return BiasDecomposition(naive, strat, naive - strat)

