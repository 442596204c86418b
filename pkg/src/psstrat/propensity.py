"""Propensity scores, the region of common support, and trimming to it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import ObservationalDataset
from .errors import EmptyAfterTrim, EmptyGroup, NoOverlap, SchemaError
from .glm import DesignSpec, GlmFit, Link, fit_binary_glm, predict_prob


@dataclass(frozen=True, eq=False)
class PropensityModel:
    fit: GlmFit
    spec: DesignSpec
    scores: np.ndarray

    def score_dataset(self, dataset: ObservationalDataset) -> np.ndarray:
        """Scores for ``dataset`` recomputed from the fitted model."""
        return predict_prob(self.fit, self.spec.matrix(dataset.columns()))


@dataclass(frozen=True)
class SupportInterval:
    low: float
    high: float
    treated_range: tuple[float, float]
    control_range: tuple[float, float]

    def contains(self, scores) -> np.ndarray:
        s = np.asarray(scores)
        return (s >= self.low) & (s <= self.high)


@dataclass(frozen=True, eq=False)
class ScoredSample:
    """A dataset together with one propensity score per unit."""

    dataset: ObservationalDataset
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.shape != (len(self.dataset),):
            raise SchemaError(f"{s.size} scores for {len(self.dataset)} units")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return len(self.dataset)

    def subset(self, mask) -> "ScoredSample":
        return ScoredSample(self.dataset.subset(mask), self.scores[mask])

    def relabeled(self) -> "ScoredSample":
        return ScoredSample(self.dataset.relabeled(), self.scores)


def estimate_propensity(dataset: ObservationalDataset, spec: Optional[DesignSpec] = None,
                        link: Link = "probit") -> PropensityModel:
    """Fit the selection model ``z ~ spec`` and score every unit.

    ``spec`` defaults to main effects of all covariates.
    """
    if spec is None:
        spec = DesignSpec.main_effects(dataset.covariate_names)
    spec.validate(dataset.covariate_names)
    X = spec.matrix(dataset.columns())
    fit = fit_binary_glm(X, dataset.z, link, spec.term_names)
    scores = predict_prob(fit, X)
    scores = np.atleast_1d(np.asarray(scores, dtype=float))
    scores.setflags(write=False)
    return PropensityModel(fit, spec, scores)


def support_interval(scores, z) -> SupportInterval:
    """Overlap of the treated and control score ranges."""
    s = np.asarray(scores, dtype=float)
    z = np.asarray(z)
    st, sc = s[z == 1], s[z == 0]
    if st.size == 0 or sc.size == 0:
        raise EmptyGroup("common support needs both treated and control units")
    tr = (float(st.min()), float(st.max()))
    cr = (float(sc.min()), float(sc.max()))
    low, high = max(tr[0], cr[0]), min(tr[1], cr[1])
    if low > high:
        raise NoOverlap(f"treated scores {tr} and control scores {cr} do not overlap")
    return SupportInterval(low, high, tr, cr)


def common_support(model: PropensityModel, dataset: ObservationalDataset) -> SupportInterval:
    return support_interval(model.scores, dataset.z)


def trim_to_support(dataset: ObservationalDataset, scores, interval: SupportInterval
                    ) -> tuple[ScoredSample, tuple[str, ...]]:
    """Keep units whose score lies in the closed support interval.

    ``scores`` may be a :class:`PropensityModel` or a score vector aligned with
    ``dataset``. Returns the retained sample and the ids dropped, in dataset
    order.
    """
    if isinstance(scores, PropensityModel):
        scores = scores.scores
    s = np.asarray(scores, dtype=float)
    keep = interval.contains(s)
    dropped = tuple(dataset.ids[i] for i in np.flatnonzero(~keep))
    if not keep.any():
        raise EmptyAfterTrim("no units inside the common support")
    z_kept = dataset.z[keep]
    if z_kept.all() or not z_kept.any():
        raise EmptyAfterTrim("trimming left only one treatment group")
    if not dropped:
        return ScoredSample(dataset, s), ()
    return ScoredSample(dataset.subset(keep), s[keep]), dropped
