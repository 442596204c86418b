"""Synthetic observational data with known potential outcomes, and a Monte
Carlo harness measuring estimator bias against the true effect.

Outcomes use a shared uniform draw per unit: ``y(t) = 1`` iff
``u <= Phi(b0 + x.b + tau * t)``. With ``tau >= 0`` this gives
``y(1) >= y(0)`` unit by unit, and the finite-sample effect is just the mean
of ``y(1) - y(0)``.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import yaml
from scipy import special

from .analysis import AnalysisConfig, run_analysis
from .dataset import ObservationalDataset, PotentialOutcomePair
from .errors import DegenerateConfig, PsstratError, SchemaError, SimulationFailure
from .glm import LINKS, link_inverse

ESTIMATORS = ("naive", "stratified", "regression_adjusted")
MAX_ATTEMPTS = 10
FAILURE_LIMIT = 0.10
PRESETS = ("no_selection", "confounded", "paper_like", "calibration")


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    dist: str = "normal"
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.dist not in ("normal", "bernoulli"):
            raise SchemaError(f"covariate {self.name!r}: dist must be normal or bernoulli")
        if self.dist == "normal" and not self.sd > 0:
            raise SchemaError(f"covariate {self.name!r}: sd must be > 0")
        if self.dist == "bernoulli" and not 0.0 < self.p < 1.0:
            raise SchemaError(f"covariate {self.name!r}: p must be in (0, 1)")

    def to_dict(self) -> dict:
        if self.dist == "normal":
            return {"name": self.name, "dist": "normal", "mean": self.mean, "sd": self.sd}
        return {"name": self.name, "dist": "bernoulli", "p": self.p}


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process.

    Selection is ``z ~ Bernoulli(F(selection_intercept + x.selection_coef))``
    with ``F`` the probit or logit inverse link; the outcome model is always
    probit.
    """

    n: int
    covariates: tuple[CovariateSpec, ...]
    selection_coef: tuple[float, ...]
    outcome_coef: tuple[float, ...]
    tau: float
    selection_intercept: float = 0.0
    outcome_intercept: float = 0.0
    selection_link: str = "probit"
    seed: int = 0
    reps: int = 100
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        k = len(self.covariates)
        if self.n < 4:
            raise SchemaError(f"n must be >= 4, got {self.n}")
        if len(self.selection_coef) != k or len(self.outcome_coef) != k:
            raise SchemaError(f"selection and outcome coefficients need {k} entries each")
        if self.selection_link not in LINKS:
            raise SchemaError(f"selection link must be one of {LINKS}")
        if not 0 <= self.seed < 2 ** 64:
            raise SchemaError("seed must be a 64-bit unsigned integer")
        if self.reps < 1:
            raise SchemaError("reps must be >= 1")
        names = [c.name for c in self.covariates]
        if len(set(names)) != k:
            raise SchemaError("covariate names must be unique")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @classmethod
    def from_mapping(cls, m: Mapping[str, Any]) -> "DgpConfig":
        try:
            covs = tuple(CovariateSpec(**c) for c in m["covariates"])
            sel = m.get("selection", {})
            out = m.get("outcome", {})
            return cls(
                n=int(m["n"]),
                covariates=covs,
                selection_coef=tuple(float(v) for v in sel.get("coef", [0.0] * len(covs))),
                selection_intercept=float(sel.get("intercept", 0.0)),
                selection_link=sel.get("link", "probit"),
                outcome_coef=tuple(float(v) for v in out.get("coef", [0.0] * len(covs))),
                outcome_intercept=float(out.get("intercept", 0.0)),
                tau=float(out.get("tau", 0.0)),
                seed=int(m.get("seed", 0)),
                reps=int(m.get("reps", 100)),
                analysis=AnalysisConfig.from_mapping(m.get("analysis")),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"invalid simulation config: {exc!r}") from None

    @classmethod
    def from_yaml(cls, path) -> "DgpConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, Mapping):
            raise SchemaError(f"{path}: expected a mapping at the top level")
        return cls.from_mapping(data)

    @classmethod
    def preset(cls, name: str) -> "DgpConfig":
        if name not in PRESETS:
            raise SchemaError(f"unknown preset {name!r}; choose from {PRESETS}")
        text = resources.files("psstrat").joinpath("configs").joinpath(f"{name}.yaml").read_text("utf-8")
        return cls.from_mapping(yaml.safe_load(text))

    def replace(self, **changes) -> "DgpConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "reps": self.reps,
            "covariates": [c.to_dict() for c in self.covariates],
            "selection": {"link": self.selection_link, "intercept": self.selection_intercept,
                          "coef": list(self.selection_coef)},
            "outcome": {"intercept": self.outcome_intercept, "coef": list(self.outcome_coef),
                        "tau": self.tau},
            "analysis": self.analysis.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: ObservationalDataset
    y0: np.ndarray
    y1: np.ndarray
    sample_delta: float
    population_delta: Optional[float]

    @property
    def potential_outcomes(self) -> tuple[PotentialOutcomePair, ...]:
        return tuple(PotentialOutcomePair(int(a), int(b)) for a, b in zip(self.y0, self.y1))


def population_delta(config: DgpConfig, max_binary: int = 16) -> Optional[float]:
    """Closed-form average effect over the covariate distribution.

    Normal covariates integrate out exactly
    (``E[Phi(a + b.x)] = Phi((a + b.mu) / sqrt(1 + b' Sigma b))``); binary
    covariates are enumerated. Returns ``None`` beyond ``max_binary`` binary
    covariates.
    """
    binary = [(c, b) for c, b in zip(config.covariates, config.outcome_coef) if c.dist == "bernoulli"]
    normal = [(c, b) for c, b in zip(config.covariates, config.outcome_coef) if c.dist == "normal"]
    if len(binary) > max_binary:
        return None
    shift = config.outcome_intercept + sum(b * c.mean for c, b in normal)
    scale = math.sqrt(1.0 + sum((b * c.sd) ** 2 for c, b in normal))
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(binary)):
        prob = 1.0
        a = shift
        for bit, (c, b) in zip(bits, binary):
            prob *= c.p if bit else 1.0 - c.p
            a += b * bit
        total += prob * (special.ndtr((a + config.tau) / scale) - special.ndtr(a / scale))
    return float(total)


def _draw(config: DgpConfig, rng: np.random.Generator):
    n, k = config.n, len(config.covariates)
    x = np.empty((n, k))
    for j, c in enumerate(config.covariates):
        if c.dist == "normal":
            x[:, j] = rng.normal(c.mean, c.sd, n)
        else:
            x[:, j] = (rng.random(n) < c.p).astype(float)
    eta_sel = config.selection_intercept + x @ np.asarray(config.selection_coef)
    z = (rng.random(n) < link_inverse(eta_sel, config.selection_link)).astype(np.int8)
    eta_out = config.outcome_intercept + x @ np.asarray(config.outcome_coef)
    u = rng.random(n)
    y0 = (u <= special.ndtr(eta_out)).astype(np.int8)
    y1 = (u <= special.ndtr(eta_out + config.tau)).astype(np.int8)
    return x, z, y0, y1


def generate(config: DgpConfig, seed=None) -> SyntheticData:
    """Draw one dataset. ``seed`` (int, SeedSequence or Generator) defaults to ``config.seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        config.seed if seed is None else seed)
    for _ in range(MAX_ATTEMPTS):
        x, z, y0, y1 = _draw(config, rng)
        if 0 < z.sum() < config.n:
            break
    else:
        raise DegenerateConfig(f"selection left a treatment group empty in {MAX_ATTEMPTS} draws")
    y = np.where(z == 1, y1, y0)
    width = len(str(config.n - 1))
    ids = [f"u{i:0{width}d}" for i in range(config.n)]
    ds = ObservationalDataset(ids, z, y, x, config.covariate_names)
    y0.setflags(write=False)
    y1.setflags(write=False)
    return SyntheticData(ds, y0, y1, float(np.mean(y1.astype(float) - y0)), population_delta(config))


def replication_seed(master: int, rep: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for replication ``rep``."""
    return np.random.SeedSequence(master, spawn_key=(rep,))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class EstimatorStats:
    mean_estimate: float
    empirical_sd: float
    mean_se: float
    bias: float
    mc_se: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class BalanceStats:
    tests: int
    rejections: int
    b_after_pass_rate: float
    b_after_mean: float
    unresolved_reps: int

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.tests if self.tests else math.nan

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rejection_rate"] = self.rejection_rate
        return d


@dataclass(frozen=True)
class BiasReport:
    config: DgpConfig
    reps: int
    failures: int
    population_delta: Optional[float]
    mean_sample_delta: float
    estimators: Mapping[str, EstimatorStats]
    balance: BalanceStats
    failure_messages: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "schema_version": "1",
            "kind": "bias_report",
            "reps": self.reps,
            "failures": self.failures,
            "failure_messages": list(self.failure_messages),
            "population_delta": self.population_delta,
            "mean_sample_delta": self.mean_sample_delta,
            "estimators": {k: v.to_dict() for k, v in self.estimators.items()},
            "balance": self.balance.to_dict(),
            "config": self.config.to_dict(),
        }


@dataclass(frozen=True)
class _RepOutcome:
    rep: int
    error: Optional[str] = None
    sample_delta: float = math.nan
    estimates: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    tests: int = 0
    rejections: int = 0
    b_after: float = math.nan
    resolved: bool = True


def run_replication(config: DgpConfig, rep: int,
                    estimators: Sequence[str] = ESTIMATORS) -> _RepOutcome:
    try:
        data = generate(config, replication_seed(config.seed, rep))
        res = run_analysis(data.dataset, config.analysis)
    except PsstratError as exc:
        return _RepOutcome(rep, error=f"rep {rep}: {exc.kind}: {exc}")
    by_name = {"naive": res.naive, "stratified": res.stratified,
               "regression_adjusted": res.regression}
    rej, tests = res.balance.rejections(res.dataset.covariate_names)
    return _RepOutcome(
        rep,
        sample_delta=data.sample_delta,
        estimates={m: (by_name[m].estimate, by_name[m].se) for m in estimators},
        tests=tests,
        rejections=rej,
        b_after=res.rubin_after.B if res.rubin_after is not None else math.nan,
        resolved=res.resolved,
    )


def _run_chunk(args):
    config, reps, estimators = args
    return [run_replication(config, r, estimators) for r in reps]


def monte_carlo(config: DgpConfig, reps: Optional[int] = None,
                estimators: Sequence[str] = ESTIMATORS, workers: int = 1) -> BiasReport:
    """Repeat generate -> full analysis ``reps`` times and summarise each estimator.

    Bias is the mean of ``estimate - sample_delta`` over successful
    replications, and its Monte Carlo standard error is the empirical SD of
    the estimates over ``sqrt(successes)``. Failed replications are excluded
    and counted; more than 10% failures raises :class:`SimulationFailure`.
    Results do not depend on ``workers``.
    """
    reps = config.reps if reps is None else reps
    if reps < 2:
        raise SchemaError("monte_carlo needs reps >= 2")
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise SchemaError(f"unknown estimators {sorted(unknown)}")
    if workers > 1:
        chunks = [list(range(i, reps, workers)) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            outcomes = [o for part in pool.map(_run_chunk, [(config, c, estimators) for c in chunks])
                        for o in part]
    else:
        outcomes = [run_replication(config, r, estimators) for r in range(reps)]
    outcomes.sort(key=lambda o: o.rep)

    failed = [o for o in outcomes if o.error is not None]
    ok = [o for o in outcomes if o.error is None]
    if len(failed) > FAILURE_LIMIT * reps or len(ok) < 2:
        raise SimulationFailure(
            f"{len(failed)} of {reps} replications failed; first: {failed[0].error if failed else ''}")

    deltas = np.array([o.sample_delta for o in ok])
    stats = {}
    for m in estimators:
        est = np.array([o.estimates[m][0] for o in ok])
        se = np.array([o.estimates[m][1] for o in ok])
        sd = float(est.std(ddof=1))
        stats[m] = EstimatorStats(
            mean_estimate=float(est.mean()),
            empirical_sd=sd,
            mean_se=float(se.mean()),
            bias=float(np.mean(est - deltas)),
            mc_se=sd / math.sqrt(len(ok)),
        )
    b_after = np.array([o.b_after for o in ok])
    balance = BalanceStats(
        tests=sum(o.tests for o in ok),
        rejections=sum(o.rejections for o in ok),
        b_after_pass_rate=float(np.mean(b_after < 0.5)),
        b_after_mean=float(np.nanmean(b_after)) if np.isfinite(b_after).any() else math.nan,
        unresolved_reps=sum(not o.resolved for o in ok),
    )
    return BiasReport(config, reps, len(failed), population_delta(config), float(deltas.mean()),
                      stats, balance, tuple(o.error for o in failed))
