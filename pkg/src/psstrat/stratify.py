"""Subclassification on the propensity score and within-stratum balance checks.

Strata are half-open score intervals ``[lower, upper)``; the last one is
closed so the top of the support is included. A partition is fully described
by its ascending edge list, and unit membership is always recomputed from the
edges, which keeps split and merge exact inverses of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConstantRegressor, DomainError, ZeroVariance
from .numkit import TestResult, ols_residuals, welch_t_test
from .propensity import ScoredSample

DEFAULT_WIDTH = 0.2
DEFAULT_ALPHA = 0.05
DEFAULT_MIN_COUNT = 5
DEFAULT_MAX_DEPTH = 6
_MAX_ROUNDS = 10_000

B_THRESHOLD = 0.5
R_RANGE = (0.8, 1.25)


@dataclass(frozen=True)
class Stratum:
    index: int
    lower: float
    upper: float
    ids: tuple[str, ...]
    n_t: int
    n_c: int
    depth: int = 0

    @property
    def n(self) -> int:
        return self.n_t + self.n_c


@dataclass(frozen=True, eq=False)
class StrataPartition:
    """Ordered, disjoint score intervals and the units that fall in each."""

    edges: tuple[float, ...]
    labels: np.ndarray
    strata: tuple[Stratum, ...]
    unresolved: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.strata)

    @property
    def resolved(self) -> bool:
        return not self.unresolved

    @property
    def depths(self) -> tuple[int, ...]:
        return tuple(s.depth for s in self.strata)

    def masks(self) -> list[np.ndarray]:
        return [self.labels == k for k in range(len(self.strata))]

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "strata": [
                {"index": s.index + 1, "lower": s.lower, "upper": s.upper,
                 "n_treated": s.n_t, "n_control": s.n_c}
                for s in self.strata
            ],
            "resolved": self.resolved,
            "unresolved": [k + 1 for k in self.unresolved],
            "notes": list(self.notes),
        }


def assign(scores, edges: Sequence[float]) -> np.ndarray:
    """Stratum index of each score for the given edge list."""
    return np.searchsorted(np.asarray(edges[1:-1], dtype=float), np.asarray(scores), side="right")


def build_partition(sample: ScoredSample, edges: Sequence[float],
                    depths: Optional[Sequence[int]] = None,
                    unresolved: Iterable[int] = (), notes: Iterable[str] = ()) -> StrataPartition:
    edges = tuple(float(e) for e in edges)
    k = len(edges) - 1
    depths = tuple(depths) if depths is not None else (0,) * k
    labels = assign(sample.scores, edges)
    labels.setflags(write=False)
    z = sample.dataset.z
    ids = sample.dataset.ids
    strata = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        nt = int(z[members].sum())
        strata.append(Stratum(j, edges[j], edges[j + 1], tuple(ids[i] for i in members),
                              nt, members.size - nt, depths[j]))
    return StrataPartition(edges, labels, tuple(strata), tuple(sorted(set(unresolved))), tuple(notes))


def initial_strata(sample: ScoredSample, width: float = DEFAULT_WIDTH,
                   interval: Optional[tuple[float, float]] = None) -> StrataPartition:
    """Fixed-width bins at multiples of ``width`` on [0, 1], clipped to the support.

    ``interval`` defaults to the observed score range. Bins with no units are
    dropped by joining them to a neighbour.
    """
    if not 0.0 < width <= 1.0:
        raise DomainError(f"stratum width must be in (0, 1], got {width}")
    s = sample.scores
    if len(s) == 0:
        raise DomainError("cannot stratify an empty sample")
    low, high = interval if interval is not None else (float(s.min()), float(s.max()))
    n_bins = int(round(1.0 / width))
    cuts = [round(m * width, 12) for m in range(1, n_bins + 1)]
    edges = [low] + [c for c in cuts if low < c < high] + [high]

    counts = np.bincount(assign(s, edges), minlength=len(edges) - 1)
    while len(edges) > 2 and np.any(counts == 0):
        j = int(np.flatnonzero(counts == 0)[0])
        # drop the edge shared with the next bin, or the previous one for the last bin
        del edges[j + 1 if j + 1 < len(edges) - 1 else j]
        counts = np.bincount(assign(s, edges), minlength=len(edges) - 1)
    return build_partition(sample, edges)


def _score_test(s: np.ndarray, z: np.ndarray) -> Optional[TestResult]:
    st, sc = s[z == 1], s[z == 0]
    if st.size < 2 or sc.size < 2:
        return None
    return welch_t_test(float(st.mean()), float(st.std(ddof=1)), st.size,
                        float(sc.mean()), float(sc.std(ddof=1)), sc.size)


def _split_point(s: np.ndarray, upper: float, closed_top: bool) -> Optional[float]:
    u = np.unique(s)
    if u.size < 2:
        return None
    c = float(np.median(s))
    if c <= u[0]:
        c = float(u[1])
    if c >= upper and closed_top:
        return None
    return c


def refine_strata(partition: StrataPartition, sample: ScoredSample,
                  alpha: float = DEFAULT_ALPHA, min_count: int = DEFAULT_MIN_COUNT,
                  max_depth: int = DEFAULT_MAX_DEPTH) -> StrataPartition:
    """Split strata with score imbalance and merge strata with too few units.

    Each round first merges any stratum holding fewer than ``min_count``
    treated or control units into the adjacent stratum whose mean score is
    closer, then splits every stratum whose treated/control score means differ
    (Welch p < ``alpha``) at its median score. Refinement stops when no split
    is possible. A stratum is flagged unresolved when it is still imbalanced
    and cannot be split: the split depth cap was hit, its scores are all
    tied, or splitting it was undone by a merge (split/merge cycle).
    """
    if min_count < 2:
        raise DomainError("min_count must be >= 2 so every stratum can be tested")
    s = sample.scores
    z = sample.dataset.z
    edges = list(partition.edges)
    depths = list(partition.depths)
    seen: set[tuple[float, ...]] = set()
    blocked: set[tuple[float, float]] = set()
    notes: list[str] = []

    for _ in range(_MAX_ROUNDS):
        # merge pass
        while len(edges) > 2:
            labels = assign(s, edges)
            k = len(edges) - 1
            nt = np.bincount(labels, weights=z, minlength=k)
            n = np.bincount(labels, minlength=k)
            short = np.minimum(nt, n - nt)
            deficient = np.flatnonzero(short < min_count)
            if deficient.size == 0:
                break
            j = int(deficient[np.argmin(short[deficient])])
            if j == 0:
                other = 1
            elif j == k - 1:
                other = k - 2
            else:
                means = np.bincount(labels, weights=s, minlength=k) / np.maximum(n, 1)
                dl = abs(means[j] - means[j - 1])
                du = abs(means[j + 1] - means[j])
                other = j - 1 if dl <= du else j + 1
            lo = min(j, other)
            notes.append(f"merged strata [{edges[lo]:.4g}, {edges[lo + 1]:.4g}) and "
                         f"[{edges[lo + 1]:.4g}, {edges[lo + 2]:.4g}): fewer than {min_count} "
                         f"treated or control units")
            del edges[lo + 1]
            depths[lo:lo + 2] = [max(depths[lo], depths[lo + 1])]

        labels = assign(s, edges)
        k = len(edges) - 1
        key = tuple(edges)
        revisit = key in seen
        seen.add(key)

        imbalanced = []
        flagged = []
        for j in range(k):
            m = labels == j
            test = _score_test(s[m], z[m])
            if test is None:
                flagged.append(j)
            elif test.p_value < alpha:
                imbalanced.append(j)
        if revisit:
            blocked.update((edges[j], edges[j + 1]) for j in imbalanced)

        new_edges = [edges[0]]
        new_depths = []
        split_any = False
        for j in range(k):
            lo, hi = edges[j], edges[j + 1]
            c = None
            if j in imbalanced and (lo, hi) not in blocked and depths[j] < max_depth:
                c = _split_point(s[labels == j], hi, closed_top=(j == k - 1))
            if c is not None:
                new_edges += [c, hi]
                new_depths += [depths[j] + 1] * 2
                split_any = True
            else:
                new_edges.append(hi)
                new_depths.append(depths[j])
                if j in imbalanced:
                    flagged.append(j)
        if not split_any:
            for j in sorted(set(flagged)):
                notes.append(f"stratum {j + 1} [{edges[j]:.4g}, {edges[j + 1]:.4g}] unresolved")
            return build_partition(sample, edges, depths, flagged, notes)
        edges, depths = new_edges, new_depths

    raise RuntimeError("stratum refinement did not terminate")


# ---------------------------------------------------------------------------
# balance table


@dataclass(frozen=True)
class BalanceRow:
    stratum: int
    variable: str
    n_t: int
    n_c: int
    treated_mean: float
    treated_sd: float
    control_mean: float
    control_sd: float
    statistic: Optional[float]
    p_value: Optional[float]
    balanced: bool
    degenerate: bool


@dataclass(frozen=True)
class BalanceReport:
    alpha: float
    rows: tuple[BalanceRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.balanced for r in self.rows)

    def rejections(self, variables: Optional[Sequence[str]] = None) -> tuple[int, int]:
        """(number of rejecting tests, number of tests) over ``variables``."""
        rows = [r for r in self.rows if r.p_value is not None
                and (variables is None or r.variable in variables)]
        return sum(not r.balanced for r in rows), len(rows)

    def csv_rows(self) -> list[dict]:
        """Long-format rows for external plotting: one line per stratum, variable, group."""
        out = []
        for r in self.rows:
            for group, mean, sd in (("treated", r.treated_mean, r.treated_sd),
                                    ("control", r.control_mean, r.control_sd)):
                out.append({"stratum": r.stratum, "variable": r.variable, "group": group,
                            "mean": mean, "sd": sd, "p": r.p_value})
        return out


def _group_stats(v: np.ndarray) -> tuple[float, float]:
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def balance_table(partition: StrataPartition, sample: ScoredSample,
                  alpha: float = DEFAULT_ALPHA) -> BalanceReport:
    """Welch tests of treated vs control within every stratum.

    Covers the propensity score (variable ``"score"``) and every covariate. A
    row is ``degenerate`` when a group has zero variance on that variable;
    with both variances zero the comparison reduces to exact mean equality.
    Strata with fewer than two units in a group cannot be tested and count as
    unbalanced.
    """
    ds = sample.dataset
    variables = [("score", sample.scores)] + [(name, ds.x[:, j]) for j, name in enumerate(ds.covariate_names)]
    rows = []
    for k, m in enumerate(partition.masks()):
        t = m & (ds.z == 1)
        c = m & (ds.z == 0)
        nt, nc = int(t.sum()), int(c.sum())
        for name, v in variables:
            mt, sdt = _group_stats(v[t])
            mc, sdc = _group_stats(v[c])
            if nt >= 2 and nc >= 2:
                test = welch_t_test(mt, sdt, nt, mc, sdc, nc)
                rows.append(BalanceRow(k + 1, name, nt, nc, mt, sdt, mc, sdc, test.statistic,
                                       test.p_value, test.p_value >= alpha,
                                       sdt == 0.0 or sdc == 0.0))
            else:
                rows.append(BalanceRow(k + 1, name, nt, nc, mt, sdt, mc, sdc, None, None,
                                       False, True))
    return BalanceReport(alpha, tuple(rows))


# ---------------------------------------------------------------------------
# Rubin's diagnostics


@dataclass(frozen=True)
class RubinDiagnostics:
    B: float
    R1: float
    R2: Mapping[str, Optional[float]] = field(default_factory=dict)

    @property
    def B_ok(self) -> bool:
        return self.B < B_THRESHOLD

    @property
    def R1_ok(self) -> bool:
        return R_RANGE[0] <= self.R1 <= R_RANGE[1]

    @property
    def R2_ok(self) -> dict[str, bool]:
        return {k: v is not None and R_RANGE[0] <= v <= R_RANGE[1] for k, v in self.R2.items()}

    @property
    def passed(self) -> bool:
        return self.B_ok and self.R1_ok and all(self.R2_ok.values())

    def to_dict(self) -> dict:
        return {
            "B": self.B, "R1": self.R1, "R2": dict(self.R2),
            "flags": {"B": self.B_ok, "R1": self.R1_ok, "R2": self.R2_ok},
        }


def _split_groups(values, groups):
    v = np.asarray(values, dtype=float)
    g = np.asarray(groups)
    return v[g == 1], v[g == 0]


def rubin_B(scores, groups) -> float:
    """Standardized absolute difference in mean score, treated vs control."""
    st, sc = _split_groups(scores, groups)
    if st.size < 2 or sc.size < 2:
        raise DomainError("rubin_B needs at least two units per group")
    vt, vc = st.var(ddof=1), sc.var(ddof=1)
    if vt + vc == 0.0:
        raise ZeroVariance("both groups have constant scores")
    return float(abs(st.mean() - sc.mean()) / math.sqrt((vt + vc) / 2.0))


def rubin_R1(scores, groups) -> float:
    """Ratio of treated to control score variance."""
    st, sc = _split_groups(scores, groups)
    if st.size < 2 or sc.size < 2:
        raise DomainError("rubin_R1 needs at least two units per group")
    vc = sc.var(ddof=1)
    if vc == 0.0:
        raise ZeroVariance("control scores have zero variance")
    return float(st.var(ddof=1) / vc)


def _is_zero_var(res_var: float, reference: np.ndarray) -> bool:
    # residuals of an exact fit are roundoff, not zero
    scale = float(np.mean(np.square(reference))) if reference.size else 0.0
    return res_var <= (64 * np.finfo(float).eps) ** 2 * max(scale, np.finfo(float).tiny)


def rubin_R2(covariate, scores, groups) -> float:
    """Treated/control variance ratio of covariate residuals after regressing on the score.

    The regression is fitted on the pooled sample.
    """
    x = np.asarray(covariate, dtype=float)
    res = ols_residuals(x, scores)
    rt, rc = _split_groups(res, groups)
    if rt.size < 2 or rc.size < 2:
        raise DomainError("rubin_R2 needs at least two units per group")
    vt, vc = float(rt.var(ddof=1)), float(rc.var(ddof=1))
    if _is_zero_var(vc, x) or _is_zero_var(vt, x):
        raise ZeroVariance("covariate residuals have zero variance in a group")
    return vt / vc


def _stratified_moments(values, groups, labels, weights):
    """Stratum-weighted mean difference and within-group variances."""
    d = vt = vc = 0.0
    for k, w in weights.items():
        m = labels == k
        a, b = values[m & (groups == 1)], values[m & (groups == 0)]
        d += w * (a.mean() - b.mean())
        vt += w * a.var(ddof=1)
        vc += w * b.var(ddof=1)
    return d, vt, vc


def _constant_score_diagnostics(ds, warnings: list[str]) -> tuple[RubinDiagnostics, list[str]]:
    # every unit has the same score: the groups cannot differ on it, and
    # adjusting a covariate for a constant only centres it
    z = ds.z
    if min(int(z.sum()), int((1 - z).sum())) < 2:
        raise DomainError("Rubin diagnostics need at least two units per group")
    warnings.append("all propensity scores are equal; B and R1 take their identity values "
                    "and R2 compares raw covariate variances")
    R2: dict[str, Optional[float]] = {}
    for j, name in enumerate(ds.covariate_names):
        xt, xc = _split_groups(ds.x[:, j], z)
        vt, vc = float(xt.var(ddof=1)), float(xc.var(ddof=1))
        if vc == 0.0 or vt == 0.0:
            R2[name] = None
            warnings.append(f"R2 for {name}: covariate has zero variance in a group")
        else:
            R2[name] = vt / vc
    return RubinDiagnostics(0.0, 1.0, R2), warnings


def rubin_diagnostics(sample: ScoredSample, partition: Optional[StrataPartition] = None
                      ) -> tuple[RubinDiagnostics, list[str]]:
    """B, R1 and R2 on the whole sample, or within the strata of ``partition``.

    With a partition, scores and covariates are centred on their stratum
    means, the treated-minus-control mean difference is averaged across
    strata with stratum-size weights, and group variances are the same
    weighted average of within-stratum variances. R2 uses residuals from a
    common-slope regression of the centred covariate on the centred score.
    Strata without two units per group are left out. When every score is
    the same, B and R1 take their identity values (0 and 1). Returns the
    diagnostics and a list of warnings.
    """
    ds = sample.dataset
    s = sample.scores
    z = ds.z
    warnings: list[str] = []
    if s.size and float(np.ptp(s)) <= 64 * np.finfo(float).eps * float(np.max(np.abs(s))):
        return _constant_score_diagnostics(ds, warnings)
    if partition is None:
        B = rubin_B(s, z)
        R1 = rubin_R1(s, z)
        R2: dict[str, Optional[float]] = {}
        for j, name in enumerate(ds.covariate_names):
            try:
                R2[name] = rubin_R2(ds.x[:, j], s, z)
            except (ZeroVariance, ConstantRegressor) as exc:
                R2[name] = None
                warnings.append(f"R2 for {name}: {exc}")
        return RubinDiagnostics(B, R1, R2), warnings

    labels = partition.labels
    usable = {}
    for st in partition.strata:
        if st.n_t >= 2 and st.n_c >= 2:
            usable[st.index] = st.n
    if not usable:
        raise DomainError("no stratum has two treated and two control units")
    total = sum(usable.values())
    weights = {k: n / total for k, n in usable.items()}
    keep = np.isin(labels, list(usable))

    d, vt, vc = _stratified_moments(s, z, labels, weights)
    if vt + vc == 0.0 or vc == 0.0:
        raise ZeroVariance("within-stratum score variance is zero")
    B = abs(d) / math.sqrt((vt + vc) / 2.0)
    R1 = vt / vc

    sc = np.zeros_like(s)
    for k in usable:
        m = labels == k
        sc[m] = s[m] - s[m].mean()
    sxx = float(sc[keep] @ sc[keep])
    R2 = {}
    for j, name in enumerate(ds.covariate_names):
        x = ds.x[:, j]
        xc = np.zeros_like(x)
        for k in usable:
            m = labels == k
            xc[m] = x[m] - x[m].mean()
        if sxx == 0.0:
            R2[name] = None
            warnings.append(f"R2 for {name}: within-stratum scores are constant")
            continue
        res = xc - (float(xc[keep] @ sc[keep]) / sxx) * sc
        _, rvt, rvc = _stratified_moments(res, z, labels, weights)
        if _is_zero_var(rvc, x) or _is_zero_var(rvt, x):
            R2[name] = None
            warnings.append(f"R2 for {name}: covariate residuals have zero variance in a group")
        else:
            R2[name] = float(rvt / rvc)
    return RubinDiagnostics(float(B), float(R1), R2), warnings
