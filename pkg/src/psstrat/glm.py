"""Maximum-likelihood binary-response regression (probit or logit).

Fitting is Newton-Raphson on the exact log-likelihood with step halving, so
every accepted step is an ascent step. The covariance matrix is the inverse
of the observed information at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .errors import (
    ArityMismatch,
    DomainError,
    NotBinaryTerm,
    NotConverged,
    RankDeficient,
    SchemaError,
    SeparationDetected,
)
from .numkit import TestResult, chi_square_sf, wald_z_test

Link = Literal["probit", "logit"]
LINKS = ("probit", "logit")
INTERCEPT = "(intercept)"

GRADIENT_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 20
# separation heuristic: standardized slope size at which a still-improving
# likelihood is treated as diverging
SEPARATION_BETA = 10.0
SEPARATION_GAIN = 1e-10


@dataclass(frozen=True)
class DesignSpec:
    """Model terms: main effects, pairwise interactions, quadratics.

    The intercept is always included and is not listed. Term names are
    ``"a"``, ``"a:b"`` and ``"a^2"``.
    """

    main: tuple[str, ...]
    interactions: tuple[tuple[str, str], ...] = ()
    quadratics: tuple[str, ...] = ()

    def __post_init__(self):
        names = self.term_names
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate terms in design: {names}")
        for a, b in self.interactions:
            if a == b:
                raise SchemaError(f"interaction {a}:{b} repeats a covariate; use a quadratic")

    @classmethod
    def main_effects(cls, names: Sequence[str]) -> "DesignSpec":
        return cls(tuple(names))

    @classmethod
    def parse(cls, terms: Sequence[str]) -> "DesignSpec":
        main, inter, quad = [], [], []
        for t in terms:
            t = t.strip()
            if ":" in t:
                a, b = (s.strip() for s in t.split(":", 1))
                inter.append((a, b))
            elif t.endswith("^2"):
                quad.append(t[:-2].strip())
            else:
                main.append(t)
        return cls(tuple(main), tuple(inter), tuple(quad))

    def with_leading(self, name: str) -> "DesignSpec":
        """A copy with ``name`` prepended as a main effect."""
        return DesignSpec((name, *self.main), self.interactions, self.quadratics)

    @property
    def term_names(self) -> tuple[str, ...]:
        return (*self.main,
                *(f"{a}:{b}" for a, b in self.interactions),
                *(f"{q}^2" for q in self.quadratics))

    @property
    def variables(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.main)
        for a, b in self.interactions:
            seen.update(dict.fromkeys((a, b)))
        seen.update(dict.fromkeys(self.quadratics))
        return tuple(seen)

    def validate(self, available: Sequence[str]) -> None:
        missing = [v for v in self.variables if v not in available]
        if missing:
            raise SchemaError(f"design references unknown variables: {missing}")

    def matrix(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        """Design matrix without the intercept column."""
        self.validate(list(columns))
        cols = [np.asarray(columns[m], dtype=float) for m in self.main]
        cols += [np.asarray(columns[a], dtype=float) * np.asarray(columns[b], dtype=float)
                 for a, b in self.interactions]
        cols += [np.asarray(columns[q], dtype=float) ** 2 for q in self.quadratics]
        if not cols:
            n = len(next(iter(columns.values()))) if columns else 0
            return np.empty((n, 0))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"terms": list(self.term_names)}


@dataclass(frozen=True, eq=False)
class GlmFit:
    link: Link
    term_names: tuple[str, ...]
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    null_loglik: float
    converged: bool
    iterations: int
    n: int
    gradient_norm: float
    term_means: np.ndarray
    binary_terms: frozenset
    loglik_path: tuple[float, ...] = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def coef(self, name: str) -> float:
        return float(self.beta[self.term_names.index(name)])

    def coef_se(self, name: str) -> float:
        return float(self.se[self.term_names.index(name)])

    def wald_test(self, name: str) -> TestResult:
        return wald_z_test(self.coef(name), self.coef_se(name))

    def coefficient_table(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.term_names):
            test = wald_z_test(float(self.beta[i]), float(self.se[i]))
            rows.append({"term": name, "coef": float(self.beta[i]), "se": float(self.se[i]),
                         "z": test.statistic, "p_value": test.p_value})
        return rows


# ---------------------------------------------------------------------------
# link functions


def link_inverse(eta, link: Link):
    if link == "probit":
        return special.ndtr(eta)
    return special.expit(eta)


def link_density(eta, link: Link):
    """Derivative of the inverse link."""
    if link == "probit":
        return np.exp(-0.5 * np.square(eta)) / math.sqrt(2 * math.pi)
    p = special.expit(eta)
    return p * (1.0 - p)


def link_quantile(p: float, link: Link) -> float:
    return float(special.ndtri(p) if link == "probit" else special.logit(p))


def _check_link(link: str) -> None:
    if link not in LINKS:
        raise DomainError(f"unknown link {link!r}; expected one of {LINKS}")


def loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray, link: Link) -> float:
    """Log-likelihood; ``X`` includes the intercept column."""
    r = (2.0 * y - 1.0) * (X @ beta)
    if link == "probit":
        return float(special.log_ndtr(r).sum())
    return float(-np.logaddexp(0.0, -r).sum())


def score(beta: np.ndarray, X: np.ndarray, y: np.ndarray, link: Link) -> np.ndarray:
    """Analytic gradient of :func:`loglik`."""
    return _derivatives(beta, X, y, link)[1]


def _derivatives(beta, X, y, link):
    """Log-likelihood, gradient, and negative Hessian (observed information)."""
    eta = X @ beta
    q = 2.0 * y - 1.0
    r = q * eta
    if link == "probit":
        log_cdf = special.log_ndtr(r)
        # inverse Mills ratio phi(r)/Phi(r), stable for large negative r
        lam = np.exp(-0.5 * r * r - 0.5 * math.log(2 * math.pi) - log_cdf)
        ll = float(log_cdf.sum())
        grad = X.T @ (q * lam)
        w = lam * (lam + r)
    else:
        ll = float(-np.logaddexp(0.0, -r).sum())
        p = special.expit(eta)
        grad = X.T @ (y - p)
        w = p * (1.0 - p)
    info = (X * w[:, None]).T @ X
    return ll, grad, info


def _null_loglik(y: np.ndarray) -> float:
    n = y.size
    k = float(y.sum())
    p = k / n
    return k * math.log(p) + (n - k) * math.log1p(-p)


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        bad = [names[i] for i in np.flatnonzero(norms == 0)]
        raise RankDeficient(f"all-zero design columns: {bad}")
    Xs = X / norms
    rank = np.linalg.matrix_rank(Xs)
    if rank < X.shape[1]:
        raise RankDeficient(f"design matrix has rank {rank} < {X.shape[1]} columns {list(names)}")


def fit_binary_glm(X, y, link: Link = "probit", term_names: Optional[Sequence[str]] = None,
                   *, tol: float = GRADIENT_TOL, max_iter: int = MAX_ITER) -> GlmFit:
    """Fit ``P(y=1|x) = F(b0 + x.b)`` by maximum likelihood.

    Args:
        X: ``(n, p)`` regressors, without the intercept column.
        y: binary response of length ``n``.
        link: ``"probit"`` (default) or ``"logit"``.
        term_names: names for the ``p`` columns of ``X``.
        tol: convergence threshold on the gradient max-norm.
        max_iter: Newton iteration cap.

    Raises:
        RankDeficient: the design (with intercept) is not of full column rank.
        SeparationDetected: a standardized slope passed 10 while the
            likelihood was still increasing, the usual sign of (quasi-)
            complete separation.
        NotConverged: the iteration cap was reached, or no ascent direction
            could be found away from a stationary point.
    """
    _check_link(link)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.shape != (n,):
        raise ArityMismatch(f"response has shape {y.shape}, expected ({n},)")
    if term_names is None:
        term_names = [f"x{j + 1}" for j in range(p)]
    term_names = tuple(term_names)
    if len(term_names) != p:
        raise ArityMismatch(f"{len(term_names)} term names for {p} columns")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("response must be binary")
    k = int(y.sum())
    if k == 0 or k == n:
        raise DomainError("response needs at least one success and one failure")

    names = (INTERCEPT, *term_names)
    Xd = np.column_stack([np.ones(n), X])
    _check_rank(Xd, names)
    scale = X.std(axis=0) if p else np.empty(0)

    beta = np.zeros(p + 1)
    beta[0] = link_quantile(k / n, link)
    ll, grad, info = _derivatives(beta, Xd, y, link)
    path = [ll]
    converged = False
    it = 0
    while True:
        if float(np.max(np.abs(grad))) <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise RankDeficient("information matrix is singular") from None
        slack = 8 * np.finfo(float).eps * max(1.0, abs(ll))
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            ll_new = loglik(cand, Xd, y, link)
            if ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent along the Newton direction: roundoff floor at the optimum
            # or a numerically flat likelihood
            break
        it += 1
        gain = ll_new - ll
        beta = cand
        ll, grad, info = _derivatives(beta, Xd, y, link)
        path.append(ll)
        if p and gain > SEPARATION_GAIN:
            size = float(np.max(np.abs(beta[1:]) * scale))
            if size > SEPARATION_BETA:
                raise SeparationDetected(
                    f"standardized coefficient reached {size:.3g} with likelihood still "
                    f"increasing by {gain:.3g}; the response is (quasi-)separated")

    gnorm = float(np.max(np.abs(grad)))
    if not converged:
        raise NotConverged(f"gradient max-norm {gnorm:.3g} after {it} iterations")
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise RankDeficient("information matrix is singular at the optimum") from None
    cov = 0.5 * (cov + cov.T)
    binary = frozenset(name for name, col in zip(term_names, X.T)
                       if np.all((col == 0) | (col == 1)))
    return GlmFit(
        link=link, term_names=names, beta=beta, cov=cov, loglik=ll,
        null_loglik=_null_loglik(y), converged=True, iterations=it, n=n,
        gradient_norm=gnorm, term_means=X.mean(axis=0), binary_terms=binary,
        loglik_path=tuple(path),
    )


def likelihood_ratio_test(fit: GlmFit) -> TestResult:
    """Chi-square test of the fitted model against the intercept-only model."""
    df = len(fit.beta) - 1
    if df == 0:
        raise DomainError("likelihood-ratio test needs at least one non-intercept term")
    if not fit.converged:
        raise DomainError("likelihood-ratio test needs a converged fit")
    stat = max(0.0, 2.0 * (fit.loglik - fit.null_loglik))
    return TestResult(stat, float(df), chi_square_sf(stat, df), "chi_square_lr")


def _row_with_intercept(fit: GlmFit, x_row) -> np.ndarray:
    x_row = np.asarray(x_row, dtype=float)
    p = len(fit.beta) - 1
    if x_row.shape[-1:] != (p,):
        raise ArityMismatch(f"expected {p} values for terms {fit.term_names[1:]}, got shape {x_row.shape}")
    ones = np.ones(x_row.shape[:-1] + (1,))
    return np.concatenate([ones, x_row], axis=-1)


_P_MAX = float(np.nextafter(1.0, 0.0))
_P_MIN = float(np.finfo(float).tiny)


def predict_prob(fit: GlmFit, x_row):
    """Fitted probability for one row (or a matrix of rows) of term values.

    Clipped to the open interval so probabilities stay strictly inside (0, 1).
    """
    xr = _row_with_intercept(fit, x_row)
    prob = np.clip(link_inverse(xr @ fit.beta, fit.link), _P_MIN, _P_MAX)
    return float(prob) if np.ndim(prob) == 0 else prob


def discrete_effect_at_means(fit: GlmFit, focal: str) -> float:
    return discrete_effect_with_se(fit, focal)[0]


def discrete_effect_with_se(fit: GlmFit, focal: str) -> tuple[float, float]:
    """Change in fitted probability when binary ``focal`` goes 0 -> 1.

    All other terms are held at their sample means. The standard error comes
    from the delta method on the coefficient covariance.
    """
    if focal not in fit.term_names[1:]:
        raise NotBinaryTerm(f"{focal!r} is not a term of the model")
    if focal not in fit.binary_terms:
        raise NotBinaryTerm(f"{focal!r} is not a 0/1 term in the fitted data")
    j = fit.term_names.index(focal) - 1
    x1 = fit.term_means.copy()
    x0 = fit.term_means.copy()
    x1[j], x0[j] = 1.0, 0.0
    r1, r0 = _row_with_intercept(fit, x1), _row_with_intercept(fit, x0)
    e1, e0 = float(r1 @ fit.beta), float(r0 @ fit.beta)
    effect = float(link_inverse(e1, fit.link) - link_inverse(e0, fit.link))
    g = link_density(e1, fit.link) * r1 - link_density(e0, fit.link) * r0
    se = math.sqrt(max(0.0, float(g @ fit.cov @ g)))
    return effect, se
