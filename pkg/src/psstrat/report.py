"""Serialization of analysis results: canonical JSON, journal-style text tables, CSV.

JSON output is deterministic: keys are sorted and every float is rounded to
six significant digits before encoding. Non-finite floats become ``null``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .analysis import AnalysisResult
from .estimators import EffectEstimate
from .simulate import BiasReport

SCHEMA_VERSION = "1"
TOOL_NAME = "psstrat"
SIG_DIGITS = 6


def json_ready(obj: Any) -> Any:
    """Plain-JSON copy of ``obj`` with floats rounded to six significant digits."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        r = float(f"{x:.{SIG_DIGITS}g}")
        return 0.0 if r == 0.0 else r
    if isinstance(obj, Mapping):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [json_ready(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(json_ready(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _test_dict(test) -> Optional[dict]:
    if test is None:
        return None
    return {"statistic": test.statistic, "df": test.df, "p_value": test.p_value,
            "kind": test.kind, "degenerate": test.degenerate}


def analysis_report(result: AnalysisResult, version: str, inputs: Optional[Mapping] = None) -> dict:
    """The versioned report dictionary for one analysis."""
    fit = result.propensity.fit
    summary = [
        {"variable": r.variable,
         "treated": {"n": r.treated_n, "mean": r.treated_mean, "sd": r.treated_sd},
         "control": {"n": r.control_n, "mean": r.control_mean, "sd": r.control_sd},
         "difference": r.difference, "test": _test_dict(r.test)}
        for r in result.summary.rows
    ]
    balance = [
        {"stratum": r.stratum, "variable": r.variable, "n_treated": r.n_t, "n_control": r.n_c,
         "treated_mean": r.treated_mean, "treated_sd": r.treated_sd,
         "control_mean": r.control_mean, "control_sd": r.control_sd,
         "statistic": r.statistic, "p_value": r.p_value, "balanced": r.balanced,
         "degenerate": r.degenerate}
        for r in result.balance.rows
    ]
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "analysis_report",
        "tool": {"name": TOOL_NAME, "version": version},
        "config": result.config.to_dict(),
        "inputs": dict(inputs or {}),
        "status": {"resolved": result.resolved,
                   "balance_passed": result.balance.passed},
        "summary": {"n": len(result.dataset), "n_treated": result.summary.n_treated,
                    "n_control": result.summary.n_control, "rows": summary},
        "selection_model": {
            "link": fit.link,
            "coefficients": fit.coefficient_table(),
            "loglik": fit.loglik,
            "null_loglik": fit.null_loglik,
            "iterations": fit.iterations,
            "likelihood_ratio_test": _test_dict(result.selection_test),
        },
        "support": {
            "low": result.support.low, "high": result.support.high,
            "treated_range": list(result.support.treated_range),
            "control_range": list(result.support.control_range),
            "dropped_ids": list(result.dropped),
            "n_dropped": len(result.dropped),
            "n_retained": len(result.sample),
        },
        "strata": {"initial_edges": list(result.initial.edges), **result.partition.to_dict()},
        "balance": {"alpha": result.balance.alpha, "passed": result.balance.passed,
                    "rows": balance},
        "rubin": {
            "before": result.rubin_before.to_dict(),
            "after": None if result.rubin_after is None else result.rubin_after.to_dict(),
        },
        "warnings": list(result.warnings),
    }
    if result.naive is not None:
        report["effects"] = {
            "naive": result.naive.to_dict(),
            "stratified": result.stratified.to_dict(),
            "regression_adjusted": result.regression.to_dict(),
        }
        report["bias_decomposition"] = result.bias.to_dict()
    return report


# ---------------------------------------------------------------------------
# text


def _table(headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    cells = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))
    out = [line, "-" * len(line)]
    for r in cells:
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(out)


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if not math.isfinite(v):
            return str(v)
        return f"{v:.3f}" if abs(v) >= 0.001 or v == 0 else f"{v:.1e}"
    return str(v)


def _pval(p: Optional[float]) -> str:
    if p is None:
        return "-"
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def _ms(mean: float, sd: float) -> str:
    return f"{mean:.2f} ({sd:.2f})"


def render_text(result: AnalysisResult) -> str:
    parts = []
    s = result.summary
    parts.append(f"Characteristics of treatment and control groups "
                 f"(control N = {s.n_control}, treated N = {s.n_treated})")
    parts.append(_table(
        ["variable", "control mean (sd)", "treated mean (sd)", "difference", "p"],
        [[r.variable, _ms(r.control_mean, r.control_sd), _ms(r.treated_mean, r.treated_sd),
          f"{r.difference:.2f}", _pval(r.p_value)] for r in s.rows]))

    lr = result.selection_test
    fit = result.propensity.fit
    parts.append(f"\nSelection model ({fit.link}): LR chi2({lr.df:g}) = {lr.statistic:.2f}, "
                 f"p {_pval(lr.p_value)}")
    parts.append(_table(["term", "coef", "se", "p"],
                        [[c["term"], c["coef"], c["se"], _pval(c["p_value"])]
                         for c in fit.coefficient_table()]))

    sup = result.support
    parts.append(f"\nCommon support: treated ({sup.treated_range[0]:.2f}-{sup.treated_range[1]:.2f}), "
                 f"control ({sup.control_range[0]:.2f}-{sup.control_range[1]:.2f}); "
                 f"retained [{sup.low:.4f}, {sup.high:.4f}], dropped {len(result.dropped)} unit(s)"
                 + (f": {', '.join(result.dropped)}" if result.dropped else ""))

    names = list(result.dataset.covariate_names)
    by_stratum: dict[int, dict[str, Any]] = {}
    for r in result.balance.rows:
        by_stratum.setdefault(r.stratum, {})[r.variable] = r
    headers = ["stratum", "range"]
    for name in ["score", *names]:
        headers += [f"{name} T", f"{name} C"]
    rows = []
    for st in result.partition.strata:
        cells = [st.index + 1, f"[{st.lower:.3f}, {st.upper:.3f}]"]
        for name in ["score", *names]:
            r = by_stratum[st.index + 1][name]
            flag = "" if r.balanced else "*"
            cells += [_ms(r.treated_mean, r.treated_sd), _ms(r.control_mean, r.control_sd) + flag]
        rows.append(cells)
    parts.append(f"\nBalance after subclassification (alpha = {result.balance.alpha:g}; "
                 f"* marks a significant difference)")
    parts.append(_table(headers, rows))

    def rubin_row(label, d):
        if d is None:
            return [label, None, None] + [None] * len(names)
        return [label, d.B, d.R1] + [d.R2.get(n) for n in names]
    parts.append("\nRubin diagnostics (B < 0.5; R1, R2 in [0.8, 1.25])")
    parts.append(_table(["", "B", "R1", *(f"R2 {n}" for n in names)],
                        [rubin_row("before stratification", result.rubin_before),
                         rubin_row(f"after {len(result.partition)}-stratum stratification",
                                   result.rubin_after)]))

    if result.stratified is not None:
        st = result.stratified
        parts.append(f"\nCausal effect by stratum ({st.weighting} weighting)")
        rows = [[r.index, r.n_t, r.n_c, f"{r.effect:.2f} ({r.se:.2f})", w]
                for r, w in zip(st.per_stratum, st.weights)]
        rows.append(["average", sum(r.n_t for r in st.per_stratum),
                     sum(r.n_c for r in st.per_stratum), f"{st.estimate:.2f} ({st.se:.2f})", 1.0])
        parts.append(_table(["stratum", "treated", "control", "effect (se)", "weight"], rows))
        parts.append("\nEffect estimates")
        parts.append(_table(["method", "estimate", "se", "ci low", "ci high"],
                            [[e.method, e.estimate, e.se, e.ci[0], e.ci[1]]
                             for e in (result.naive, result.stratified, result.regression)]))
        reg = result.regression.details
        parts.append(f"outcome model treatment coefficient {reg['coefficient']:.3f} "
                     f"(se {reg['coefficient_se']:.3f}, p {_pval(reg['coefficient_p_value'])})")
        b = result.bias
        parts.append(f"bias decomposition on the trimmed sample: naive {b.naive:.3f} = "
                     f"stratified {b.stratified:.3f} + bias {b.bias_hat:.3f}")

    if result.warnings:
        parts.append("\nWarnings")
        parts += [f"  [{w['kind']}] {w['message']}" for w in result.warnings]
    return "\n".join(parts) + "\n"


def render_estimate_text(est: EffectEstimate) -> str:
    rows = [[r.index, r.n_t, r.n_c, r.effect, r.se, w] for r, w in zip(est.per_stratum, est.weights)]
    rows.append(["average", sum(r.n_t for r in est.per_stratum),
                 sum(r.n_c for r in est.per_stratum), est.estimate, est.se, 1.0])
    body = _table(["stratum", "treated", "control", "effect", "se", "weight"], rows)
    return (f"{body}\n{est.level:.0%} CI: ({est.ci[0]:.3f}, {est.ci[1]:.3f}); "
            f"weighting: {est.weighting}\n")


def render_bias_text(report: BiasReport) -> str:
    rows = [[name, s.mean_estimate, s.bias, s.mc_se, s.empirical_sd, s.mean_se]
            for name, s in report.estimators.items()]
    b = report.balance
    pop = "n/a" if report.population_delta is None else f"{report.population_delta:.4f}"
    return (
        f"{report.reps} replications, {report.failures} failed; true effect {pop} "
        f"(population), {report.mean_sample_delta:.4f} (mean of samples)\n"
        + _table(["estimator", "mean", "bias", "mc se", "sd", "mean se"], rows)
        + f"\nwithin-stratum covariate tests rejecting: {b.rejections}/{b.tests}"
        f" ({_fmt(b.rejection_rate)}); B after stratification < 0.5 in "
        f"{b.b_after_pass_rate:.1%} of replications\n"
    )


# ---------------------------------------------------------------------------
# CSV


def _csv(fieldnames: Sequence[str], rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_value(v) for k, v in r.items()})
    return buf.getvalue()


def _csv_value(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else f"{v:.{SIG_DIGITS}g}"
    return "" if v is None else v


def balance_csv(result: AnalysisResult) -> str:
    """Plot-ready long table: stratum, variable, group, mean, sd, p."""
    return _csv(["stratum", "variable", "group", "mean", "sd", "p"], result.balance.csv_rows())


def effects_csv(result: AnalysisResult) -> str:
    rows = []
    for est in (result.naive, result.stratified, result.regression):
        rows.append({"method": est.method, "stratum": "", "n_treated": "", "n_control": "",
                     "estimate": est.estimate, "se": est.se, "ci_low": est.ci[0],
                     "ci_high": est.ci[1], "weight": ""})
        for r, w in zip(est.per_stratum, est.weights):
            rows.append({"method": est.method, "stratum": r.index, "n_treated": r.n_t,
                         "n_control": r.n_c, "estimate": r.effect, "se": r.se,
                         "ci_low": "", "ci_high": "", "weight": w})
    return _csv(["method", "stratum", "n_treated", "n_control", "estimate", "se",
                 "ci_low", "ci_high", "weight"], rows)


def bias_csv(report: BiasReport) -> str:
    rows = [{"estimator": k, **v.to_dict()} for k, v in report.estimators.items()]
    return _csv(["estimator", "mean_estimate", "empirical_sd", "mean_se", "bias", "mc_se"], rows)


def aggregate_csv(est: EffectEstimate) -> str:
    rows = [{"stratum": r.index, "n_treated": r.n_t, "n_control": r.n_c,
             "effect": r.effect, "se": r.se, "weight": w}
            for r, w in zip(est.per_stratum, est.weights)]
    rows.append({"stratum": "average", "n_treated": sum(r.n_t for r in est.per_stratum),
                 "n_control": sum(r.n_c for r in est.per_stratum),
                 "effect": est.estimate, "se": est.se, "weight": 1.0})
    return _csv(["stratum", "n_treated", "n_control", "effect", "se", "weight"], rows)
