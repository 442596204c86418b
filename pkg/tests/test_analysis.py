import numpy as np
import pytest

from psstrat.analysis import AnalysisConfig, run_analysis
from psstrat.errors import SchemaError
from psstrat.estimators import naive_difference


class TestAnalysisConfig:
    def test_defaults(self):
        c = AnalysisConfig()
        assert (c.link, c.alpha, c.min_count, c.width, c.max_depth) == ("probit", 0.05, 5, 0.2, 6)
        assert c.weighting == "total_units"

    def test_weighting_alias(self):
        assert AnalysisConfig(weighting="treated").weighting == "treated_units"

    @pytest.mark.parametrize("kw", [dict(link="cauchit"), dict(alpha=1.0), dict(min_count=1),
                                    dict(width=0.0), dict(max_depth=-1), dict(weighting="att"),
                                    dict(interactions=("ab",)), dict(level=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(SchemaError):
            AnalysisConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(SchemaError):
            AnalysisConfig.from_mapping({"alpah": 0.1})

    def test_replace_ignores_none(self):
        c = AnalysisConfig().replace(alpha=None, min_count=3)
        assert c.alpha == 0.05 and c.min_count == 3

    def test_design_terms(self, confounded):
        spec = AnalysisConfig(interactions=("x1:x2",), quadratics=("x1",)).design(confounded)
        assert spec.term_names == ("x1", "x2", "x1:x2", "x1^2")

    def test_unknown_term(self, confounded):
        with pytest.raises(SchemaError):
            AnalysisConfig(terms=("x9",)).design(confounded)


class TestRunAnalysis:
    def test_pipeline_pieces_agree(self, confounded):
        res = run_analysis(confounded)
        assert len(res.sample) + len(res.dropped) == len(confounded)
        assert np.all((res.sample.scores >= res.support.low) & (res.sample.scores <= res.support.high))
        assert res.naive.estimate == naive_difference(confounded).estimate
        assert res.bias.naive == naive_difference(res.sample.dataset).estimate
        assert res.bias.stratified == res.stratified.estimate
        assert res.selection_test.p_value < 0.01
        assert res.rubin_after is not None and res.rubin_after.B < res.rubin_before.B

    def test_balance_only(self, confounded):
        res = run_analysis(confounded, estimate_effects=False)
        assert res.naive is None and res.stratified is None and res.bias is None
        assert len(res.balance.rows) == len(res.partition) * 3

    def test_config_is_honoured(self, confounded):
        res = run_analysis(confounded, AnalysisConfig(link="logit", weighting="treated", min_count=8))
        assert res.propensity.fit.link == "logit"
        assert res.stratified.weighting == "treated_units"
        if len(res.partition) > 1:
            assert all(s.n_t >= 8 and s.n_c >= 8 for s in res.partition.strata)

    def test_deterministic(self, confounded):
        a, b = run_analysis(confounded), run_analysis(confounded)
        assert a.stratified.estimate == b.stratified.estimate
        assert a.partition.edges == b.partition.edges

    def test_warnings_are_structured(self, confounded):
        for w in run_analysis(confounded).warnings:
            assert set(w) == {"kind", "message"}
