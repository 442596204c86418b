import json
import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm

import psstrat.simulate as simulate
from psstrat.analysis import run_analysis
from psstrat.errors import DegenerateConfig, DomainError, SchemaError, SimulationFailure
from psstrat.report import dumps
from psstrat.simulate import (
    PRESETS,
    CovariateSpec,
    DgpConfig,
    generate,
    monte_carlo,
    population_delta,
    replication_seed,
)


def small_config(**kw):
    base = dict(n=300, covariates=(CovariateSpec("a"), CovariateSpec("b", "bernoulli", p=0.3)),
                selection_coef=(0.6, -0.4), outcome_coef=(0.5, -0.3), tau=0.4,
                outcome_intercept=-0.2, seed=77, reps=4)
    base.update(kw)
    return DgpConfig(**base)


def quadrature_delta(cfg):
    """Population effect by Gauss-Hermite quadrature over normals and enumeration over binaries."""
    nodes, w = hermegauss(60)
    w = w / w.sum()
    normals = [(c, b) for c, b in zip(cfg.covariates, cfg.outcome_coef) if c.dist == "normal"]
    binaries = [(c, b) for c, b in zip(cfg.covariates, cfg.outcome_coef) if c.dist == "bernoulli"]
    grids = np.meshgrid(*[c.mean + c.sd * nodes for c, _ in normals], indexing="ij")
    weights = np.ones_like(grids[0])
    for k in range(len(normals)):
        shape = [1] * len(normals)
        shape[k] = -1
        weights = weights * w.reshape(shape)
    eta = cfg.outcome_intercept + sum(b * g for (c, b), g in zip(normals, grids))
    total = 0.0
    for mask in range(2 ** len(binaries)):
        prob, shift = 1.0, 0.0
        for j, (c, b) in enumerate(binaries):
            bit = (mask >> j) & 1
            prob *= c.p if bit else 1 - c.p
            shift += b * bit
        total += prob * float(np.sum(weights * (norm.cdf(eta + shift + cfg.tau) - norm.cdf(eta + shift))))
    return total


class TestConfig:
    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_load_and_round_trip(self, name):
        cfg = DgpConfig.preset(name)
        assert DgpConfig.from_mapping(cfg.to_dict()) == cfg

    def test_unknown_preset(self):
        with pytest.raises(SchemaError):
            DgpConfig.preset("nope")

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("n: 50\ncovariates:\n  - {name: q}\nselection: {coef: [0.2]}\n"
                        "outcome: {coef: [0.1], tau: 0.3}\n", encoding="utf-8")
        cfg = DgpConfig.from_yaml(path)
        assert cfg.n == 50 and cfg.selection_coef == (0.2,) and cfg.tau == 0.3

    @pytest.mark.parametrize("changes", [dict(n=3), dict(selection_coef=(0.1,)), dict(seed=-1),
                                         dict(selection_link="cloglog"), dict(reps=0)])
    def test_invalid(self, changes):
        with pytest.raises(SchemaError):
            small_config(**changes)

    @pytest.mark.parametrize("kw", [dict(dist="gamma"), dict(sd=0.0), dict(dist="bernoulli", p=1.0)])
    def test_invalid_covariate(self, kw):
        with pytest.raises(SchemaError):
            CovariateSpec("c", **kw)

    def test_missing_key(self):
        with pytest.raises(SchemaError):
            DgpConfig.from_mapping({"covariates": []})

    def test_paper_like_shape(self):
        cfg = DgpConfig.preset("paper_like")
        assert cfg.n == 481 and len(cfg.covariates) == 3
        assert [c.dist for c in cfg.covariates].count("bernoulli") == 1


class TestGenerate:
    def test_same_seed_bit_identical(self):
        cfg = small_config()
        a, b = generate(cfg), generate(cfg)
        assert a.dataset == b.dataset
        np.testing.assert_array_equal(a.y0, b.y0)
        np.testing.assert_array_equal(a.y1, b.y1)

    def test_different_streams_differ(self):
        cfg = small_config()
        a = generate(cfg, replication_seed(cfg.seed, 0))
        b = generate(cfg, replication_seed(cfg.seed, 1))
        assert not np.array_equal(a.dataset.x, b.dataset.x)

    def test_observed_outcome_is_potential_outcome(self):
        d = generate(small_config())
        ds = d.dataset
        np.testing.assert_array_equal(ds.y, np.where(ds.z == 1, d.y1, d.y0))
        assert np.all(d.y1 >= d.y0)
        assert d.sample_delta == pytest.approx(np.mean(d.y1) - np.mean(d.y0), abs=1e-15)
        assert len(d.potential_outcomes) == ds.n_treated + ds.n_control

    def test_binary_covariate_is_binary(self):
        d = generate(small_config())
        assert set(np.unique(d.dataset.x[:, 1])) <= {0.0, 1.0}

    def test_null_effect_exact(self):
        d = generate(small_config(tau=0.0))
        np.testing.assert_array_equal(d.y0, d.y1)
        assert d.sample_delta == 0.0

    def test_no_selection_balances_covariates(self):
        d = generate(small_config(n=4000, selection_coef=(0.0, 0.0)))
        ds = d.dataset
        for j in range(ds.k):
            a, b = ds.x[ds.z == 1, j], ds.x[ds.z == 0, j]
            se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
            assert abs(a.mean() - b.mean()) < 3 * se

    def test_degenerate_selection(self):
        with pytest.raises(DegenerateConfig):
            generate(small_config(n=20, selection_intercept=-40.0))

    def test_logit_selection(self):
        d = generate(small_config(selection_link="logit"))
        assert 0 < d.dataset.n_treated < 300

    def test_generator_seed_accepted(self):
        cfg = small_config()
        a = generate(cfg, np.random.default_rng(5))
        b = generate(cfg, np.random.default_rng(5))
        assert a.dataset == b.dataset


class TestPopulationDelta:
    @pytest.mark.parametrize("cfg", [small_config(), small_config(tau=-0.7, outcome_intercept=1.1),
                                     DgpConfig.preset("paper_like"), DgpConfig.preset("confounded")])
    def test_matches_quadrature(self, cfg):
        assert population_delta(cfg) == pytest.approx(quadrature_delta(cfg), abs=1e-10)

    def test_matches_large_sample(self):
        cfg = small_config(n=200_000)
        d = generate(cfg)
        se = np.std(d.y1.astype(float) - d.y0) / math.sqrt(cfg.n)
        assert abs(d.sample_delta - d.population_delta) < 4 * se

    def test_zero_effect(self):
        assert population_delta(small_config(tau=0.0)) == 0.0

    def test_too_many_binaries(self):
        covs = tuple(CovariateSpec(f"b{i}", "bernoulli") for i in range(3))
        cfg = small_config(covariates=covs, selection_coef=(0.1,) * 3, outcome_coef=(0.1,) * 3)
        assert population_delta(cfg, max_binary=2) is None


class TestMonteCarlo:
    def test_two_reps_well_formed(self):
        rep = monte_carlo(small_config(), reps=2)
        assert rep.reps == 2 and rep.failures == 0
        for s in rep.estimators.values():
            assert s.mc_se == pytest.approx(s.empirical_sd / math.sqrt(2), rel=1e-15)
        d = rep.to_dict()
        assert set(d["estimators"]) == {"naive", "stratified", "regression_adjusted"}
        json.loads(dumps(d))

    def test_bias_is_mean_error_against_sample_delta(self):
        cfg = small_config()
        rep = monte_carlo(cfg, reps=3, estimators=("naive",))
        errs = []
        for r in range(3):
            d = generate(cfg, replication_seed(cfg.seed, r))
            errs.append(run_analysis(d.dataset, cfg.analysis).naive.estimate - d.sample_delta)
        assert rep.estimators["naive"].bias == pytest.approx(np.mean(errs), abs=1e-15)

    def test_deterministic(self):
        cfg = small_config()
        assert dumps(monte_carlo(cfg).to_dict()) == dumps(monte_carlo(cfg).to_dict())

    def test_workers_do_not_change_report(self):
        cfg = small_config(reps=5)
        assert dumps(monte_carlo(cfg, workers=2).to_dict()) == dumps(monte_carlo(cfg).to_dict())

    def test_argument_checks(self):
        with pytest.raises(SchemaError):
            monte_carlo(small_config(), reps=1)
        with pytest.raises(SchemaError):
            monte_carlo(small_config(), estimators=("ipw",))

    def _failing_analysis(self, monkeypatch, fail_calls):
        real = simulate.run_analysis
        calls = {"n": 0}

        def flaky(ds, cfg):
            calls["n"] += 1
            if calls["n"] in fail_calls:
                raise DomainError("injected")
            return real(ds, cfg)

        monkeypatch.setattr(simulate, "run_analysis", flaky)

    def test_failures_excluded_below_limit(self, monkeypatch):
        self._failing_analysis(monkeypatch, {3})
        rep = monte_carlo(small_config(n=200), reps=10, estimators=("naive",))
        assert rep.failures == 1 and "injected" in rep.failure_messages[0]
        assert rep.failure_messages[0].startswith("rep 2:")

    def test_too_many_failures(self, monkeypatch):
        self._failing_analysis(monkeypatch, {1, 2})
        with pytest.raises(SimulationFailure):
            monte_carlo(small_config(n=200), reps=10, estimators=("naive",))

    def test_scaling_and_se_calibration(self):
        small = monte_carlo(small_config(n=500, seed=1), reps=60)
        large = monte_carlo(small_config(n=2000, seed=2), reps=60)
        for m in ("naive", "stratified"):
            ratio = small.estimators[m].empirical_sd / large.estimators[m].empirical_sd
            assert 2 * 0.7 <= ratio <= 2 * 1.3
        s = large.estimators["stratified"]
        assert abs(s.mean_se / s.empirical_sd - 1) < 0.25
