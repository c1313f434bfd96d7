"""LRT, Satterthwaite, Type III, pairwise contrasts, backward selection."""

import numpy as np
import pytest

from n400surprisal.stats.data import Dataset, ModelFormula
from n400surprisal.stats.lmm import fit_lmm
from n400surprisal.stats.inference import (
    backward_model_selection,
    cell_contrast,
    likelihood_ratio_test,
    pairwise_contrast,
    satterthwaite_df,
    type3_anova,
    variance_of_contrast_gradient,
)
from simulate import crossed_two_factor, paired_condition


def fixed_only_dataset(rng, n=36, levels=("a", "b", "c")):
    cond = [levels[i % len(levels)] for i in range(n)]
    shift = {lvl: i * 0.8 for i, lvl in enumerate(levels)}
    y = rng.normal(0, 1, n) + np.array([shift[c] for c in cond])
    return Dataset(response=y, fixed={"condition": cond}, groups={})


class TestSatterthwaite:
    def test_no_random_terms_gives_residual_df_exactly(self, rng):
        ds = fixed_only_dataset(rng)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),)))
        for contrast in (np.array([1.0, 0, 0]), np.array([0, 1.0, -1.0])):
            assert satterthwaite_df(fit, contrast) == ds.n_obs - 3

    def test_balanced_paired_design_matches_classical_df(self):
        n_items = 30
        ds = paired_condition(n_items, {"typical": 0.0, "atypical": 2.0}, seed=11)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        res = pairwise_contrast(fit, "typical", "atypical")
        classical = 2 * n_items - n_items - 1
        assert res.df1 == pytest.approx(classical, abs=0.1)

    def test_gradient_matches_finite_differences(self):
        ds = paired_condition(24, {"a": 0.0, "b": 1.0}, seed=5)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        # the intercept contrast depends on every variance component
        grad, fd = variance_of_contrast_gradient(fit, np.array([1.0, 0.0]))
        numeric = fd()
        np.testing.assert_allclose(grad, numeric, rtol=1e-5)

    def test_contrast_length_checked(self):
        ds = paired_condition(10, {"a": 0.0, "b": 1.0}, seed=1)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        with pytest.raises(ValueError, match="contrast length"):
            satterthwaite_df(fit, np.ones(5))


class TestPairwise:
    def test_same_level_is_null_result(self):
        ds = paired_condition(10, {"a": 0.0, "b": 1.0}, seed=1)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        res = pairwise_contrast(fit, "a", "a")
        assert res.statistic == 0.0 and res.p == 1.0

    def test_recovers_simulated_difference(self):
        # typical 2 bits below atypical, residual sd 1, 40 items
        ds = paired_condition(40, {"typical": 0.0, "atypical": 2.0},
                              sigma2_item=1.0, sigma2_resid=1.0, seed=21)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        res = pairwise_contrast(fit, "typical", "atypical")
        assert res.p < 0.05
        assert res.statistic < 0  # typical has the lower fitted mean
        assert res.estimate == pytest.approx(-2.0, abs=3 * res.se)

    def test_location_invariance(self):
        ds = paired_condition(20, {"a": 0.0, "b": 0.9}, seed=8)
        shifted = Dataset(response=ds.response + 57.3, fixed=ds.fixed, groups=ds.groups,
                          fixed_levels=ds.fixed_levels, group_levels=ds.group_levels)
        formula = ModelFormula(fixed_terms=(("condition",),), random_intercepts=("item",))
        r1 = pairwise_contrast(fit_lmm(ds, formula), "a", "b")
        r2 = pairwise_contrast(fit_lmm(shifted, formula), "a", "b")
        # identical up to optimizer precision on the variance ratio
        assert r1.statistic == pytest.approx(r2.statistic, rel=1e-6)
        assert r1.df1 == pytest.approx(r2.df1, rel=1e-4)
        assert r1.p == pytest.approx(r2.p, rel=1e-4)
        assert r1.estimate == pytest.approx(r2.estimate, rel=1e-9)

    def test_unknown_level(self):
        ds = paired_condition(10, {"a": 0.0, "b": 1.0}, seed=1)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        with pytest.raises(ValueError, match="no fitted factor"):
            pairwise_contrast(fit, "a", "zzz")

    def test_sign_convention(self):
        ds = paired_condition(40, {"hi": 3.0, "lo": 0.0}, seed=2)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        assert pairwise_contrast(fit, "hi", "lo").statistic > 0
        assert pairwise_contrast(fit, "lo", "hi").statistic < 0


class TestTypeThree:
    def test_two_level_factor_equals_squared_t(self):
        ds = paired_condition(25, {"a": 0.0, "b": 0.8}, seed=4)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        f_res = type3_anova(fit)[0]
        t_res = pairwise_contrast(fit, "a", "b")
        assert f_res.statistic == pytest.approx(t_res.statistic ** 2, rel=1e-9)
        assert f_res.df2 == pytest.approx(t_res.df1, rel=1e-6)
        assert f_res.p == pytest.approx(t_res.p, rel=1e-9)

    def test_balanced_fixed_design_matches_classical_anova(self, rng):
        # 3 conditions x 12 replicates, no random terms
        levels = ("a", "b", "c")
        ds = fixed_only_dataset(rng, n=36, levels=levels)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),)), criterion="reml")
        res = type3_anova(fit)[0]
        # classical one-way ANOVA by hand
        y = ds.response
        cond = np.array(ds.fixed["condition"])
        grand = y.mean()
        ss_between = sum(
            (cond == lvl).sum() * (y[cond == lvl].mean() - grand) ** 2 for lvl in levels
        )
        ss_within = sum(((y[cond == lvl] - y[cond == lvl].mean()) ** 2).sum() for lvl in levels)
        f_classical = (ss_between / 2) / (ss_within / (36 - 3))
        assert res.statistic == pytest.approx(f_classical, rel=1e-9)
        assert res.df1 == 2
        assert res.df2 == pytest.approx(36 - 3, abs=1e-6)

    def test_term_absent_raises(self):
        ds = paired_condition(10, {"a": 0.0, "b": 1.0}, seed=1)
        fit = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                       random_intercepts=("item",)))
        with pytest.raises(ValueError, match="not in the fitted model"):
            type3_anova(fit, terms=[("phantom",)])


class TestLikelihoodRatio:
    def _fits(self, seed=3, delta=1.0):
        ds = paired_condition(20, {"a": 0.0, "b": delta}, seed=seed)
        full = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                        random_intercepts=("item",)), "ml")
        reduced = fit_lmm(ds, ModelFormula(random_intercepts=("item",)), "ml")
        return full, reduced

    def test_identical_models_give_p_one(self):
        full, _ = self._fits()
        res = likelihood_ratio_test(full, full)
        assert res.statistic == 0.0 and res.p == 1.0

    def test_reml_fits_rejected(self):
        ds = paired_condition(20, {"a": 0.0, "b": 1.0}, seed=3)
        full = fit_lmm(ds, ModelFormula(fixed_terms=(("condition",),),
                                        random_intercepts=("item",)), "reml")
        reduced = fit_lmm(ds, ModelFormula(random_intercepts=("item",)), "reml")
        with pytest.raises(ValueError, match="REML"):
            likelihood_ratio_test(full, reduced)

    def test_non_nested_rejected(self, rng):
        n = 24
        ds = Dataset(
            response=rng.normal(0, 1, n),
            fixed={"f1": ["a", "b"] * (n // 2), "f2": ["x", "x", "y", "y"] * (n // 4)},
            groups={},
        )
        fit1 = fit_lmm(ds, ModelFormula(fixed_terms=(("f1",),)), "ml")
        fit2 = fit_lmm(ds, ModelFormula(fixed_terms=(("f2",),)), "ml")
        with pytest.raises(ValueError, match="not nested"):
            likelihood_ratio_test(fit1, fit2)

    def test_different_data_rejected(self):
        full, _ = self._fits(seed=3)
        _, other_reduced = self._fits(seed=4)
        with pytest.raises(ValueError, match="same dataset"):
            likelihood_ratio_test(full, other_reduced)

    def test_detects_strong_effect(self):
        full, reduced = self._fits(delta=2.0)
        res = likelihood_ratio_test(full, reduced)
        assert res.statistic > 0
        assert res.p < 0.001


class TestBackwardSelection:
    def test_strong_effect_retained(self):
        ds = paired_condition(40, {"a": 0.0, "b": 5.0}, sigma2_resid=1.0, seed=9)
        sel = backward_model_selection(ds, [("condition",)], random_intercepts=("item",))
        assert ("condition",) in sel.selected.fixed_terms
        assert sel.tests["condition"].p < 0.05

    def test_noise_dropped_at_seed_averaged_level(self):
        dropped = 0
        n_runs = 40
        for seed in range(n_runs):
            ds = paired_condition(20, {"a": 0.0, "b": 0.0}, seed=seed + 100)
            sel = backward_model_selection(ds, [("condition",)], random_intercepts=("item",))
            dropped += ("condition",) not in sel.selected.fixed_terms
        # ~5% false-positive rate; 34/40 keeps the test far from the boundary
        assert dropped >= 34

    def test_exactly_generative_candidate_retained(self):
        hits = 0
        n_sims = 100
        for seed in range(n_sims):
            ds = crossed_two_factor(
                30,
                {("a1", "b1"): 0.0, ("a1", "b2"): 0.0, ("a2", "b1"): 1.2, ("a2", "b2"): 1.2},
                sigma2_item=0.5, sigma2_resid=1.0, seed=seed,
            )
            sel = backward_model_selection(
                ds, [("factor_a",), ("factor_b",)], random_intercepts=("item",)
            )
            hits += sel.selected.fixed_terms == (("factor_a",),)
        assert hits >= 90

    def test_marginality_interaction_dropped_before_parents(self):
        ds = crossed_two_factor(
            25,
            {("a1", "b1"): 0.0, ("a1", "b2"): 0.0, ("a2", "b1"): 2.0, ("a2", "b2"): 2.0},
            seed=17,
        )
        sel = backward_model_selection(
            ds,
            [("factor_a",), ("factor_b",), ("factor_a", "factor_b")],
            random_intercepts=("item",),
        )
        if ("factor_a", "factor_b") in sel.selected.fixed_terms:
            assert ("factor_a",) in sel.selected.fixed_terms
            assert ("factor_b",) in sel.selected.fixed_terms
        assert ("factor_a",) in sel.selected.fixed_terms

    def test_every_candidate_reported(self):
        ds = crossed_two_factor(
            20, {("a1", "b1"): 0.0, ("a1", "b2"): 0.4, ("a2", "b1"): 1.0, ("a2", "b2"): 1.4},
            seed=23,
        )
        sel = backward_model_selection(
            ds, [("factor_a",), ("factor_b",)], random_intercepts=("item",)
        )
        assert set(sel.tests) == {"factor_a", "factor_b"}


class TestCellContrast:
    def test_crossed_cells(self):
        ds = crossed_two_factor(
            40,
            {("t", "most"): 0.0, ("t", "few"): 1.5, ("a", "most"): 3.0, ("a", "few"): 3.0},
            sigma2_item=0.5, sigma2_resid=0.6, seed=31,
        )
        formula = ModelFormula(
            fixed_terms=(("factor_a",), ("factor_b",), ("factor_a", "factor_b")),
            random_intercepts=("item",),
        )
        fit = fit_lmm(ds, formula)
        res = cell_contrast(fit, {"factor_a": "t", "factor_b": "most"},
                            {"factor_a": "t", "factor_b": "few"})
        assert res.estimate == pytest.approx(-1.5, abs=3 * res.se)
        assert res.p < 0.05
        null = cell_contrast(fit, {"factor_a": "a", "factor_b": "most"},
                             {"factor_a": "a", "factor_b": "few"})
        assert abs(null.estimate) < 4 * null.se
