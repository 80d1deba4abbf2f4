"""Tests for the bias/variance estimators, FIC, wFIC and model ranking."""

import math

import numpy as np
import pytest

import brute_force
from src.aalen import IndexSet, SingularityError, fit_full, invertibility_horizon
from src.data_model import Dataset
from src.risk import (
    AllCandidatesInfeasibleError,
    EmpiricalCovariates,
    FicResult,
    InfeasibleWeightError,
    IntervalFocus,
    PointFocus,
    PointWeights,
    RiskContext,
    WeightPoint,
    bias_function,
    drift_target,
    enumerate_candidates,
    fic_interval,
    fic_score,
    gliding_window,
    jhat_increments,
    parse_weight_spec,
    qhat_increments,
    rank_models,
    rank_results,
    sqb_hat,
    var_hat,
    wfic_score,
)

FIRST = IndexSet((1,), 2)
FULL2 = IndexSet.full(2)


class TestBiasFunction:

    def test_zero_bias(self, two_records):
        assert bias_function(two_records, FIRST, [1, 2], 0.5).values.tolist() == pytest.approx([0.0])

    def test_nonzero_bias(self, two_records):
        assert bias_function(two_records, FIRST, [1, 0], 0.5).values.tolist() == pytest.approx([2.0])

    def test_full_is_empty(self, two_records):
        assert bias_function(two_records, FULL2, [1, 0], 0.5).values.shape == (0,)

    def test_singular_block(self, orthogonal):
        with pytest.raises(SingularityError) as exc:
            bias_function(orthogonal, FIRST, [1, 1], 2)
        assert exc.value.time == 2


class TestIncrements:

    def test_jhat_nelson_aalen(self, nelson_aalen):
        j = jhat_increments(nelson_aalen, fit_full(nelson_aalen))
        np.testing.assert_allclose(j.increments[:, 0, 0], [1 / 3, 1 / 3, 1 / 3])

    def test_jhat_zero_covariates(self):
        d = Dataset.from_arrays([1, 2], [1, 1], [[0.0], [0.0]])
        ahat = fit_full(Dataset.from_arrays([1, 2], [1, 1], [[1.0], [1.0]]))
        assert not jhat_increments(d, ahat).increments.any()

    def test_jhat_orthogonal(self, orthogonal):
        j = jhat_increments(orthogonal, fit_full(orthogonal, 1.5))
        np.testing.assert_allclose(j.increments[0], [[0.5, 0], [0, 0]])

    def test_qhat_orthogonal(self, orthogonal):
        q = qhat_increments(orthogonal, fit_full(orthogonal, 1.5), FIRST)
        np.testing.assert_allclose(q.increments, [[[0.0]]])

    def test_qhat_full_is_empty(self, four_records):
        q = qhat_increments(four_records, fit_full(four_records, 3), FULL2)
        assert q.increments.shape == (3, 0, 0)

    def test_increments_symmetric(self, four_records):
        j = jhat_increments(four_records, fit_full(four_records, 3))
        np.testing.assert_allclose(j.increments, np.swapaxes(j.increments, 1, 2))

    def test_needs_full_estimate(self, four_records):
        from src.aalen import fit_submodel
        with pytest.raises(ValueError):
            jhat_increments(four_records, fit_submodel(four_records, FIRST, 3))

    def test_match_brute_force(self, four_records):
        ahat = fit_full(four_records, 3)
        j = jhat_increments(four_records, ahat)
        for k, u in enumerate(ahat.grid):
            ref = brute_force.jhat(four_records.times, four_records.covariates, u, ahat.increments[k])
            np.testing.assert_allclose(j.increments[k], ref, rtol=1e-12, atol=1e-14)


class TestVariance:

    def test_first_grid_time(self, nelson_aalen):
        assert var_hat(nelson_aalen, IndexSet.full(1), [1], 1) == pytest.approx(1 / 3)

    def test_through_last_event(self, nelson_aalen):
        assert var_hat(nelson_aalen, IndexSet.full(1), [1], 3) == pytest.approx(49 / 12)

    def test_zero_focal(self, nelson_aalen):
        assert var_hat(nelson_aalen, IndexSet.full(1), [0], 3) == 0

    def test_window(self, nelson_aalen):
        res = fic_interval(nelson_aalen, IndexSet.full(1), [1], 1.5, 3)
        assert res.var_hat == pytest.approx(15 / 4)

    def test_window_additivity(self, four_records):
        x = [1, 2]
        whole = fic_interval(four_records, FIRST, x, 0, 3).var_hat
        left = fic_interval(four_records, FIRST, x, 0, 1.5).var_hat
        right = fic_interval(four_records, FIRST, x, 1.5, 3).var_hat
        assert left + right == pytest.approx(whole, rel=1e-14)


class TestFicScore:

    def test_full_model_score_is_variance(self, four_records):
        res = fic_score(four_records, FULL2, [1, 2], 3)
        assert res.sqb_hat == 0
        assert res.score == res.var_hat
        assert res.score == var_hat(four_records, FULL2, [1, 2], 3)

    def test_zero_bias_along_grid(self, two_records):
        # b = 0 at every grid time for this focal point
        assert sqb_hat(two_records, FIRST, [1, 2], 1) == pytest.approx(0.0, abs=1e-14)

    def test_four_records_against_brute_force(self, four_records):
        d = four_records
        ref = brute_force.risk(d.times, d.events, d.covariates, [0], [1, 2], 0, 3)
        res = fic_score(d, FIRST, [1, 2], 3)
        assert res.sqb_hat == pytest.approx(ref["sqb"], rel=1e-10, abs=1e-12)
        assert res.var_hat == pytest.approx(ref["var"], rel=1e-10)
        assert res.score == pytest.approx(ref["score"], rel=1e-10)

    def test_truncation(self):
        res = FicResult(FIRST, sqb_hat=-0.4, var_hat=1.1, score=max(-0.4, 0) + 1.1)
        assert res.score == 1.1
        assert res.as_tuple() == (-0.4, 1.1, 1.1)

    def test_interval_from_zero_matches_score(self, four_records):
        a = fic_interval(four_records, FIRST, [1, 2], 0, 3)
        b = fic_score(four_records, FIRST, [1, 2], 3)
        assert a.as_tuple() == b.as_tuple()

    def test_empty_interval(self, four_records):
        assert fic_interval(four_records, FIRST, [1, 2], 2, 2).as_tuple() == (0.0, 0.0, 0.0)

    def test_singular_before_horizon(self, orthogonal):
        with pytest.raises(SingularityError):
            fic_score(orthogonal, FIRST, [1, 1], 2)

    def test_drift_identity(self, four_records):
        x = np.array([1.0, 2.0])
        res = fic_score(four_records, FIRST, x, 3)
        B = drift_target(four_records, FIRST, 3)
        A_II = fit_full(four_records, 3).cumulative(3)[1]
        assert res.bias_estimate == pytest.approx(x[0] * B[0] - x[1] * A_II, rel=1e-12)


def _random_cases(seed: int, count: int):
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < count:
        d = brute_force.random_dataset(rng, int(rng.integers(4, 7)), int(rng.integers(1, 4)))
        horizon = invertibility_horizon(d)
        if horizon > 0:
            cases.append((d, horizon, rng.uniform(0.5, 2.0, d.r)))
    return cases


def assert_cancels_to(actual, expected, scale, rel=1e-9, abs_=1e-10):
    """sqb-hat is a difference of two terms; compare on the size of those terms."""
    assert abs(actual - expected) <= rel * scale + abs_


def test_matches_brute_force_on_random_datasets():
    for d, t, x in _random_cases(7, 20):
        context = RiskContext(d)
        for I in enumerate_candidates(d.r):
            ref = brute_force.risk(d.times, d.events, d.covariates, list(I.positions), x, 0, t)
            res = context.evaluate(I, x, 0, t)
            assert res.var_hat == pytest.approx(ref["var"], rel=1e-9, abs=1e-12)
            assert res.bias_estimate == pytest.approx(ref["bias"], rel=1e-9, abs=1e-12)
            assert res.bias_variance == pytest.approx(ref["bias_var"], rel=1e-9, abs=1e-12)
            scale = max(d.n * ref["bias"] ** 2, ref["bias_var"])
            assert_cancels_to(res.sqb_hat, ref["sqb"], scale)
            assert_cancels_to(res.score, ref["score"], scale + ref["var"])


def test_scale_invariance():
    rng = np.random.default_rng(11)
    for d, t, x in _random_cases(13, 10):
        c = np.concatenate([[1.0], rng.uniform(0.3, 3.0, d.r - 1)])
        scaled = Dataset.from_arrays(d.times, d.events, d.covariates * c)
        a = RiskContext(d)
        b = RiskContext(scaled)
        for I in enumerate_candidates(d.r):
            ra = a.evaluate(I, x, 0, t)
            rb = b.evaluate(I, x * c, 0, t)
            assert rb.var_hat == pytest.approx(ra.var_hat, rel=1e-9, abs=1e-12)
            assert rb.bias_estimate == pytest.approx(ra.bias_estimate, rel=1e-9, abs=1e-12)
            assert rb.bias_variance == pytest.approx(ra.bias_variance, rel=1e-9, abs=1e-12)
            assert_cancels_to(rb.sqb_hat, ra.sqb_hat, abs(ra.sqb_hat) + ra.bias_variance)
            ea = a.empirical_wfic(I, t)
            eb = b.empirical_wfic(I, t)
            assert eb.var_hat == pytest.approx(ea.var_hat, rel=1e-9, abs=1e-12)
            assert_cancels_to(eb.sqb_hat, ea.sqb_hat, abs(ea.sqb_hat) + abs(ea.bias_variance))
            assert_cancels_to(eb.score, ea.score, abs(ea.sqb_hat) + abs(ea.bias_variance) + ea.var_hat)


class TestGlidingWindow:

    def test_wide_window_matches_score(self, nelson_aalen):
        full = IndexSet.full(1)
        [report] = gliding_window(nelson_aalen, [full], [1], [1.0], 2.0)
        assert report.ranked[0].score == pytest.approx(fic_score(nelson_aalen, full, [1], 3).score)
        assert report.focal == {"x": [1.0], "t1": 0.0, "t2": 3.0}

    def test_no_centers(self, nelson_aalen):
        assert gliding_window(nelson_aalen, [IndexSet.full(1)], [1], [], 1.0) == []

    def test_two_centers(self, nelson_aalen):
        full = IndexSet.full(1)
        reports = gliding_window(nelson_aalen, [full], [1], [1.0, 2.5], 0.5)
        assert reports[0].ranked[0].var_hat == pytest.approx(fic_interval(nelson_aalen, full, [1], 0.5, 1.5).var_hat)
        assert reports[1].ranked[0].var_hat == pytest.approx(fic_interval(nelson_aalen, full, [1], 2.0, 3.0).var_hat)
        assert reports[1].ranked[0].var_hat == pytest.approx(3.0)

    def test_infeasible_flagged_per_window(self, orthogonal):
        reports = gliding_window(orthogonal, [FIRST, FULL2], [1, 1], [0.5, 2.0], 0.5)
        assert reports[0].winner is not None
        assert reports[1].winner is None
        assert len(reports[1].infeasible) == 2

    def test_bad_delta(self, nelson_aalen):
        with pytest.raises(ValueError):
            gliding_window(nelson_aalen, [IndexSet.full(1)], [1], [1.0], 0)


class TestWeightedFic:

    def test_single_point_matches_fic(self, four_records):
        w = PointWeights((WeightPoint((1.0, 2.0), 3.0, 1.0),))
        assert wfic_score(four_records, FIRST, w).as_tuple() == pytest.approx(
            fic_score(four_records, FIRST, [1, 2], 3).as_tuple()
        )

    def test_truncation_after_weighting(self, four_records, monkeypatch):
        def fake_evaluate(self, I, x, t1, t2):
            sqb = -1.0 if x[1] == 1.0 else 0.5
            return FicResult(I, sqb, 1.0, max(sqb, 0.0) + 1.0, bias_variance=0.0)

        monkeypatch.setattr(RiskContext, "evaluate", fake_evaluate)
        w = PointWeights((WeightPoint((1.0, 1.0), 3.0, 0.5), WeightPoint((1.0, 2.0), 3.0, 0.5)))
        res = wfic_score(four_records, FIRST, w)
        assert res.sqb_hat == -0.25
        assert res.var_hat == 1.0
        assert res.score == 1.0
        truncated_average = 0.5 * (0.0 + 1.0) + 0.5 * (0.5 + 1.0)
        assert truncated_average == 1.25
        assert res.score < truncated_average

    def test_empirical_trace_identity(self, four_records):
        d = four_records
        res = wfic_score(d, FIRST, EmpiricalCovariates(3.0))
        pointwise = [fic_score(d, FIRST, x, 3) for x in d.covariates]
        assert res.var_hat == pytest.approx(np.mean([p.var_hat for p in pointwise]), rel=1e-10)
        assert res.sqb_hat == pytest.approx(np.mean([p.sqb_hat for p in pointwise]), rel=1e-10, abs=1e-12)

    def test_empirical_matches_uniform_points(self, four_records):
        d = four_records
        a = wfic_score(d, FIRST, EmpiricalCovariates(3.0))
        b = wfic_score(d, FIRST, PointWeights.uniform(d.covariates, 3.0))
        assert a.score == pytest.approx(b.score, rel=1e-10)

    def test_infeasible_point(self, orthogonal):
        w = PointWeights((WeightPoint((1.0, 1.0), 0.5, 0.5), WeightPoint((1.0, 0.0), 2.0, 0.5)))
        with pytest.raises(InfeasibleWeightError) as exc:
            wfic_score(orthogonal, FIRST, w)
        assert exc.value.j == 2
        assert exc.value.t == 2.0

    @pytest.mark.parametrize("weights", [(0.5, 0.6), (-0.5, 1.5)])
    def test_weights_validated(self, weights):
        with pytest.raises(ValueError):
            PointWeights(tuple(WeightPoint((1.0,), 1.0, w) for w in weights))

    def test_parse_weight_spec(self):
        spec = parse_weight_spec({"points": [{"x": [1, 2], "t": 3, "w": 1}]})
        assert spec.points[0] == WeightPoint((1.0, 2.0), 3.0, 1.0)
        assert parse_weight_spec({"empirical": {"t": 2}}) == EmpiricalCovariates(2.0)
        with pytest.raises(ValueError):
            parse_weight_spec({})

    def test_empirical_weights_ignore_record_order(self):
        d = Dataset.from_arrays(
            [1, 1, 1, 2, 2, 3, 3, 4],
            [1, 1, 0, 1, 1, 1, 0, 0],
            [[1, 0.3], [1, 1.2], [1, 2.0], [1, 0.7], [1, 1.5], [1, 0.4], [1, 1.9], [1, 1.1]],
        )
        reversed_ = Dataset(d.records[::-1])
        for I in (FIRST, FULL2):
            assert wfic_score(d, I, EmpiricalCovariates(3.0)) == wfic_score(reversed_, I, EmpiricalCovariates(3.0))

    @pytest.mark.parametrize("raw", [
        {"points": [{"x": [1, 2], "t": 3}]},
        {"points": [{"x": [1, 2], "w": 1}]},
        {"points": [{"x": 1, "t": 3, "w": 1}]},
        {"points": None},
        {"empirical": {}},
    ])
    def test_malformed_weight_spec(self, raw):
        with pytest.raises(ValueError, match="weight specification"):
            parse_weight_spec(raw)


class TestRanking:

    def test_single_full_candidate(self, four_records):
        report = rank_models(four_records, [FULL2], PointFocus((1.0, 2.0), 3.0))
        assert report.winner == FULL2

    def test_tie_prefers_smaller_model(self):
        report = rank_results(
            [FicResult(FULL2, 0.0, 1.1, 1.1), FicResult(FIRST, 0.1, 1.0, 1.1)],
            {"x": [1, 2], "t": 3},
        )
        assert report.winner == FIRST

    def test_tie_lexicographic(self):
        second = IndexSet((2,), 2)
        report = rank_results([FicResult(second, 0, 1, 1), FicResult(FIRST, 0, 1, 1)], {})
        assert [r.index_set for r in report.ranked] == [FIRST, second]

    def test_ascending_and_json(self, four_records):
        report = rank_models(four_records, enumerate_candidates(2), IntervalFocus((1.0, 2.0), 0.0, 3.0))
        scores = [r.score for r in report.ranked]
        assert scores == sorted(scores)
        raw = report.to_dict()
        assert set(raw) == {"focal", "candidates", "winner"}
        assert raw["winner"] == list(report.winner.indices)
        assert {"I", "sqb_hat", "var_hat", "score", "feasible"} <= set(raw["candidates"][0])

    def test_all_infeasible(self, orthogonal):
        with pytest.raises(AllCandidatesInfeasibleError) as exc:
            rank_models(orthogonal, [FIRST, FULL2], PointFocus((1.0, 1.0), 2.0))
        assert len(exc.value.report.infeasible) == 2

    def test_no_candidates(self, four_records):
        with pytest.raises(ValueError):
            rank_models(four_records, [], PointFocus((1.0, 2.0), 3.0))

    def test_duplication_makes_full_model_win(self, four_records):
        x = (1.0, 2.0)
        base = RiskContext(four_records)
        sub = base.evaluate(FIRST, x, 0, 3)
        full = base.evaluate(FULL2, x, 0, 3)
        assert abs(sub.bias_estimate) > 1e-8
        n = four_records.n
        m = max(2, math.ceil((full.var_hat - sub.var_hat + sub.bias_variance) / (n * sub.bias_estimate ** 2)) + 1)

        copies = Dataset(four_records.records * m)
        dup = RiskContext(copies).evaluate(FIRST, x, 0, 3)
        assert dup.var_hat == pytest.approx(sub.var_hat, rel=1e-10)
        assert dup.sqb_hat == pytest.approx(m * n * sub.bias_estimate ** 2 - sub.bias_variance, rel=1e-9)
        report = rank_models(copies, [FIRST, FULL2], PointFocus(x, 3.0))
        assert report.winner == FULL2


class TestEnumerateCandidates:

    def test_all_subsets(self):
        candidates = enumerate_candidates(3)
        assert len(candidates) == 7
        assert candidates[0] == IndexSet((1,), 3)
        assert candidates[-1] == IndexSet.full(3)

    def test_protected(self):
        candidates = enumerate_candidates(3, protected=[1])
        assert len(candidates) == 4
        assert all(1 in c.indices for c in candidates)

    def test_too_many_covariates(self):
        with pytest.raises(ValueError, match="explicit candidate list"):
            enumerate_candidates(13)

    def test_bad_protected(self):
        with pytest.raises(ValueError):
            enumerate_candidates(2, protected=[3])
