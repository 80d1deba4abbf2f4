"""Tests for G_n, the Aalen estimators and the survival predictions."""

import numpy as np
import pytest

from brute_force import aalen as brute_aalen, gram as brute_gram, random_dataset
from src.aalen import (
    IndexSet,
    SingularityError,
    conditional_survival,
    cumulative_hazard,
    fit_full,
    fit_submodel,
    gn_at,
    gn_blocks,
    invertibility_horizon,
    survival_estimate,
)
from src.data_model import Dataset


def tied_dataset():
    return Dataset.from_arrays(
        [1, 1, 1, 2, 2, 3, 3, 4],
        [1, 1, 0, 1, 1, 1, 0, 0],
        [[1, 0.3], [1, 1.2], [1, 2.0], [1, 0.7], [1, 1.5], [1, 0.4], [1, 1.9], [1, 1.1]],
    )


class TestIndexSet:

    def test_parse(self):
        assert IndexSet.parse("3,1", 3).indices == (1, 3)
        assert IndexSet.parse("full", 2).indices == (1, 2)

    def test_complement(self):
        I = IndexSet.of([2], 3)
        assert I.complement == (1, 3)
        assert I.positions.tolist() == [1]
        assert I.complement_positions.tolist() == [0, 2]
        assert I.label == "{2}"

    @pytest.mark.parametrize("indices", [(), (0,), (4,), (2, 2)])
    def test_invalid(self, indices):
        with pytest.raises(ValueError):
            IndexSet.of(indices, 3)

    def test_must_be_increasing(self):
        with pytest.raises(ValueError):
            IndexSet((2, 1), 3)


class TestGn:

    def test_both_at_risk(self):
        d = Dataset.from_arrays([1, 2], [1, 1], [[1], [1]])
        np.testing.assert_allclose(gn_at(d, 0.5), [[1.0]])
        np.testing.assert_allclose(gn_at(d, 1.5), [[0.5]])

    def test_two_covariates(self, two_records):
        np.testing.assert_allclose(gn_at(two_records, 0.5), [[1, 2], [2, 5]])

    def test_blocks(self, two_records):
        blocks = gn_blocks(two_records, IndexSet.of([1], 2), 0.5)
        np.testing.assert_allclose(blocks.g00, [[1]])
        np.testing.assert_allclose(blocks.g10, [[2]])
        np.testing.assert_allclose(blocks.g01, blocks.g10.T)
        np.testing.assert_allclose(blocks.g11, [[5]])


class TestFitFull:

    def test_nelson_aalen_reduction(self, nelson_aalen):
        est = fit_full(nelson_aalen, 3)
        np.testing.assert_allclose(est.increments[:, 0], [1 / 3, 1 / 2, 1], rtol=0, atol=1e-15)
        assert abs(est.cumulative(3)[0] - 11 / 6) <= 1e-15

    def test_all_censored(self):
        d = Dataset.from_arrays([1, 2], [0, 0], [[1], [1]])
        est = fit_full(d)
        assert len(est.grid) == 0
        assert est.cumulative(5).tolist() == [0.0]

    def test_orthogonal(self, orthogonal):
        est = fit_full(orthogonal, 1.5)
        np.testing.assert_allclose(est.increments, [[1.0, 0.0]])

    def test_singular_reports_time(self, orthogonal):
        with pytest.raises(SingularityError) as exc:
            fit_full(orthogonal)
        assert exc.value.time == 2.0

    def test_tau_before_first_event(self, four_records):
        est = fit_full(four_records, 0.5)
        assert len(est.grid) == 0

    def test_to_dict(self, nelson_aalen):
        raw = fit_full(nelson_aalen).to_dict()
        assert raw["index_set"] == [1]
        assert raw["grid"] == [1.0, 2.0, 3.0]
        assert len(raw["increments"]) == 3

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            d = random_dataset(rng, int(rng.integers(4, 7)), int(rng.integers(1, 4)))
            horizon = invertibility_horizon(d)
            if horizon == 0:
                continue
            est = fit_full(d, horizon)
            ref = brute_aalen(d.times, d.events, d.covariates, list(range(d.r)), horizon)
            assert [u for u, _ in ref] == list(est.grid.times)
            np.testing.assert_allclose(est.increments, [inc for _, inc in ref], rtol=1e-10, atol=1e-12)
            for u in est.grid:
                np.testing.assert_allclose(gn_at(d, u), brute_gram(d.times, d.covariates, u), atol=1e-14)

    def test_permutation_invariance(self, rng):
        d = random_dataset(rng, 6, 2)
        perm = rng.permutation(d.n)
        shuffled = Dataset(tuple(d.records[i] for i in perm))
        horizon = invertibility_horizon(d)
        a = fit_full(d, horizon)
        b = fit_full(shuffled, horizon)
        assert np.array_equal(a.increments, b.increments)

    def test_permutation_invariance_with_tied_times(self):
        d = tied_dataset()
        reversed_ = Dataset(d.records[::-1])
        horizon = invertibility_horizon(d)
        assert horizon == 3.0
        a = fit_full(d, horizon)
        b = fit_full(reversed_, horizon)
        assert np.array_equal(a.increments, b.increments)

    def test_column_scaling(self, four_records):
        scaled = Dataset.from_arrays(
            four_records.times, four_records.events, four_records.covariates * [1.0, 4.0]
        )
        a = fit_full(four_records, 3)
        b = fit_full(scaled, 3)
        np.testing.assert_allclose(b.increments[:, 1], a.increments[:, 1] / 4, rtol=1e-10)
        assert cumulative_hazard(b, [1, 8], 3) == pytest.approx(cumulative_hazard(a, [1, 2], 3), rel=1e-10)


class TestFitSubmodel:

    def test_full_index_set_matches_fit_full(self, four_records):
        a = fit_full(four_records, 3)
        b = fit_submodel(four_records, IndexSet.full(2), 3)
        assert np.array_equal(a.increments, b.increments)

    def test_first_covariate(self, two_records):
        est = fit_submodel(two_records, IndexSet.of([1], 2))
        assert est.increments[0, 0] == pytest.approx(0.5)

    def test_matches_projected_dataset(self, four_records):
        I = IndexSet.of([2], 2)
        a = fit_submodel(four_records, I)
        b = fit_full(four_records.select_columns(I.positions))
        np.testing.assert_allclose(a.increments, b.increments, rtol=1e-14)

    def test_dimension_mismatch(self, four_records):
        with pytest.raises(ValueError):
            fit_submodel(four_records, IndexSet.of([1], 3))


class TestPredictions:

    def test_cumulative_hazard(self, nelson_aalen):
        est = fit_full(nelson_aalen)
        assert cumulative_hazard(est, [1], 2) == pytest.approx(5 / 6)
        assert cumulative_hazard(est, [0], 3) == 0
        assert cumulative_hazard(est, [1], 0) == 0

    def test_dimension_mismatch(self, nelson_aalen):
        with pytest.raises(ValueError):
            cumulative_hazard(fit_full(nelson_aalen), [1, 2], 1)

    def test_survival(self, nelson_aalen):
        est = fit_full(nelson_aalen)
        s = survival_estimate(est, [1], 2)
        assert s.value == pytest.approx(1 / 3)
        assert s.factors_in_range
        assert survival_estimate(est, [1], 0.5).value == 1.0
        assert survival_estimate(est, [0], 3).value == 1.0

    def test_survival_flags_factor_out_of_range(self, nelson_aalen):
        est = fit_full(nelson_aalen)
        s = survival_estimate(est, [1], 3)
        assert s.value == 0.0
        assert not s.factors_in_range

    def test_conditional_survival(self, nelson_aalen):
        est = fit_full(nelson_aalen)
        s = conditional_survival(est, [1], 1, 2)
        assert s.value == pytest.approx(0.5)
        ratio = survival_estimate(est, [1], 2).value / survival_estimate(est, [1], 1).value
        assert s.value == pytest.approx(ratio)
        with pytest.raises(ValueError):
            conditional_survival(est, [1], 2, 1)


class TestInvertibilityHorizon:

    def test_nelson_aalen(self, nelson_aalen):
        assert invertibility_horizon(nelson_aalen) == 3

    def test_orthogonal(self, orthogonal):
        assert invertibility_horizon(orthogonal) == 1

    def test_submodel_block(self, orthogonal):
        assert invertibility_horizon(orthogonal, IndexSet.of([2], 2)) == 2

    def test_empty_grid(self):
        d = Dataset.from_arrays([1, 2], [0, 0], [[1], [1]])
        assert invertibility_horizon(d) == 0
