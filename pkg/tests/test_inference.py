import math

import numpy as np
import pytest

from mvrbm import oracle, tiny
from mvrbm.exceptions import UsageError
from mvrbm.inference import (
    predict_unseen,
    project,
    project_batch,
    reconstruct,
)
from mvrbm.model import ModelParams
from mvrbm.schema import (
    Binary,
    Categorical,
    MixedRecord,
    ReplicatedSoftmax,
    VisibleSchema,
)
from mvrbm.training import TrainConfig, fit

from _helpers import spearman


def zero_params(schema, k):
    c = schema.total_columns
    return ModelParams(a=np.zeros(c), b=np.zeros(k), w=np.zeros((c, k)))


class TestProject:
    def test_zero_params_boundary_maps_to_one(self):
        schema = VisibleSchema((("x", Binary()),))
        p = zero_params(schema, 3)
        profile = project(MixedRecord((1,)), p, schema, rho1=0.5)
        assert np.allclose(profile.posteriors, 0.5)
        assert np.all(profile.code == 1)  # posterior == threshold activates

    def test_large_negative_bias(self):
        schema = VisibleSchema((("x", Binary()),))
        p = zero_params(schema, 1)
        p.b[0] = -10.0
        profile = project(MixedRecord((0,)), p, schema)
        assert profile.posteriors[0] == pytest.approx(1.0 / (1.0 + math.exp(10.0)), rel=1e-9)
        assert profile.code[0] == 0

    def test_token_order_invariance(self):
        rng = np.random.default_rng(50)
        schema = VisibleSchema((("r", ReplicatedSoftmax(v=5)),))
        p = tiny.random_params(schema, 4, rng)
        a = project(MixedRecord(((1, 3, 3, 0),)), p, schema)
        b = project(MixedRecord(((3, 0, 3, 1),)), p, schema)
        assert np.array_equal(a.posteriors, b.posteriors)

    def test_active_set(self):
        schema = VisibleSchema((("x", Binary()),))
        p = zero_params(schema, 3)
        p.b[:] = [-5.0, 5.0, 5.0]
        profile = project(MixedRecord((0,)), p, schema)
        assert profile.active_set() == frozenset({1, 2})


class TestReconstruct:
    def test_zero_params_binary(self):
        schema = VisibleSchema((("x", Binary()),))
        p = zero_params(schema, 2)
        result = reconstruct(MixedRecord((1,)), p, schema)
        assert result.values[0] == pytest.approx(0.5)
        assert result.error == pytest.approx(0.25)

    def test_error_non_negative(self):
        rng = np.random.default_rng(51)
        for _ in range(10):
            schema = tiny.random_mixed_schema(rng)
            p = tiny.random_params(schema, 3, rng)
            rec = tiny.random_record(schema, rng)
            result = reconstruct(rec, p, schema)
            assert result.error >= 0.0
            assert all(v >= 0.0 for v in result.per_unit_error.values())

    def test_overfit_single_record_drives_error_down(self):
        # exact-gradient training on one repeated record approaches a
        # delta; reconstruction error should get close to zero
        schema = VisibleSchema((("x", Binary()), ("y", Binary()), ("c", Categorical(m=3))))
        rec = MixedRecord((1, 0, 2))
        cfg = TrainConfig(
            n_hidden=3,
            epochs=300,
            oracle_exact_gradient=True,
            lr_w=0.2,
            lr_a=0.2,
            lr_b=0.2,
            seed=4,
        )
        params = fit([rec] * 4, schema, cfg).params
        result = reconstruct(rec, params, schema)
        assert result.error < 0.02


class TestPredictUnseen:
    def test_zero_weights_reduce_to_bias_softmax(self):
        schema = VisibleSchema((("x", Binary()), ("r", ReplicatedSoftmax(v=4))))
        p = zero_params(schema, 2)
        p.a[1:] = [0.4, -0.2, 0.0, 1.0]
        rec = MixedRecord((0, (1, 1)))
        ranking = predict_unseen(rec, p, schema, [0, 1, 2, 3])
        expected = np.exp(p.a[1:])
        expected /= expected.sum()
        probs = ranking.probabilities()
        for j in range(4):
            assert probs[j] == pytest.approx(expected[j], abs=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(52)
        schema = VisibleSchema((("c", Categorical(m=3)), ("r", ReplicatedSoftmax(v=6))))
        for _ in range(20):
            p = tiny.random_params(schema, 3, rng)
            rec = tiny.random_record(schema, rng)
            for mode in ("full", "candidates"):
                ranking = predict_unseen(rec, p, schema, [0, 2, 3, 5], normalize=mode)
                assert sum(pr for _, pr in ranking.entries) == pytest.approx(1.0, abs=1e-9)

    def test_descending_with_lexicographic_ties(self):
        schema = VisibleSchema((("r", ReplicatedSoftmax(v=4)),))
        p = zero_params(schema, 1)  # all candidates equally likely
        ranking = predict_unseen(MixedRecord(((0,),)), p, schema, [3, 1, 2, 0])
        assert ranking.tokens() == [0, 1, 2, 3]

    def test_empty_candidates_rejected(self):
        schema = VisibleSchema((("r", ReplicatedSoftmax(v=4)),))
        with pytest.raises(UsageError):
            predict_unseen(MixedRecord(((0,),)), zero_params(schema, 1), schema, [])

    def test_exact_agreement_when_weights_are_zero(self):
        rng = np.random.default_rng(53)
        schema = VisibleSchema((("x", Binary()), ("r", ReplicatedSoftmax(v=4))))
        p = zero_params(schema, 2)
        p.a[:] = rng.normal(0, 1, size=5)
        rec = MixedRecord((1, (2, 0, 3)))
        ranking = predict_unseen(rec, p, schema, [0, 1, 2, 3])
        exact = oracle.exact_unseen_conditional(rec, p, schema)
        for token, prob in ranking.entries:
            assert prob == pytest.approx(exact[token], abs=1e-12)

    def test_rank_correlation_against_oracle(self):
        # mean-field ranking versus exact next-token conditional; the
        # correlation is reported, and must be strong for weak coupling
        rng = np.random.default_rng(54)
        cors = []
        for _ in range(20):
            schema = VisibleSchema(
                (("x", Binary()), ("r", ReplicatedSoftmax(v=5)))
            )
            p = tiny.random_params(schema, 2, rng, scale=0.3)
            rec = tiny.random_record(schema, rng)
            cand = list(range(5))
            ranking = predict_unseen(rec, p, schema, cand)
            exact = oracle.exact_unseen_conditional(rec, p, schema)
            approx_p = [ranking.probabilities()[t] for t in cand]
            exact_p = [exact[t] for t in cand]
            cors.append(spearman(approx_p, exact_p))
        mean_cor = float(np.mean(cors))
        print(f"mean-field vs exact rank correlation: {mean_cor:.3f}")
        assert mean_cor > 0.8

    def test_non_token_unit_rejected(self):
        schema = VisibleSchema((("x", Binary()), ("r", ReplicatedSoftmax(v=4))))
        with pytest.raises(UsageError):
            predict_unseen(
                MixedRecord((0, (1,))), zero_params(schema, 1), schema, [0], unit="x"
            )


class TestRoundTrip:
    def test_projection_survives_serialization(self, tmp_path):
        from mvrbm.dataio import read_model, write_model

        rng = np.random.default_rng(55)
        schema = tiny.random_mixed_schema(rng)
        params = tiny.random_params(schema, 4, rng)
        records = [tiny.random_record(schema, rng) for _ in range(5)]
        before, _ = project_batch(records, params, schema)
        path = tmp_path / "model.json"
        write_model(params, schema, path)
        loaded, loaded_schema = read_model(path)
        after, _ = project_batch(records, loaded, loaded_schema)
        assert np.array_equal(before, after)
