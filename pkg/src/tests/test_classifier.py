import math

import numpy as np
import pytest
import torch

from src.association.features import AssembledInput, FeatureSchema
from src.association.gating import CandidateScore
from src.association.screening import NEW_VESSEL, ScreenResult
from src.errors import ConfigurationError, ConsistencyError, EmptyDatasetError, RelabelError
from src.geo.kinematics import Posit
from src.model.calibration import calibrate, fit_temperature, negative_log_likelihood
from src.model.classifier import (
    MlpModel,
    argmax_prefer_new,
    classify,
    masked_softmax,
    smoothed_cross_entropy,
    smoothed_targets,
)


def _result(n_candidates):
    endpoint = Posit(0.0, 0.0, 0.0, 1.0, 0.0)
    candidates = [
        CandidateScore(10 + i, endpoint, 60.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, float(i), True)
        for i in range(n_candidates)
    ]
    return ScreenResult(query_ref=0, candidates=candidates, new_vessel_score=1.0, query_density=0)


def _input(schema, n_candidates, rng):
    values = rng.normal(size=schema.input_width).astype(np.float32)
    mask = np.zeros(schema.k + 1, dtype=bool)
    mask[:n_candidates] = True
    mask[-1] = True
    values[schema.mask_columns()] = mask.astype(np.float32)
    return AssembledInput(values, mask)


class TestModel:

    def test_zero_weights_give_uniform_probabilities(self):
        schema = FeatureSchema.default(k=4)
        model = MlpModel.from_schema(schema, hidden=(16, 8))
        with torch.no_grad():
            for parameter in model.parameters():
                parameter.zero_()
        assignment = classify(model, _result(4), _input(schema, 4, np.random.default_rng(0)), schema)
        np.testing.assert_allclose(assignment.probabilities, np.full(5, 0.2), atol=1e-7)
        # ties go to New Vessel
        assert assignment.is_new_vessel

    def test_width_mismatch(self):
        model = MlpModel(input_width=10, k=2, hidden=(4,))
        with pytest.raises(ConfigurationError):
            model(torch.zeros(1, 11))

    def test_widths(self):
        schema = FeatureSchema.default(k=16)
        assert MlpModel.from_schema(schema).widths == (17 * 25, 64, 64, 32, 17)

    def test_seeded_init_is_reproducible(self):
        a = MlpModel(20, 3, (8,), seed=5)
        b = MlpModel(20, 3, (8,), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_fingerprint_mismatch(self):
        schema = FeatureSchema.default(k=2)
        model = MlpModel(schema.input_width, 2, (4,), schema_fingerprint='other')
        with pytest.raises(ConfigurationError):
            classify(model, _result(1), _input(schema, 1, np.random.default_rng(1)), schema)

    def test_zero_candidates_forces_new_vessel(self):
        schema = FeatureSchema.default(k=3)
        model = MlpModel.from_schema(schema, hidden=(4,), seed=0)
        assignment = classify(model, _result(0), _input(schema, 0, np.random.default_rng(2)), schema)
        assert assignment.decision == NEW_VESSEL
        assert assignment.probabilities[-1] == 1.0

    def test_masked_slots_never_win(self):
        schema = FeatureSchema.default(k=4)
        model = MlpModel.from_schema(schema, hidden=(4,), seed=0)
        with torch.no_grad():
            model.net[-1].bias.copy_(torch.tensor([0.0, 0.0, 50.0, 50.0, 0.0]))
        rng = np.random.default_rng(3)
        for _ in range(20):
            assignment = classify(model, _result(2), _input(schema, 2, rng), schema)
            assert assignment.decision in (0, 1, NEW_VESSEL)
            assert assignment.probabilities[2] == 0.0
            assert assignment.probabilities[3] == 0.0
            assert assignment.probabilities.sum() == pytest.approx(1.0)
            if not assignment.is_new_vessel:
                assert assignment.track_id == 10 + assignment.decision


def test_argmax_prefers_new_vessel_on_ties():
    mask = np.array([True, True, False, True])
    assert argmax_prefer_new(np.array([0.4, 0.2, 0.0, 0.4]), mask) == 3
    assert argmax_prefer_new(np.array([0.5, 0.5, 0.0, 0.0]), mask) == 0


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(50, 6)) * 5
    mask = rng.random((50, 6)) < 0.6
    mask[:, -1] = True
    probabilities = masked_softmax(logits, mask, 1.7)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
    assert not probabilities[~mask].any()


def test_smoothed_targets_sum_to_one():
    targets = torch.tensor([0, 2, 3])
    mask = torch.tensor([
        [True, True, False, True],
        [True, True, True, True],
        [False, False, False, True],
    ])
    smoothed = smoothed_targets(targets, mask, 0.1)
    torch.testing.assert_close(smoothed.sum(dim=1), torch.ones(3))
    assert smoothed[0, 2] == 0.0
    assert smoothed[2, 3] == pytest.approx(1.0)
    assert smoothed[0, 0] == pytest.approx(0.9 + 0.1 / 3)


def test_loss_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = MlpModel(input_width=8, k=2, hidden=(8,)).double()
    x = torch.randn(6, 8, dtype=torch.float64, requires_grad=True)
    y = torch.tensor([0, 1, 2, 2, 0, 2])
    m = torch.tensor([[True, True, True]] * 4 + [[True, False, True]] * 2)

    def loss_of_input(inputs):
        return smoothed_cross_entropy(model(inputs), y, m, 0.05)

    assert torch.autograd.gradcheck(loss_of_input, (x,), eps=1e-6, atol=1e-5)

    weight = model.net[0].weight
    loss = smoothed_cross_entropy(model(x.detach()), y, m, 0.05)
    analytic = torch.autograd.grad(loss, weight)[0]
    h = 1e-6
    with torch.no_grad():
        for i, j in [(0, 0), (3, 5), (7, 2)]:
            weight[i, j] += h
            up = smoothed_cross_entropy(model(x.detach()), y, m, 0.05).item()
            weight[i, j] -= 2 * h
            down = smoothed_cross_entropy(model(x.detach()), y, m, 0.05).item()
            weight[i, j] += h
            assert analytic[i, j].item() == pytest.approx((up - down) / (2 * h), abs=1e-6)


class TestTemperature:

    @staticmethod
    def _sample(scale, n=20000, classes=5, seed=0):
        rng = np.random.default_rng(seed)
        logits = rng.normal(0.0, 2.0, size=(n, classes))
        probabilities = masked_softmax(logits, np.ones_like(logits, dtype=bool))
        labels = np.array([rng.choice(classes, p=p) for p in probabilities])
        return logits * scale, labels, np.ones_like(logits, dtype=bool)

    def test_calibrated_logits_keep_unit_temperature(self):
        logits, labels, masks = self._sample(1.0)
        assert 0.9 <= fit_temperature(logits, labels, masks) <= 1.1

    def test_overconfident_logits(self):
        logits, labels, masks = self._sample(3.0)
        assert fit_temperature(logits, labels, masks) == pytest.approx(3.0, rel=0.1)

    def test_never_worse_than_unit_temperature(self):
        for scale in (0.3, 1.0, 4.0):
            logits, labels, masks = self._sample(scale, n=3000, seed=1)
            t = fit_temperature(logits, labels, masks)
            assert negative_log_likelihood(logits, labels, masks, t) <= (
                negative_log_likelihood(logits, labels, masks, 1.0) + 1e-12
            )

    def test_scaling_keeps_argmax(self):
        logits, _, masks = self._sample(2.0, n=500)
        for t in (0.2, 1.0, 7.5):
            scaled = masked_softmax(logits, masks, t)
            np.testing.assert_array_equal(scaled.argmax(axis=1), logits.argmax(axis=1))

    def test_empty_validation_set(self):
        with pytest.raises(EmptyDatasetError):
            fit_temperature(np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros((0, 3), dtype=bool))

    def test_calibrate_installs_temperature(self):
        schema = FeatureSchema.default(k=2)
        model = MlpModel.from_schema(schema, hidden=(8,), seed=0)
        rng = np.random.default_rng(5)
        inputs = np.vstack([_input(schema, 2, rng).values for _ in range(200)])
        labels = rng.integers(0, 3, size=200)
        t = calibrate(model, inputs, labels, schema)
        assert float(model.temperature) == pytest.approx(t)
        assert math.isfinite(t) and t > 0


def test_consistency_error_is_a_relabel_error():
    assert issubclass(ConsistencyError, RelabelError)
