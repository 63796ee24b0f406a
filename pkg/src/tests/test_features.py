import math

import numpy as np
import pytest

from src.association.features import (
    CANDIDATE_FEATURES,
    NEW_VESSEL_FEATURES,
    FeatureBuilder,
    FeatureSchema,
    FeatureVector,
    GlobalContext,
    assemble_input,
    build_features,
    candidate_raw_features,
    empty_slot,
    fit_schema,
    new_vessel_raw_features,
)
from src.association.gating import GateConfig, ScoreConfig, score_link
from src.association.screening import CandidateScreener, EndpointStore, ScreeningConfig
from src.errors import ConfigurationError
from src.geo.kinematics import Posit, project


@pytest.fixture
def scene():
    """Three vessels near a query; returns (query, result, store)."""
    store = EndpointStore()
    for i in range(3):
        first = Posit(0.0, 200.0 * i, 300.0 * i, 4.0 + i, 0.1 * i, source_id=2 * i)
        track_id = store.commit(first)
        store.commit(project(first, 600.0), track_id)
    query = Posit(2400.0, 9600.0, 500.0, 4.5, 0.1, source_id=10)
    screener = CandidateScreener(GateConfig(), ScoreConfig(), ScreeningConfig(k=4))
    return query, screener.screen(query, store), store


def test_schema_layout():
    schema = FeatureSchema.default(k=16)
    assert len(CANDIDATE_FEATURES) == 24
    assert schema.slot_width == 25
    assert schema.input_width == 17 * 25
    assert list(schema.mask_columns()) == [25 * s + 24 for s in range(17)]


def test_raw_features_follow_candidate(scene):
    query, result, store = scene
    assert result.candidates
    context = GlobalContext(result.query_density, query.t)
    for cand in result.candidates:
        raw = candidate_raw_features(query, cand, store.history(cand.track_id), context, result.new_vessel_score)
        assert raw.shape == (len(CANDIDATE_FEATURES),)
        assert raw[2] == query.t - cand.endpoint.t
        rescored = score_link(query, cand.endpoint, GateConfig(), ScoreConfig())
        assert raw[0] == pytest.approx(rescored.e_par, rel=1e-6, abs=1e-6)
        assert raw[1] == pytest.approx(rescored.e_perp, rel=1e-6, abs=1e-6)


def test_new_vessel_row(scene):
    query, result, _ = scene
    row = new_vessel_raw_features(query, result, GlobalContext(result.query_density, query.t))
    assert row.shape == (len(NEW_VESSEL_FEATURES),)
    assert row[0] == result.new_vessel_score
    assert row[4] == len(result.candidates)


def test_empty_slot():
    schema = FeatureSchema.default(k=4)
    slot = empty_slot(schema)
    assert slot.mask == 0
    assert not slot.values.any()


def test_zero_candidates_populates_only_new_vessel():
    schema = FeatureSchema.default(k=4)
    screener = CandidateScreener(GateConfig(), ScoreConfig(), ScreeningConfig(k=4))
    query = Posit(0.0, 0.0, 0.0, 3.0, 0.0)
    store = EndpointStore()
    assembled = FeatureBuilder(schema).assemble(query, screener.screen(query, store), store)
    assert list(assembled.mask) == [False] * 4 + [True]
    assert not assembled.values[:4 * schema.slot_width].any()
    assert assembled.values[-1] == 1.0


def test_slots_follow_screen_order(scene):
    query, result, store = scene
    schema = FeatureSchema.default(k=4)
    builder = FeatureBuilder(schema)
    assembled = builder.assemble(query, result, store)
    cand_raw, _ = builder.raw_rows(query, result, store)
    width = schema.slot_width
    for slot, row in enumerate(cand_raw):
        np.testing.assert_allclose(
            assembled.values[slot * width:slot * width + width - 1],
            schema.normalize_candidate(row).astype(np.float32),
        )
    assert assembled.mask.sum() == len(result.candidates) + 1


def test_builder_is_pure(scene):
    query, result, store = scene
    builder = FeatureBuilder(FeatureSchema.default(k=4))
    a = builder.assemble(query, result, store)
    b = builder.assemble(query, result, store)
    np.testing.assert_array_equal(a.values, b.values)


def test_store_layout_does_not_change_input():
    screener = CandidateScreener(GateConfig(), ScoreConfig(), ScreeningConfig(k=4))
    builder = FeatureBuilder(FeatureSchema.default(k=4))
    starts = [Posit(0.0, 150.0 * i, -100.0 * i, 4.0 + 0.3 * i, 0.05 * i, source_id=i) for i in range(4)]
    query = Posit(1800.0, 7400.0, 0.0, 4.5, 0.05)
    inputs = []
    for order in (range(4), reversed(range(4))):
        # no commit-time densities, so scores do not depend on commit order
        store = EndpointStore(density_radius=1.0)
        for i in order:
            store.commit(starts[i])
        inputs.append(builder.assemble(query, screener.screen(query, store), store))
    np.testing.assert_array_equal(inputs[0].values, inputs[1].values)


def test_build_features_and_assemble(scene):
    query, result, store = scene
    schema = FeatureSchema.default(k=4)
    context = GlobalContext(result.query_density, query.t)
    features = [
        build_features(query, c, store.history(c.track_id), context, schema, result.new_vessel_score)
        for c in result.candidates
    ]
    new_vessel = FeatureVector(schema.normalize_new_vessel(new_vessel_raw_features(query, result, context)))
    assembled = assemble_input(result, features, new_vessel, schema)
    np.testing.assert_array_equal(assembled.values, FeatureBuilder(schema).assemble(query, result, store).values)

    with pytest.raises(ConfigurationError):
        assemble_input(result, features[:-1], new_vessel, schema)


def test_fit_schema_standardizes():
    rng = np.random.default_rng(0)
    cand_raw = rng.normal(5.0, 3.0, size=(500, len(CANDIDATE_FEATURES)))
    new_raw = rng.normal(-2.0, 0.5, size=(500, len(NEW_VESSEL_FEATURES)))
    schema = fit_schema(4, cand_raw, new_raw)
    normalized = schema.normalize_new_vessel(new_raw)
    np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(normalized.std(axis=0), 1.0, atol=1e-6)


def test_schema_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    schema = fit_schema(
        4,
        rng.normal(size=(50, len(CANDIDATE_FEATURES))),
        rng.normal(size=(50, len(NEW_VESSEL_FEATURES))),
    )
    schema.save(tmp_path / 'schema.json')
    loaded = FeatureSchema.load(tmp_path / 'schema.json')
    assert loaded.fingerprint == schema.fingerprint
    assert loaded.fingerprint != FeatureSchema.default(4).fingerprint


def test_schema_version_mismatch(tmp_path):
    data = FeatureSchema.default(2).to_dict()
    data['version'] = 999
    with pytest.raises(ConfigurationError):
        FeatureSchema.from_dict(data)


def test_time_of_day_is_periodic(scene):
    query, result, store = scene
    cand = result.candidates[0]
    a = candidate_raw_features(query, cand, [], GlobalContext(0, 3600.0), 0.0)
    b = candidate_raw_features(query, cand, [], GlobalContext(0, 3600.0 + 86400.0), 0.0)
    assert a[-2] == pytest.approx(b[-2])
    assert a[-1] == pytest.approx(b[-1])
    assert math.hypot(a[-2], a[-1]) == pytest.approx(1.0)
