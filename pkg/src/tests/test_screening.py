import math

import numpy as np
import pytest

from src.association.gating import GateConfig, ScoreConfig, score_link
from src.association.screening import (
    NEW_VESSEL,
    CandidateScreener,
    EndpointStore,
    ScreeningConfig,
)
from src.errors import ConfigurationError, ConsistencyError
from src.geo.kinematics import CV, Posit, ProjectionModel, project


def _random_store(rng, n, query_t, use_turn_rate=True):
    store = EndpointStore(use_turn_rate=use_turn_rate, cell_size=5000.0)
    for _ in range(n):
        t = float(rng.uniform(query_t - 7200.0, query_t - 120.0))
        p = Posit(
            t,
            float(rng.normal(0.0, 10_000.0)),
            float(rng.normal(0.0, 10_000.0)),
            float(rng.uniform(0.0, 10.0)),
            float(rng.uniform(-math.pi, math.pi)),
        )
        if rng.random() < 0.5:
            earlier = Posit(t - 600.0, p.x, p.y, p.v, p.psi - float(rng.uniform(-0.5, 0.5)))
            track_id = store.commit(earlier)
            store.commit(p, track_id)
        else:
            store.commit(p)
    return store


def _brute_force(query, store, gate, scoring, k):
    ranked = []
    for track_id in store.track_ids():
        slot = store._slot_of[track_id]
        omega = store.omega[slot]
        model = CV if np.isnan(omega) else ProjectionModel.ctrv(float(omega))
        cand = score_link(
            query, store.endpoint(track_id), gate, scoring, model,
            float(store.density_at_commit[slot]), track_id,
        )
        if cand.passed_gates:
            ranked.append((cand.score, track_id))
    return sorted(ranked)[:k]


class TestEndpointStore:

    def test_new_vessel_on_empty_store(self, store):
        track_id = store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0, source_id=0))
        assert len(store) == 1
        assert track_id == 0
        assert store.tracks_created == 1

    def test_continuation_replaces_endpoint(self, store):
        first = Posit(0.0, 0.0, 0.0, 1.0, 0.0, source_id=0)
        track_id = store.commit(first)
        second = project(first, 600.0)
        assert store.commit(second, track_id) == track_id
        assert len(store) == 1
        assert store.endpoint(track_id) == second
        assert store.history(track_id) == [first, second]

    def test_absent_track_rejected(self, store):
        with pytest.raises(ConsistencyError):
            store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0), track_id=5)

    def test_size_counts_new_vessel_decisions(self):
        rng = np.random.default_rng(0)
        store = EndpointStore(capacity=4)
        news = 0
        for t in range(300):
            p = Posit(float(t), float(rng.normal(0, 1e5)), float(rng.normal(0, 1e5)), 1.0, 0.0)
            ids = store.track_ids()
            if not ids or rng.random() < 0.3:
                store.commit(p)
                news += 1
            else:
                store.commit(p, ids[int(rng.integers(len(ids)))])
            assert len(store) == news
        assert store.tracks_created == news

    def test_history_is_bounded(self):
        store = EndpointStore(history=3)
        p = Posit(0.0, 0.0, 0.0, 1.0, 0.0)
        track_id = store.commit(p)
        for i in range(1, 6):
            store.commit(project(p, 60.0 * i), track_id)
        assert [q.t for q in store.history(track_id)] == [180.0, 240.0, 300.0]

    def test_turn_rate_from_last_two_courses(self):
        store = EndpointStore(max_turn_rate=0.01)
        track_id = store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0))
        store.commit(Posit(100.0, 100.0, 0.0, 1.0, 0.2), track_id)
        assert store.omega[store._slot_of[track_id]] == pytest.approx(0.002)

    def test_implausible_turn_rate_ignored(self):
        store = EndpointStore(max_turn_rate=0.001)
        track_id = store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0))
        store.commit(Posit(10.0, 10.0, 0.0, 1.0, 1.0), track_id)
        assert np.isnan(store.omega[store._slot_of[track_id]])

    def test_retire(self):
        store = EndpointStore()
        old = store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0))
        recent = store.commit(Posit(5000.0, 10.0, 0.0, 1.0, 0.0))
        assert store.retire(now=7000.0, max_age=3600.0) == 1
        assert old not in store and recent in store
        assert list(store.slots_near(0.0, 0.0, 100.0)) == [store._slot_of[recent]]

    def test_candidate_slots_bound_each_bucket_by_its_age(self, screener, store):
        old = store.commit(Posit(0.0, 300_000.0, 0.0, 5.0, 0.0))
        fresh = store.commit(Posit(17_000.0, 200_000.0, 0.0, 5.0, 0.0))
        near = store.candidate_slots(18_000.0, 0.0, 0.0, screener._prune_radius)
        assert list(near) == [store._slot_of[old]]
        assert store._slot_of[fresh] in store.slots_near(0.0, 0.0, 200_000.0)

    def test_moving_endpoint_leaves_its_bucket(self, store):
        track_id = store.commit(Posit(0.0, 0.0, 0.0, 5.0, 0.0))
        store.commit(Posit(9000.0, 100.0, 0.0, 5.0, 0.0), track_id)
        assert list(store._grids) == [int(9000.0 // store.bucket_seconds)]
        store.retire(now=20_000.0, max_age=3600.0)
        assert store._grids == {} and store._bucket_speed == {}

    def test_density_excludes_own_slot(self):
        store = EndpointStore(density_radius=1000.0)
        store.commit(Posit(0.0, 0.0, 0.0, 1.0, 0.0))
        store.commit(Posit(1.0, 500.0, 0.0, 1.0, 0.0))
        store.commit(Posit(2.0, 5000.0, 0.0, 1.0, 0.0))
        assert store.density(0.0, 0.0, 1000.0) == 2
        assert store.density_at_commit[store._slot_of[1]] == 1

    def test_capacity_grows(self):
        store = EndpointStore(capacity=2)
        for i in range(10):
            store.commit(Posit(float(i), 100.0 * i, 0.0, 1.0, 0.0))
        assert len(store) == 10
        assert store.x.size >= 10


class TestScreening:

    def test_empty_store(self, screener, store):
        result = screener.screen(Posit(0.0, 0.0, 0.0, 5.0, 0.0, source_id=3), store)
        assert result.candidates == []
        assert result.query_ref == 3
        assert result.new_vessel_score == 0.0

    def test_fewer_than_k_all_returned_sorted(self, screener, store):
        query = Posit(3600.0, 0.0, 0.0, 5.0, 0.0)
        for i in range(5):
            start = project(query, -1800.0 - 100.0 * i)
            store.commit(Posit(start.t, start.x, start.y + 50.0 * i, 5.0, 0.0))
        result = screener.screen(query, store)
        assert len(result.candidates) == 5
        scores = [c.score for c in result.candidates]
        assert scores == sorted(scores)
        assert all(math.isfinite(s) for s in scores)

    @pytest.mark.parametrize('use_index', [True, False])
    def test_matches_brute_force(self, use_index):
        gate, scoring, config = GateConfig(), ScoreConfig(), ScreeningConfig(k=16)
        screener = CandidateScreener(gate, scoring, config)
        rng = np.random.default_rng(11)
        for _ in range(150):
            query = Posit(
                20_000.0,
                float(rng.normal(0.0, 3000.0)),
                float(rng.normal(0.0, 3000.0)),
                float(rng.uniform(0.0, 10.0)),
                float(rng.uniform(-math.pi, math.pi)),
            )
            store = _random_store(rng, 120, query.t)
            expected = _brute_force(query, store, gate, scoring, 16)
            result = screener.screen(query, store, use_index=use_index)
            assert result.track_ids == [tid for _, tid in expected]
            for cand, (score, _) in zip(result.candidates, expected):
                assert cand.score == pytest.approx(score, rel=1e-9)

    def test_prefix_property(self, screener):
        rng = np.random.default_rng(5)
        query = Posit(20_000.0, 0.0, 0.0, 4.0, 0.3)
        store = _random_store(rng, 300, query.t)
        longest = screener.screen(query, store, k=32).track_ids
        for k in (1, 2, 4, 8, 16):
            assert screener.screen(query, store, k=k).track_ids == longest[:k]

    def test_truth_marking(self, screener, store):
        first = Posit(0.0, 0.0, 0.0, 5.0, 0.0, source_id=0)
        store.commit(first)
        query = project(first, 1800.0)
        hit = screener.screen(query, store, true_predecessor=0)
        assert hit.truth_in_screen and hit.true_slot == 0
        born = screener.screen(query, store, true_predecessor=NEW_VESSEL)
        assert born.truth_in_screen and born.true_slot == NEW_VESSEL
        miss = screener.screen(query, store, true_predecessor=99)
        assert miss.truth_in_screen is False
        assert screener.screen(query, store).truth_in_screen is None

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            ScreeningConfig(k=0)
        assert ScreeningConfig.from_config({'k': 4}).k == 4
