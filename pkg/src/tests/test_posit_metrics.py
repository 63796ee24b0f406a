import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigurationError, MetricInputError
from src.evaluation.accuracy_curve import ceiling_by_k, format_curve, simulate_posit_curve
from src.evaluation.posit_metrics import posit_accuracy
from src.evaluation.stratification import RegionModel, stratify
from src.geo.kinematics import Posit
from src.tracking.deciders import GreedyDecider
from src.tracking.tracker import LabeledStream, oracle_ceiling


def _frame(times, labels):
    return pd.DataFrame({
        'point_id': list(range(len(times))),
        't': list(times),
        'predicted_track_id': list(labels),
    })


def _brute_force(times, predicted, truth):
    """Direct neighbor enumeration: one point per matching predecessor and per matching successor."""
    order = sorted(range(len(times)), key=lambda i: (times[i], i))

    def neighbors(labels):
        prev, nxt = {}, {}
        for a in order:
            same = [b for b in order if labels[b] == labels[a]]
            k = same.index(a)
            prev[a] = same[k - 1] if k > 0 else None
            nxt[a] = same[k + 1] if k + 1 < len(same) else None
        return prev, nxt

    p_prev, p_next = neighbors(predicted)
    t_prev, t_next = neighbors(truth)
    earned = sum((p_prev[i] == t_prev[i]) + (p_next[i] == t_next[i]) for i in order)
    return earned / (2 * len(times))


def test_perfect_labeling():
    frame = _frame([0, 1, 2, 3], [5, 5, 6, 6])
    assert posit_accuracy(frame, {0: 1, 1: 1, 2: 2, 3: 2}).accuracy == 1.0


def test_all_singletons_against_one_track():
    frame = _frame([0, 60, 120], [0, 1, 2])
    score = posit_accuracy(frame, {0: 9, 1: 9, 2: 9})
    assert (score.earned, score.available) == (2, 6)
    assert score.accuracy == pytest.approx(2 / 6)


@pytest.mark.parametrize('seed', range(40))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 200))
    times = rng.integers(0, 50, n).tolist()
    truth = rng.integers(0, max(1, n // 8), n).tolist()
    predicted = rng.integers(0, max(1, n // 6), n).tolist()
    score = posit_accuracy(_frame(times, predicted), dict(enumerate(truth)))
    assert score.accuracy == _brute_force(times, predicted, truth)


def test_renaming_and_symmetry():
    rng = np.random.default_rng(3)
    times = np.sort(rng.integers(0, 1000, 60)).tolist()
    predicted = rng.integers(0, 6, 60).tolist()
    truth = rng.integers(0, 5, 60).tolist()
    base = posit_accuracy(_frame(times, predicted), dict(enumerate(truth))).accuracy

    renamed = [1000 - label for label in predicted]
    assert posit_accuracy(_frame(times, renamed), dict(enumerate(truth))).accuracy == base

    swapped = posit_accuracy(_frame(times, truth), dict(enumerate(predicted))).accuracy
    assert swapped == base


def test_posit_set_mismatch():
    with pytest.raises(MetricInputError):
        posit_accuracy(_frame([0, 1], [0, 0]), {0: 0, 1: 0, 2: 0})
    with pytest.raises(MetricInputError):
        posit_accuracy(_frame([0, 1], [0, 0]), {0: 0, 5: 0})


def test_excluding_endpoints():
    frame = _frame([0, 60, 120], [0, 1, 2])
    score = posit_accuracy(frame, {0: 9, 1: 9, 2: 9}, include_endpoints=False)
    assert (score.earned, score.available) == (0, 4)
    per_posit = score.per_posit
    assert per_posit['available'].tolist() == [1, 2, 1]


def test_labeled_stream_input():
    stream = LabeledStream()
    for pid, (t, track) in enumerate([(0.0, 0), (10.0, 0), (20.0, 1)]):
        stream.append(pid, t, track)
    assert posit_accuracy(stream, {0: 4, 1: 4, 2: 7}).accuracy == 1.0


def _posits(points):
    return [Posit(float(i), x, y, 1.0, 0.0, source_id=i) for i, (x, y) in enumerate(points)]


class TestStratification:

    def test_strata_partition_posits(self):
        rng = np.random.default_rng(0)
        harbor = rng.normal(0.0, 300.0, size=(120, 2))
        approach = rng.normal(0.0, 2000.0, size=(40, 2)) + [40_000.0, 0.0]
        offshore = rng.uniform(200_000.0, 900_000.0, size=(30, 2))
        posits = _posits([tuple(p) for p in np.vstack([harbor, approach, offshore])])
        regions = RegionModel().assign(posits)
        assert len(regions) == len(posits)
        assert set(regions.values()) <= {'open', 'coastal', 'port'}
        assert regions[0] == 'port'
        assert regions[len(posits) - 1] == 'open'

        n = len(posits)
        frame = pd.DataFrame({
            'point_id': range(n),
            't': [p.t for p in posits],
            'predicted_track_id': rng.integers(0, 5, n),
        })
        truth = dict(enumerate(rng.integers(0, 4, n).tolist()))
        result = stratify(frame, truth, posits, RegionModel())
        assert sum(result.posits.values()) == n

        per_posit = result.overall.per_posit
        recombined = sum(
            result.accuracy[s] * per_posit.loc[per_posit['region'] == s, 'available'].sum()
            for s in result.accuracy
        ) / per_posit['available'].sum()
        assert recombined == pytest.approx(result.overall.accuracy)
        assert 'overall' in result.format_table()

    def test_single_stratum(self):
        posits = _posits([(1e5 * i, 0.0) for i in range(6)])
        frame = pd.DataFrame({'point_id': range(6), 't': range(6), 'predicted_track_id': [0, 0, 1, 1, 2, 2]})
        truth = {i: 0 for i in range(6)}
        result = stratify(frame, truth, posits, RegionModel())
        assert list(result.accuracy) == ['open']
        assert result.accuracy['open'] == pytest.approx(result.overall.accuracy)

    def test_invalid_region_model(self):
        with pytest.raises(ConfigurationError):
            RegionModel(coastal_threshold=50, port_threshold=10)


class TestCurve:

    def test_perfect_decider_reaches_ceiling(self, tracker, synthetic):
        posits, truth = synthetic
        curve = simulate_posit_curve(posits, truth, tracker, accuracies=[1.0], seeds=[0, 1])
        ceiling = oracle_ceiling(posits, truth, tracker)
        assert curve[0].mean == pytest.approx(ceiling.accuracy)
        assert curve[0].std == 0.0

    @pytest.mark.slow
    def test_roughly_monotone(self, tracker, synthetic):
        posits, truth = synthetic
        curve = simulate_posit_curve(posits, truth, tracker, accuracies=[0.0, 0.5, 1.0], seeds=[0, 1, 2])
        means = [pt.mean for pt in curve]
        assert means[0] < means[1] < means[2]
        greedy = posit_accuracy(tracker.run(posits, GreedyDecider(8)), truth).accuracy
        assert means[0] < greedy
        assert 'posit accuracy' in format_curve(curve)

    def test_ceiling_by_k(self, tracker, synthetic):
        posits, truth = synthetic
        reports = ceiling_by_k(posits, truth, tracker, [4, 1])
        assert list(reports) == [1, 4]
        assert all(0.0 <= r.accuracy <= 1.0 for r in reports.values())
