from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import pandas as pd

from src.association.gating import GateConfig, ScoreConfig
from src.association.screening import (
    NEW_VESSEL,
    CandidateScreener,
    EndpointStore,
    ScreeningConfig,
    ScreenResult,
)
from src.errors import ConfigurationError, UnsortedStreamError
from src.evaluation.posit_metrics import posit_accuracy
from src.geo.kinematics import Posit
from src.monitoring.metrics import RelabelMetrics
from src.tracking.deciders import Decider, OracleDecider

logger = logging.getLogger(__name__)

Observer = Callable[[Posit, ScreenResult, EndpointStore], None]


@dataclass
class DecisionRecord:
    point_id: int
    t: float
    candidates: List[int]
    scores: List[float]
    new_vessel_score: float
    chosen_slot: int
    track_id: int
    probabilities: List[float]
    truth_in_screen: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class LabeledStream:
    """Per-posit track labels in processing order, with audit records."""

    point_ids: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    track_ids: List[int] = field(default_factory=list)
    records: List[DecisionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.point_ids)

    def append(self, point_id: int, t: float, track_id: int, record: Optional[DecisionRecord] = None):
        self.point_ids.append(point_id)
        self.times.append(t)
        self.track_ids.append(track_id)
        if record is not None:
            self.records.append(record)

    @property
    def n_tracks(self) -> int:
        return len(set(self.track_ids))

    def labels(self) -> Dict[int, int]:
        return dict(zip(self.point_ids, self.track_ids))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'point_id': self.point_ids,
            't': self.times,
            'predicted_track_id': self.track_ids,
        })

    def write_audit(self, path: Path):
        """One JSON object per posit."""
        with open(path, 'w') as f:
            for record in self.records:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')
        logger.info(f"Wrote {len(self.records)} audit records to {path}")


@dataclass
class CeilingReport:
    accuracy: float
    recall: float  # true ancestor inside the screen, over posits that have one
    links: int
    posits: int


def check_sorted(posits: Sequence[Posit]):
    for i in range(1, len(posits)):
        if (posits[i].t, posits[i].source_id) < (posits[i - 1].t, posits[i - 1].source_id):
            raise UnsortedStreamError(
                f"posit {posits[i].source_id} at t={posits[i].t} follows "
                f"posit {posits[i - 1].source_id} at t={posits[i - 1].t}"
            )


def true_predecessors(posits: Iterable[Posit], truth: Mapping[int, int]) -> Dict[int, int]:
    """Point id of each posit's true previous posit, or NEW_VESSEL for track starts."""
    last_of: Dict[int, int] = {}
    predecessors: Dict[int, int] = {}
    for posit in posits:
        vessel = truth[posit.source_id]
        predecessors[posit.source_id] = last_of.get(vessel, NEW_VESSEL)
        last_of[vessel] = posit.source_id
    return predecessors


class RelabelTracker:
    """Online screen, decide and commit loop over a time-sorted posit stream."""

    def __init__(
        self,
        gate: GateConfig,
        scoring: ScoreConfig,
        screening: ScreeningConfig,
        metrics: Optional[RelabelMetrics] = None
    ):
        self.gate = gate
        self.scoring = scoring
        self.screening = screening
        self.screener = CandidateScreener(gate, scoring, screening)
        self.metrics = metrics or RelabelMetrics()

    @classmethod
    def from_config(cls, config: Dict[str, Any], metrics: Optional[RelabelMetrics] = None) -> "RelabelTracker":
        return cls(
            GateConfig.from_config(config.get('gating', {})),
            ScoreConfig.from_config(config.get('scoring', {})),
            ScreeningConfig.from_config(config.get('screening', {})),
            metrics,
        )

    def with_k(self, k: int) -> "RelabelTracker":
        return RelabelTracker(self.gate, self.scoring, replace(self.screening, k=k), self.metrics)

    def run(
        self,
        posits: Sequence[Posit],
        decider: Decider,
        truth: Optional[Mapping[int, int]] = None,
        observer: Optional[Observer] = None
    ) -> LabeledStream:
        check_sorted(posits)
        if decider.needs_truth and truth is None:
            raise ConfigurationError(f"The {decider.name} decider needs ground-truth labels")
        predecessors = true_predecessors(posits, truth) if truth is not None else {}

        store = EndpointStore.from_configs(self.screening, self.scoring)
        stream = LabeledStream()
        for query in posits:
            store.retire(query.t, self.gate.max_dt)
            with self.metrics.time_screen():
                result = self.screener.screen(
                    query, store, true_predecessor=predecessors.get(query.source_id)
                )
            if observer is not None:
                observer(query, result, store)

            assignment = decider.decide(query, result, store)
            track_id = store.commit(query, None if assignment.is_new_vessel else assignment.track_id)
            self.metrics.observe_decision(decider.name, len(result.candidates), assignment.is_new_vessel)
            stream.append(query.source_id, query.t, track_id, DecisionRecord(
                point_id=query.source_id,
                t=query.t,
                candidates=result.track_ids,
                scores=[c.score for c in result.candidates],
                new_vessel_score=result.new_vessel_score,
                chosen_slot=assignment.decision,
                track_id=track_id,
                probabilities=[float(p) for p in assignment.probabilities],
                truth_in_screen=result.truth_in_screen,
            ))

        logger.info(
            f"Relabeled {len(stream)} posits into {store.tracks_created} tracks with {decider.name}"
        )
        return stream


def oracle_ceiling(
    posits: Sequence[Posit],
    truth: Mapping[int, int],
    tracker: RelabelTracker,
    k: Optional[int] = None
) -> CeilingReport:
    """Posit accuracy when the true ancestor is chosen whenever it is screened."""
    if k is not None:
        tracker = tracker.with_k(k)
    stream = tracker.run(posits, OracleDecider(tracker.screening.k), truth)
    score = posit_accuracy(stream, truth)
    predecessors = true_predecessors(posits, truth)
    linked = [r for r in stream.records if predecessors[r.point_id] != NEW_VESSEL]
    recall = sum(bool(r.truth_in_screen) for r in linked) / len(linked) if linked else 1.0
    logger.info(f"Oracle ceiling {score.accuracy:.4f} at k={tracker.screening.k}, recall {recall:.4f}")
    return CeilingReport(score.accuracy, recall, len(linked), len(stream))
