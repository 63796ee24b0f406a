from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.association.features import (
    CANDIDATE_FEATURES,
    NEW_VESSEL_FEATURES,
    FeatureBuilder,
    FeatureSchema,
    fit_schema,
)
from src.association.gating import GateConfig
from src.association.screening import NEW_VESSEL, EndpointStore, ScreenResult
from src.geo.kinematics import Posit
from src.tracking.deciders import OracleDecider
from src.tracking.tracker import RelabelTracker, true_predecessors

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass
class TrainingExamples:
    """One assembled input row plus true class index per query posit."""

    inputs: np.ndarray  # (N, (k+1) * slot_width) float32
    labels: np.ndarray  # (N,) in 0..k, k = New Vessel
    masks: np.ndarray  # (N, k+1) bool
    days: np.ndarray  # (N,) day index of each row

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, selector: np.ndarray) -> "TrainingExamples":
        return TrainingExamples(
            self.inputs[selector], self.labels[selector], self.masks[selector], self.days[selector]
        )

    def for_days(self, days: Sequence[int]) -> "TrainingExamples":
        return self.subset(np.isin(self.days, list(days)))

    def save(self, path: Path):
        np.savez_compressed(path, inputs=self.inputs, labels=self.labels, masks=self.masks, days=self.days)
        logger.info(f"Saved {len(self)} training examples to {path}")

    @classmethod
    def load(cls, path: Path) -> "TrainingExamples":
        with np.load(path) as data:
            return cls(data['inputs'], data['labels'], data['masks'], data['days'])


@dataclass
class DayRows:
    """Unnormalized feature rows of the query posits falling on one day."""

    day: int
    cand_raw: List[np.ndarray] = field(default_factory=list)
    new_raw: List[np.ndarray] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)
    screened_truth: int = 0
    links: int = 0


def split_days(posits: Sequence[Posit]) -> Dict[int, List[Posit]]:
    days: Dict[int, List[Posit]] = defaultdict(list)
    for posit in posits:
        days[int(posit.t // SECONDS_PER_DAY)].append(posit)
    return dict(sorted(days.items()))


def oracle_label(result: ScreenResult, k: int) -> int:
    """Class index the oracle would pick: the true slot, else New Vessel (k)."""
    if result.truth_in_screen and result.true_slot is not None and result.true_slot != NEW_VESSEL:
        return result.true_slot
    return k


def split_segments(posits: Sequence[Posit], max_gap: float) -> List[List[Posit]]:
    """Cut the stream wherever consecutive posits are more than `max_gap` apart.

    Every endpoint is retired across such a gap, so one tracker per segment
    sees exactly what a single tracker over the whole stream would.
    """
    segments: List[List[Posit]] = []
    previous = None
    for posit in posits:
        if previous is None or posit.t - previous.t > max_gap:
            segments.append([])
        segments[-1].append(posit)
        previous = posit
    return segments


def collect_segment_rows(
    posits: Sequence[Posit],
    truth: Mapping[int, int],
    predecessors: Mapping[int, int],
    config: Dict[str, Any]
) -> List[DayRows]:
    """Oracle-driven pass over one segment, recording raw rows before each commit.

    Rows are grouped by the day of their query posit; `predecessors` covers the
    whole stream so links into earlier segments count as screen misses.
    """
    tracker = RelabelTracker.from_config(config)
    k = tracker.screening.k
    by_day: Dict[int, DayRows] = {}

    def observe(query: Posit, result: ScreenResult, store: EndpointStore):
        day = int(query.t // SECONDS_PER_DAY)
        rows = by_day.setdefault(day, DayRows(day))
        cand_raw, new_raw = FeatureBuilder.raw_rows(query, result, store)
        rows.cand_raw.append(cand_raw)
        rows.new_raw.append(new_raw)
        rows.labels.append(oracle_label(result, k))
        if predecessors[query.source_id] != NEW_VESSEL:
            rows.links += 1
            rows.screened_truth += int(bool(result.truth_in_screen) and result.true_slot != NEW_VESSEL)

    tracker.run(posits, OracleDecider(k), truth, observer=observe)
    return list(by_day.values())


def merge_day_rows(parts: Iterable[Sequence[DayRows]]) -> List[DayRows]:
    """Concatenate per-segment rows day by day, keeping stream order."""
    merged: Dict[int, DayRows] = {}
    for part in parts:
        for rows in part:
            target = merged.setdefault(rows.day, DayRows(rows.day))
            target.cand_raw.extend(rows.cand_raw)
            target.new_raw.extend(rows.new_raw)
            target.labels.extend(rows.labels)
            target.screened_truth += rows.screened_truth
            target.links += rows.links
    return [merged[day] for day in sorted(merged)]


class DataPreparationPipeline:
    """Builds classifier training examples from oracle passes, in parallel across independent segments."""

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.k = config.get('screening', {}).get('k', 16)
        self.workers = config.get('runtime', {}).get('workers', 1)
        self.max_gap = GateConfig.from_config(config.get('gating', {})).max_dt

    def collect(
        self,
        posits: Sequence[Posit],
        truth: Mapping[int, int]
    ) -> List[DayRows]:
        """One oracle tracker across the stream, so rows near midnight see yesterday's endpoints."""
        predecessors = true_predecessors(posits, truth)
        jobs = [
            (segment, {p.source_id: truth[p.source_id] for p in segment},
             {p.source_id: predecessors[p.source_id] for p in segment})
            for segment in split_segments(posits, self.max_gap)
        ]
        try:
            if self.workers <= 1 or len(jobs) <= 1:
                parts = [collect_segment_rows(ps, tr, pred, self.config) for ps, tr, pred in jobs]
            else:
                with ProcessPoolExecutor(max_workers=self.workers) as executor:
                    futures = [
                        executor.submit(collect_segment_rows, ps, tr, pred, self.config)
                        for ps, tr, pred in jobs
                    ]
                    parts = [f.result() for f in futures]
        except Exception as e:
            logger.error(f"Error collecting training rows: {e}")
            raise

        results = merge_day_rows(parts)
        links = sum(r.links for r in results)
        screened = sum(r.screened_truth for r in results)
        logger.info(
            f"Collected {sum(len(r.labels) for r in results)} rows over {len(results)} days "
            f"in {len(jobs)} segments; screen recall {screened / links if links else 1.0:.4f}"
        )
        return results

    def fit(self, rows: Sequence[DayRows], train_days: Optional[Sequence[int]] = None) -> FeatureSchema:
        """Normalization constants from training days only."""
        selected = [r for r in rows if train_days is None or r.day in set(train_days)]
        cand = [c for r in selected for c in r.cand_raw if len(c)]
        cand_raw = np.vstack(cand) if cand else np.zeros((0, len(CANDIDATE_FEATURES)))
        new = [n for r in selected for n in r.new_raw]
        new_raw = np.vstack(new) if new else np.zeros((0, len(NEW_VESSEL_FEATURES)))
        return fit_schema(self.k, cand_raw, new_raw)

    @staticmethod
    def assemble(rows: Sequence[DayRows], schema: FeatureSchema) -> TrainingExamples:
        builder = FeatureBuilder(schema)
        inputs, masks, labels, days = [], [], [], []
        for day_rows in rows:
            for cand_raw, new_raw, label in zip(day_rows.cand_raw, day_rows.new_raw, day_rows.labels):
                assembled = builder.assemble_raw(cand_raw, new_raw)
                inputs.append(assembled.values)
                masks.append(assembled.mask)
                labels.append(label)
                days.append(day_rows.day)
        if not inputs:
            return TrainingExamples(
                np.zeros((0, schema.input_width), dtype=np.float32),
                np.zeros(0, dtype=np.int64),
                np.zeros((0, schema.k + 1), dtype=bool),
                np.zeros(0, dtype=np.int64),
            )
        return TrainingExamples(
            np.vstack(inputs),
            np.asarray(labels, dtype=np.int64),
            np.vstack(masks),
            np.asarray(days, dtype=np.int64),
        )

    def build_training_examples(
        self,
        posits: Sequence[Posit],
        truth: Mapping[int, int],
        train_days: Optional[Sequence[int]] = None
    ) -> Tuple[TrainingExamples, FeatureSchema]:
        rows = self.collect(posits, truth)
        schema = self.fit(rows, train_days)
        return self.assemble(rows, schema), schema
