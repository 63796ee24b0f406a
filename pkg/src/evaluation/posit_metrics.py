"""Posit accuracy: one point per posit for the right predecessor, one for the right successor.

A posit that starts its true track has predecessor "none"; a prediction that
also starts a track there earns the point. Successors mirror this at track ends.
"""
from typing import TYPE_CHECKING, Dict, Mapping, Optional, Union
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.errors import MetricInputError

if TYPE_CHECKING:
    from src.tracking.tracker import LabeledStream

logger = logging.getLogger(__name__)

NONE = -1


@dataclass
class PositScore:
    earned: int
    available: int
    per_posit: pd.DataFrame = field(repr=False)
    by_region: Dict[str, float] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.earned / self.available if self.available else 1.0


def neighbor_frame(order: pd.DataFrame, label_column: str) -> pd.DataFrame:
    """Previous and next point id of each posit within its track, NONE at the ends."""
    grouped = order.groupby(label_column, sort=False)['point_id']
    return pd.DataFrame({
        'prev': grouped.shift(1).fillna(NONE).astype(np.int64),
        'next': grouped.shift(-1).fillna(NONE).astype(np.int64),
    }, index=order.index)


def _as_frame(predicted: Union["LabeledStream", pd.DataFrame]) -> pd.DataFrame:
    if isinstance(predicted, pd.DataFrame):
        return predicted
    return predicted.to_frame()


def posit_accuracy(
    predicted: Union["LabeledStream", pd.DataFrame],
    truth: Mapping[int, int],
    include_endpoints: bool = True,
    regions: Optional[Mapping[int, str]] = None
) -> PositScore:
    """Score predicted track labels against ground-truth labels on the same posits.

    `predicted` needs point_id, t and predicted_track_id. With
    `include_endpoints=False` the none-matches-none points are dropped from
    both earned and available counts.
    """
    frame = _as_frame(predicted)
    if len(frame) != len(truth) or set(frame['point_id']) != set(truth):
        logger.error("Predicted and true labelings cover different posits")
        raise MetricInputError(
            f"posit-set mismatch: {len(frame)} predicted, {len(truth)} true"
        )

    order = frame.sort_values(['t', 'point_id'], kind='mergesort').reset_index(drop=True)
    order['true_track_id'] = order['point_id'].map(truth)
    pred = neighbor_frame(order, 'predicted_track_id')
    true = neighbor_frame(order, 'true_track_id')

    per_posit = pd.DataFrame({
        'point_id': order['point_id'],
        'prev_ok': pred['prev'] == true['prev'],
        'next_ok': pred['next'] == true['next'],
        'prev_counts': np.ones(len(order), dtype=bool),
        'next_counts': np.ones(len(order), dtype=bool),
    })
    if not include_endpoints:
        per_posit['prev_counts'] = true['prev'] != NONE
        per_posit['next_counts'] = true['next'] != NONE

    earned_each = (
        (per_posit['prev_ok'] & per_posit['prev_counts']).astype(int)
        + (per_posit['next_ok'] & per_posit['next_counts']).astype(int)
    )
    available_each = per_posit['prev_counts'].astype(int) + per_posit['next_counts'].astype(int)
    per_posit['earned'] = earned_each
    per_posit['available'] = available_each

    score = PositScore(int(earned_each.sum()), int(available_each.sum()), per_posit)
    if regions is not None:
        per_posit['region'] = per_posit['point_id'].map(regions)
        sums = per_posit.groupby('region')[['earned', 'available']].sum()
        score.by_region = {
            str(region): float(row.earned / row.available) if row.available else 1.0
            for region, row in sums.iterrows()
        }
    return score
