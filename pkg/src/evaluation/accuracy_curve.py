from typing import Dict, List, Mapping, Sequence
import logging
from dataclasses import dataclass

import numpy as np

from src.evaluation.posit_metrics import posit_accuracy
from src.geo.kinematics import Posit
from src.tracking.deciders import SimulatedDecider
from src.tracking.tracker import CeilingReport, RelabelTracker, oracle_ceiling

logger = logging.getLogger(__name__)

DEFAULT_ACCURACIES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class CurvePoint:
    p: float
    mean: float
    per_seed: List[float]

    @property
    def std(self) -> float:
        return float(np.std(self.per_seed))


def simulate_posit_curve(
    posits: Sequence[Posit],
    truth: Mapping[int, int],
    tracker: RelabelTracker,
    accuracies: Sequence[float] = DEFAULT_ACCURACIES,
    seeds: Sequence[int] = (0, 1, 2)
) -> List[CurvePoint]:
    """Replay the tracker with a decider that is right with probability p.

    The same seeds are used at every p so neighboring points are paired.
    """
    curve = []
    for p in sorted(accuracies):
        scores = []
        for seed in seeds:
            decider = SimulatedDecider(tracker.screening.k, p, seed)
            stream = tracker.run(posits, decider, truth)
            scores.append(posit_accuracy(stream, truth).accuracy)
        point = CurvePoint(float(p), float(np.mean(scores)), scores)
        logger.info(f"Simulated classifier accuracy {p:.2f}: posit accuracy {point.mean:.4f} (std {point.std:.4f})")
        curve.append(point)
    return curve


def ceiling_by_k(
    posits: Sequence[Posit],
    truth: Mapping[int, int],
    tracker: RelabelTracker,
    ks: Sequence[int]
) -> Dict[int, CeilingReport]:
    return {k: oracle_ceiling(posits, truth, tracker, k) for k in sorted(ks)}


def format_curve(curve: Sequence[CurvePoint]) -> str:
    lines = [f"{'p':>6}{'posit accuracy':>16}{'std':>10}"]
    lines += [f"{pt.p:>6.2f}{pt.mean:>16.4f}{pt.std:>10.4f}" for pt in curve]
    return '\n'.join(lines)
