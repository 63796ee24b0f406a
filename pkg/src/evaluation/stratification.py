from typing import TYPE_CHECKING, Any, Dict, Mapping, Sequence, Union
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from src.errors import ConfigurationError
from src.evaluation.posit_metrics import PositScore, posit_accuracy
from src.geo.kinematics import Posit

if TYPE_CHECKING:
    from src.tracking.tracker import LabeledStream

logger = logging.getLogger(__name__)

STRATA = ('open', 'coastal', 'port')


@dataclass(frozen=True)
class RegionModel:
    """Density-based strata: many posits within `radius` means port, a few means coastal."""

    radius: float = 5000.0
    coastal_threshold: int = 20
    port_threshold: int = 80

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("region radius must be positive")
        if not 0 <= self.coastal_threshold <= self.port_threshold:
            raise ConfigurationError("need 0 <= coastal_threshold <= port_threshold")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "RegionModel":
        return cls(
            radius=config.get('radius', 5000.0),
            coastal_threshold=config.get('coastal_threshold', 20),
            port_threshold=config.get('port_threshold', 80),
        )

    def neighbor_counts(self, posits: Sequence[Posit]) -> np.ndarray:
        if not posits:
            return np.zeros(0, dtype=np.int64)
        xy = np.array([(p.x, p.y) for p in posits])
        tree = cKDTree(xy)
        # the posit itself is inside its own ball
        return tree.query_ball_point(xy, r=self.radius, return_length=True) - 1

    def assign(self, posits: Sequence[Posit]) -> Dict[int, str]:
        counts = self.neighbor_counts(posits)
        strata = np.where(
            counts >= self.port_threshold, 'port',
            np.where(counts >= self.coastal_threshold, 'coastal', 'open'),
        )
        return {p.source_id: str(s) for p, s in zip(posits, strata)}


@dataclass
class StratifiedScore:
    overall: PositScore
    accuracy: Dict[str, float]
    posits: Dict[str, int]

    def format_table(self) -> str:
        lines = [f"{'stratum':<10}{'posits':>10}{'accuracy':>12}"]
        for stratum in STRATA:
            if stratum in self.accuracy:
                lines.append(f"{stratum:<10}{self.posits[stratum]:>10}{self.accuracy[stratum]:>12.4f}")
        lines.append(f"{'overall':<10}{sum(self.posits.values()):>10}{self.overall.accuracy:>12.4f}")
        return '\n'.join(lines)


def stratify(
    predicted: Union["LabeledStream", pd.DataFrame],
    truth: Mapping[int, int],
    posits: Sequence[Posit],
    region_model: RegionModel
) -> StratifiedScore:
    """Posit accuracy per stratum; strata partition the posits."""
    regions = region_model.assign(posits)
    score = posit_accuracy(predicted, truth, regions=regions)
    counts = pd.Series(list(regions.values()), dtype=object).value_counts()
    result = StratifiedScore(
        overall=score,
        accuracy=dict(score.by_region),
        posits={str(k): int(v) for k, v in counts.items()},
    )
    logger.info(
        "Stratified accuracy: " + ", ".join(f"{s}={a:.4f}" for s, a in sorted(result.accuracy.items()))
    )
    return result
