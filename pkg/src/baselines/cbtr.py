from typing import Any, Dict, List, Sequence, Tuple
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.errors import ConfigurationError
from src.geo.kinematics import Posit
from src.tracking.tracker import LabeledStream, check_sorted

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CbtrConfig:
    theta: float = math.radians(85.0)
    window: float = 6 * 3600.0
    max_distance: float = math.inf  # links above this start a new track
    v_max: float = 25.0  # pairs needing a faster transit are never compatible
    workers: int = 1

    def __post_init__(self):
        if self.window <= 0:
            raise ConfigurationError("CBTR window must be positive")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "CbtrConfig":
        return cls(
            theta=math.radians(config.get('theta_deg', 85.0)),
            window=config.get('window', 6 * 3600.0),
            max_distance=math.inf if config.get('max_distance') is None else config['max_distance'],
            v_max=config.get('v_max', 25.0),
            workers=config.get('workers', 1),
        )


class CbtrDistanceMatrix:
    """Upper-triangular pair distances stored column-wise; absent entries are +inf."""

    def __init__(self, n: int, rows: np.ndarray = None, cols: np.ndarray = None, dists: np.ndarray = None):
        self.n = n
        rows = np.zeros(0, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64) if cols is None else np.asarray(cols, dtype=np.int64)
        dists = np.zeros(0) if dists is None else np.asarray(dists, dtype=np.float64)
        order = np.lexsort((rows, cols))
        self.rows, self.cols, self.dists = rows[order], cols[order], dists[order]
        self._indptr = np.searchsorted(self.cols, np.arange(n + 1))

    def __len__(self) -> int:
        return int(self.dists.size)

    def get(self, i: int, j: int) -> float:
        """Distance from posit i to the later posit j; +inf when the pair was gated out."""
        rows, dists = self.column(j)
        k = np.searchsorted(rows, i)
        if k < rows.size and rows[k] == i:
            return float(dists[k])
        return math.inf

    def column(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Earlier posits with a finite distance to posit j, and those distances."""
        lo, hi = self._indptr[j], self._indptr[j + 1]
        return self.rows[lo:hi], self.dists[lo:hi]

    def triplets(self) -> List[Tuple[int, int, float]]:
        """Finite entries as (i, j, d), ordered by i then j."""
        order = np.lexsort((self.cols, self.rows))
        return [(int(self.rows[k]), int(self.cols[k]), float(self.dists[k])) for k in order]

    def to_dense(self) -> np.ndarray:
        dense = np.full((self.n, self.n), np.inf)
        dense[self.rows, self.cols] = self.dists
        return dense

    def export_triplets(self, path: Path):
        """Write `i j d` per finite entry for external clustering."""
        with open(path, 'w') as f:
            for i, j, d in self.triplets():
                f.write(f"{i} {j} {d:.6f}\n")
        logger.info(f"Exported {len(self)} distances to {path}")


def _row(i: int, x, y, v, psi, t, cfg: CbtrConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Distances from posit i to every later posit inside the window."""
    end = np.searchsorted(t, t[i] + cfg.window, side='right')
    j = np.arange(i + 1, end)
    dt = t[j] - t[i]
    j, dt = j[dt > 0], dt[dt > 0]

    # forward projection of i, backward projection of each j (CV)
    proj_dx = v[i] * math.cos(psi[i]) * dt
    proj_dy = v[i] * math.sin(psi[i]) * dt
    back_x = x[j] - v[j] * np.cos(psi[j]) * dt
    back_y = y[j] - v[j] * np.sin(psi[j]) * dt

    act_dx = x[j] - x[i]
    act_dy = y[j] - y[i]
    cross = np.abs(act_dx * proj_dy - act_dy * proj_dx)
    dot = act_dx * proj_dx + act_dy * proj_dy
    degenerate = ((proj_dx == 0) & (proj_dy == 0)) | ((act_dx == 0) & (act_dy == 0))
    angle = np.where(degenerate, 0.0, np.arctan2(cross, dot))

    d_f = np.hypot(x[i] + proj_dx - x[j], y[i] + proj_dy - y[j])
    d_b = np.hypot(back_x - x[i], back_y - y[i])
    keep = (angle <= cfg.theta) & (np.hypot(act_dx, act_dy) <= cfg.v_max * dt)
    return j[keep], 0.5 * (d_f + d_b)[keep]


def cbtr_distances(posits: Sequence[Posit], cfg: CbtrConfig) -> CbtrDistanceMatrix:
    """Symmetrized forward/backward projection distance for every gated pair."""
    check_sorted(posits)
    n = len(posits)
    if n < 2:
        return CbtrDistanceMatrix(n)

    x = np.array([p.x for p in posits])
    y = np.array([p.y for p in posits])
    v = np.array([p.v for p in posits])
    psi = np.array([p.psi for p in posits])
    t = np.array([p.t for p in posits])

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as executor:
        rows = list(executor.map(lambda i: _row(i, x, y, v, psi, t, cfg), range(n - 1)))
    row_idx = np.concatenate([np.full(js.size, i, dtype=np.int64) for i, (js, _) in enumerate(rows)])
    col_idx = np.concatenate([js for js, _ in rows])
    dists = np.concatenate([ds for _, ds in rows])
    matrix = CbtrDistanceMatrix(n, row_idx, col_idx, dists)
    logger.info(f"CBTR kept {len(matrix)} gated pairs among {n} posits")
    return matrix


def cbtr_link(matrix: CbtrDistanceMatrix, posits: Sequence[Posit], cfg: CbtrConfig = CbtrConfig()) -> LabeledStream:
    """Chronological greedy linking to the nearest compatible track endpoint."""
    stream = LabeledStream()
    track_of = np.full(len(posits), -1, dtype=np.int64)
    is_endpoint = np.zeros(len(posits), dtype=bool)
    next_track = 0

    for j, posit in enumerate(posits):
        rows, dists = matrix.column(j)
        ok = is_endpoint[rows] & (dists <= cfg.max_distance)
        if np.any(ok):
            rows, dists = rows[ok], dists[ok]
            best = np.lexsort((track_of[rows], dists))[0]
            i = int(rows[best])
            track = int(track_of[i])
            is_endpoint[i] = False
        else:
            track = next_track
            next_track += 1
        track_of[j] = track
        is_endpoint[j] = True
        stream.append(posit.source_id, posit.t, track)

    logger.info(f"CBTR linked {len(posits)} posits into {next_track} tracks")
    return stream


def run_cbtr(posits: Sequence[Posit], cfg: CbtrConfig) -> LabeledStream:
    """Distance matrix plus greedy linking over posits in (time, point id) order."""
    ordered = sorted(posits, key=lambda p: (p.t, p.source_id))
    return cbtr_link(cbtr_distances(ordered, cfg), ordered, cfg)
