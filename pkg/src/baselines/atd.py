"""Challenge baseline distance: an accelerate-then-decelerate speed profile per link.

Between two reports the vessel ramps linearly from v1 up to a peak v* at t*,
then back down to v2, with one slope magnitude m* so that the area under the
speed curve equals the observed displacement. The link distance penalizes the
mismatch between m* and the plain speed change, the course change rate, and
the change of that rate against the track's previous segment.
"""
from typing import Any, Dict, List, Optional, Sequence
import logging
import math
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigurationError, InvalidPairError
from src.geo.kinematics import Posit, wrap_course
from src.tracking.tracker import LabeledStream, check_sorted

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtdSegmentState:
    delta_c: float  # wrapped course change over the previous segment
    delta_t: float


@dataclass(frozen=True)
class AtdFit:
    v_star: float
    t_star: float
    m_star: float
    clamped: bool


@dataclass(frozen=True)
class AtdConfig:
    window: float = 6 * 3600.0
    v_max: float = 25.0
    max_distance: float = 1.0

    def __post_init__(self):
        if self.window <= 0 or self.v_max <= 0 or self.max_distance <= 0:
            raise ConfigurationError("ATD window, v_max and max_distance must be positive")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "AtdConfig":
        return cls(
            window=config.get('window', 6 * 3600.0),
            v_max=config.get('v_max', 25.0),
            max_distance=config.get('max_distance', 1.0),
        )


def _peak_speed(v1, v2, displacement, dt):
    mean = 0.5 * (v1 + v2)
    a = displacement / dt
    return a + np.sqrt((a - mean) ** 2 + 0.25 * (v1 - v2) ** 2)


def fit_profile(p1: Posit, p2: Posit) -> AtdFit:
    """Closed-form triangular profile meeting the traversal constraint."""
    dt = p2.t - p1.t
    if dt <= 0:
        raise InvalidPairError(f"profile fit needs t2 > t1, got dt={dt}")
    displacement = math.hypot(p2.x - p1.x, p2.y - p1.y)
    v_star = float(_peak_speed(p1.v, p2.v, displacement, dt))
    clamped = v_star < max(p1.v, p2.v)
    if clamped:
        v_star = max(p1.v, p2.v)
    m_star = (2.0 * v_star - p1.v - p2.v) / dt
    t_star = p1.t + (v_star - p1.v) / m_star if m_star > 0 else p1.t + 0.5 * dt
    return AtdFit(v_star, t_star, m_star, clamped)


def atd_distance(p1: Posit, p2: Posit, prev: Optional[AtdSegmentState] = None) -> float:
    """Three-term baseline distance for linking p2 after p1."""
    fit = fit_profile(p1, p2)
    dt = p2.t - p1.t
    delta_c = wrap_course(p2.psi - p1.psi)
    accel_term = abs((fit.m_star - (p2.v - p1.v) / dt) * (fit.t_star - p1.t))
    turn_term = abs(delta_c) / dt
    history_term = 0.0
    if prev is not None:
        history_term = abs((prev.delta_c / prev.delta_t - delta_c / dt) / prev.delta_t)
    return accel_term + turn_term + history_term


def atd_distances(
    query: Posit,
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
    psi: np.ndarray,
    t: np.ndarray,
    prev_dc: np.ndarray,
    prev_dt: np.ndarray
) -> np.ndarray:
    """Vectorized atd_distance from endpoint arrays to one query; NaN prev_dt means no history."""
    dt = query.t - t
    safe_dt = np.where(dt > 0, dt, 1.0)
    displacement = np.hypot(query.x - x, query.y - y)
    v_star = np.maximum(_peak_speed(v, query.v, displacement, safe_dt), np.maximum(v, query.v))
    m_star = (2.0 * v_star - v - query.v) / safe_dt
    ramp = np.where(m_star > 0, (v_star - v) / np.where(m_star > 0, m_star, 1.0), 0.5 * safe_dt)

    delta_c = np.arctan2(np.sin(query.psi - psi), np.cos(query.psi - psi))
    accel_term = np.abs((m_star - (query.v - v) / safe_dt) * ramp)
    turn_term = np.abs(delta_c) / safe_dt
    has_prev = np.isfinite(prev_dt)
    pdt = np.where(has_prev, prev_dt, 1.0)
    history_term = np.where(has_prev, np.abs((prev_dc / pdt - delta_c / safe_dt) / pdt), 0.0)
    return np.where(dt > 0, accel_term + turn_term + history_term, np.inf)


class AtdTracker:
    """Chronological greedy linker under the baseline distance."""

    def __init__(self, cfg: AtdConfig):
        self.cfg = cfg

    def run(self, posits: Sequence[Posit]) -> LabeledStream:
        """Link each posit to the compatible endpoint at the smallest distance, or start a track."""
        check_sorted(posits)
        stream = LabeledStream()
        last: Dict[int, Posit] = {}
        prev: Dict[int, AtdSegmentState] = {}
        next_track = 0

        for query in posits:
            stale = [tid for tid, p in last.items() if query.t - p.t > self.cfg.window]
            for tid in stale:
                del last[tid]
                prev.pop(tid, None)

            track = None
            if last:
                ids = np.fromiter(last.keys(), dtype=np.int64, count=len(last))
                ends = list(last.values())
                x = np.array([p.x for p in ends])
                y = np.array([p.y for p in ends])
                t = np.array([p.t for p in ends])
                d = atd_distances(
                    query, x, y,
                    np.array([p.v for p in ends]),
                    np.array([p.psi for p in ends]),
                    t,
                    np.array([prev[i].delta_c if i in prev else np.nan for i in ids]),
                    np.array([prev[i].delta_t if i in prev else np.nan for i in ids]),
                )
                dt = query.t - t
                reachable = np.hypot(query.x - x, query.y - y) <= self.cfg.v_max * np.where(dt > 0, dt, 0.0)
                d = np.where(reachable & (d <= self.cfg.max_distance), d, np.inf)
                if np.isfinite(d).any():
                    best = np.lexsort((ids, d))[0]
                    track = int(ids[best])

            if track is None:
                track = next_track
                next_track += 1
            else:
                anchor = last[track]
                prev[track] = AtdSegmentState(wrap_course(query.psi - anchor.psi), query.t - anchor.t)
            last[track] = query
            stream.append(query.source_id, query.t, track)

        logger.info(f"ATD baseline linked {len(posits)} posits into {next_track} tracks")
        return stream
