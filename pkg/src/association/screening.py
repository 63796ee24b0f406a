from typing import Any, Callable, Dict, List, Optional, Tuple
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from src.association.gating import (
    CandidateScore,
    GateConfig,
    ScoreConfig,
    covariance,
    score_links,
    score_new,
)
from src.errors import ConfigurationError, ConsistencyError
from src.geo.kinematics import Posit, estimate_turn_rate

logger = logging.getLogger(__name__)

NEW_VESSEL = -1


@dataclass(frozen=True)
class ScreeningConfig:
    k: int = 16
    v_max: float = 25.0
    cell_size: float = 50_000.0
    use_turn_rate: bool = True
    max_turn_rate: float = 0.002  # rad/s; faster estimates are treated as noise
    history: int = 5
    use_index: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        if self.v_max <= 0 or self.cell_size <= 0 or self.history < 2:
            raise ConfigurationError("v_max and cell_size must be positive, history >= 2")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ScreeningConfig":
        return cls(
            k=config.get('k', 16),
            v_max=config.get('v_max', 25.0),
            cell_size=config.get('cell_size', 50_000.0),
            use_turn_rate=config.get('use_turn_rate', True),
            max_turn_rate=config.get('max_turn_rate', 0.002),
            history=config.get('history', 5),
            use_index=config.get('use_index', True),
        )


@dataclass
class ScreenResult:
    """Top-k gated candidates for one query plus the New Vessel score."""

    query_ref: int
    candidates: List[CandidateScore]
    new_vessel_score: float
    query_density: int
    truth_in_screen: Optional[bool] = None
    true_slot: Optional[int] = None

    @property
    def track_ids(self) -> List[int]:
        return [c.track_id for c in self.candidates]


class EndpointStore:
    """Active track endpoints held in parallel arrays plus an age-bucketed grid index.

    Endpoints are hashed into one uniform grid per commit-time bucket of
    `bucket_seconds`, so a query can bound the age, and with it the travel
    distance, of every endpoint in a bucket without touching the endpoints.
    """

    def __init__(
        self,
        cell_size: float = 50_000.0,
        density_radius: float = 10_000.0,
        history: int = 5,
        use_turn_rate: bool = True,
        max_turn_rate: float = 0.002,
        capacity: int = 256,
        bucket_seconds: Optional[float] = None
    ):
        self.cell_size = cell_size
        self.bucket_seconds = bucket_seconds or cell_size / 25.0
        self.density_radius = density_radius
        self.use_turn_rate = use_turn_rate
        self.max_turn_rate = max_turn_rate
        self._history_len = history

        self.x = np.zeros(capacity)
        self.y = np.zeros(capacity)
        self.v = np.zeros(capacity)
        self.psi = np.zeros(capacity)
        self.t = np.zeros(capacity)
        self.omega = np.full(capacity, np.nan)
        self.density_at_commit = np.zeros(capacity)
        self.track_of = np.full(capacity, -1, dtype=np.int64)
        self.active = np.zeros(capacity, dtype=bool)

        self._free: List[int] = list(range(capacity - 1, -1, -1))
        self._slot_of: Dict[int, int] = {}
        self._cell_of: Dict[int, Tuple[int, Tuple[int, int]]] = {}
        self._grids: Dict[int, Dict[Tuple[int, int], set]] = {}
        self._bucket_speed: Dict[int, float] = {}
        self._history: Dict[int, deque] = {}
        self._next_track_id = 0

    @classmethod
    def from_configs(cls, screening: ScreeningConfig, scoring: ScoreConfig) -> "EndpointStore":
        return cls(
            cell_size=screening.cell_size,
            density_radius=scoring.r_loc,
            history=screening.history,
            use_turn_rate=screening.use_turn_rate,
            max_turn_rate=screening.max_turn_rate,
            bucket_seconds=screening.cell_size / screening.v_max,
        )

    def __len__(self) -> int:
        return len(self._slot_of)

    def __contains__(self, track_id: int) -> bool:
        return track_id in self._slot_of

    @property
    def tracks_created(self) -> int:
        return self._next_track_id

    def track_ids(self) -> List[int]:
        return sorted(self._slot_of)

    def endpoint(self, track_id: int) -> Posit:
        return self._history[track_id][-1]

    def history(self, track_id: int) -> List[Posit]:
        """Most recent posits of a track, oldest first."""
        return list(self._history[track_id])

    def active_slots(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def _cells_near(self, grid: Dict[Tuple[int, int], set], cx: int, cy: int, span: int) -> List[int]:
        slots: List[int] = []
        if (2 * span + 1) ** 2 < len(grid):
            for i in range(cx - span, cx + span + 1):
                for j in range(cy - span, cy + span + 1):
                    slots.extend(grid.get((i, j), ()))
        else:
            for (i, j), members in grid.items():
                if abs(i - cx) <= span and abs(j - cy) <= span:
                    slots.extend(members)
        return slots

    def slots_near(self, x: float, y: float, radius: float) -> np.ndarray:
        """Slots whose grid cell may hold an endpoint within `radius`."""
        span = int(math.ceil(radius / self.cell_size))
        cx, cy = self._cell(x, y)
        slots: List[int] = []
        for grid in self._grids.values():
            slots.extend(self._cells_near(grid, cx, cy, span))
        return np.array(sorted(slots), dtype=np.int64)

    def candidate_slots(
        self,
        t: float,
        x: float,
        y: float,
        reach: Callable[[float, float], float]
    ) -> np.ndarray:
        """Slots that may lie within `reach(age, speed)` of (x, y) at time t.

        Each bucket is gathered with the radius of its oldest possible
        endpoint and its fastest committed speed.
        """
        cx, cy = self._cell(x, y)
        slots: List[int] = []
        for bucket, grid in self._grids.items():
            age = max(0.0, t - bucket * self.bucket_seconds)
            span = int(math.ceil(reach(age, self._bucket_speed[bucket]) / self.cell_size))
            slots.extend(self._cells_near(grid, cx, cy, span))
        return np.array(sorted(slots), dtype=np.int64)

    def density(self, x: float, y: float, radius: float, exclude_slot: int = -1) -> int:
        slots = self.active_slots()
        if exclude_slot >= 0:
            slots = slots[slots != exclude_slot]
        if slots.size == 0:
            return 0
        d2 = (self.x[slots] - x) ** 2 + (self.y[slots] - y) ** 2
        return int(np.count_nonzero(d2 <= radius * radius))

    def commit(self, query: Posit, track_id: Optional[int] = None) -> int:
        """Continue `track_id` with `query`, or start a new track when None."""
        if track_id is None or track_id == NEW_VESSEL:
            track_id = self._next_track_id
            self._next_track_id += 1
            slot = self._allocate()
            previous = None
            self._history[track_id] = deque(maxlen=self._history_len)
            self._slot_of[track_id] = slot
            self.track_of[slot] = track_id
            self.active[slot] = True
        else:
            if track_id not in self._slot_of:
                raise ConsistencyError(f"cannot continue absent track {track_id}")
            slot = self._slot_of[track_id]
            previous = self._history[track_id][-1]
            self._unindex(slot)

        self.density_at_commit[slot] = self.density(
            query.x, query.y, self.density_radius, exclude_slot=slot
        )
        self.x[slot], self.y[slot] = query.x, query.y
        self.v[slot], self.psi[slot], self.t[slot] = query.v, query.psi, query.t
        self.omega[slot] = self._turn_rate(previous, query)
        self._history[track_id].append(query)
        self._index(slot, query)
        return track_id

    def retire(self, now: float, max_age: float) -> int:
        """Drop endpoints not updated within `max_age` seconds of `now`."""
        slots = self.active_slots()
        stale = slots[self.t[slots] < now - max_age]
        for slot in stale:
            track_id = int(self.track_of[slot])
            self._unindex(int(slot))
            del self._slot_of[track_id]
            del self._history[track_id]
            self.active[slot] = False
            self.track_of[slot] = -1
            self._free.append(int(slot))
        if stale.size:
            logger.debug(f"Retired {stale.size} endpoints at t={now}")
        return int(stale.size)

    def _index(self, slot: int, posit: Posit):
        bucket = int(math.floor(posit.t / self.bucket_seconds))
        cell = self._cell(posit.x, posit.y)
        self._cell_of[slot] = (bucket, cell)
        self._grids.setdefault(bucket, defaultdict(set))[cell].add(slot)
        # speeds only ever raise the bound; it resets when the bucket empties
        self._bucket_speed[bucket] = max(self._bucket_speed.get(bucket, 0.0), posit.v)

    def _unindex(self, slot: int):
        bucket, cell = self._cell_of.pop(slot)
        grid = self._grids[bucket]
        grid[cell].discard(slot)
        if not grid[cell]:
            del grid[cell]
        if not grid:
            del self._grids[bucket]
            del self._bucket_speed[bucket]

    def _turn_rate(self, previous: Optional[Posit], current: Posit) -> float:
        if not self.use_turn_rate:
            return np.nan
        omega = estimate_turn_rate(previous, current)
        if omega is None or abs(omega) > self.max_turn_rate:
            return np.nan
        return omega

    def _cell(self, x: float, y: float) -> Tuple[int, int]:
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    def _allocate(self) -> int:
        if not self._free:
            self._grow()
        return self._free.pop()

    def _grow(self):
        old = self.x.size
        new = old * 2
        for name in ('x', 'y', 'v', 'psi', 't', 'density_at_commit'):
            setattr(self, name, np.concatenate([getattr(self, name), np.zeros(old)]))
        self.omega = np.concatenate([self.omega, np.full(old, np.nan)])
        self.track_of = np.concatenate([self.track_of, np.full(old, -1, dtype=np.int64)])
        self.active = np.concatenate([self.active, np.zeros(old, dtype=bool)])
        self._free.extend(range(new - 1, old - 1, -1))


class CandidateScreener:
    """Physics-based top-k ancestor screening over an EndpointStore."""

    def __init__(self, gate: GateConfig, scoring: ScoreConfig, config: ScreeningConfig):
        self.gate = gate
        self.scoring = scoring
        self.config = config

    def screen(
        self,
        query: Posit,
        store: EndpointStore,
        k: Optional[int] = None,
        true_predecessor: Optional[int] = None,
        use_index: Optional[bool] = None
    ) -> ScreenResult:
        """Rank gated endpoints by link score and keep the best k.

        `true_predecessor` is the source id of the query's true previous posit,
        NEW_VESSEL when the query truly starts a track, or None without truth.
        """
        k = k or self.config.k
        use_index = self.config.use_index if use_index is None else use_index

        if use_index and len(store):
            slots = store.candidate_slots(query.t, query.x, query.y, self._prune_radius)
        else:
            slots = store.active_slots()

        candidates: List[CandidateScore] = []
        if slots.size:
            scores = score_links(
                query,
                store.x[slots],
                store.y[slots],
                store.v[slots],
                store.psi[slots],
                store.t[slots],
                store.omega[slots],
                store.density_at_commit[slots],
                self.gate,
                self.scoring,
            )
            finite = np.flatnonzero(np.isfinite(scores.score))
            tracks = store.track_of[slots]
            order = finite[np.lexsort((tracks[finite], scores.score[finite]))][:k]
            for row in order:
                track_id = int(tracks[row])
                omega = store.omega[slots[row]]
                candidates.append(CandidateScore(
                    track_id=track_id,
                    endpoint=store.endpoint(track_id),
                    dt=float(scores.dt[row]),
                    e_par=float(scores.e_par[row]),
                    e_perp=float(scores.e_perp[row]),
                    delta_c=float(scores.delta_c[row]),
                    v_req=float(scores.v_req[row]),
                    mahal_sq=float(scores.mahal_sq[row]),
                    angle=float(scores.angle[row]),
                    score=float(scores.score[row]),
                    passed_gates=True,
                    omega=None if np.isnan(omega) else float(omega),
                ))

        density = store.density(query.x, query.y, self.scoring.r_loc)
        result = ScreenResult(
            query_ref=query.source_id,
            candidates=candidates,
            new_vessel_score=score_new(query, density, self.scoring),
            query_density=density,
        )
        if true_predecessor is not None:
            self._mark_truth(result, true_predecessor)
        return result

    def _prune_radius(self, age: float, fastest: float) -> float:
        """Distance beyond which no endpoint this old can pass the ellipse gate."""
        age = max(0.0, min(age, self.gate.max_dt))
        var_par, _ = covariance(age, self.gate)
        return max(self.config.v_max, fastest) * age + self.gate.tau * math.sqrt(var_par)

    @staticmethod
    def _mark_truth(result: ScreenResult, true_predecessor: int):
        if true_predecessor == NEW_VESSEL:
            result.truth_in_screen = True
            result.true_slot = NEW_VESSEL
            return
        for slot, candidate in enumerate(result.candidates):
            if candidate.endpoint.source_id == true_predecessor:
                result.truth_in_screen = True
                result.true_slot = slot
                return
        result.truth_in_screen = False
