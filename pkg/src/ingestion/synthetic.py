"""Synthetic labeled AIS traffic for benchmarks and tests.

Vessels move in piecewise legs: each leg is either constant velocity or a
constant turn rate, and every report is produced by projecting the previous
state with the active leg's model, so consecutive reports of a vessel are
exactly consistent with that model before rounding. Three scenario kinds
are mixed: open water, a two-way channel leaving the port, and a port whose
vessels dwell at slips and shuttle between nearby docks.
"""
from typing import Any, Dict, List, Tuple
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from src.errors import ConfigurationError
from src.geo.kinematics import (
    CV,
    KNOTS_TO_MS,
    Posit,
    ProjectionModel,
    RawRecord,
    from_utm,
    project,
    psi_to_cog,
    to_utm,
)

logger = logging.getLogger(__name__)

SCENARIOS = ('open', 'channel', 'port', 'mixed')
MMSI_BASE = 338000000

Leg = Tuple[Posit, ProjectionModel]


@dataclass(frozen=True)
class SynthConfig:
    n_vessels: int = 200
    days: int = 3
    report_interval: float = 300.0  # s between raw reports
    lifetime_hours: Tuple[float, float] = (2.0, 24.0)
    speed_knots: Tuple[float, float] = (4.0, 16.0)
    max_turn_rate: float = math.radians(1.0) / 60.0  # rad/s
    mean_leg_hours: float = 1.5
    scenario: str = 'mixed'
    mix: Tuple[float, float, float] = (0.5, 0.3, 0.2)  # open, channel, port
    origin_lat: float = 28.0
    origin_lon: float = -95.0
    open_radius: float = 150000.0  # m
    channel_length: float = 60000.0
    channel_width: float = 800.0
    port_radius: float = 3000.0
    n_docks: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"Unknown scenario {self.scenario}, expected one of {SCENARIOS}")
        if self.n_vessels < 0 or self.days < 1 or self.report_interval <= 0:
            raise ConfigurationError("n_vessels >= 0, days >= 1 and report_interval > 0 required")
        if not 0 < self.lifetime_hours[0] <= self.lifetime_hours[1]:
            raise ConfigurationError("lifetime_hours must be an increasing positive range")
        if not 0 <= self.speed_knots[0] <= self.speed_knots[1]:
            raise ConfigurationError("speed_knots must be an increasing non-negative range")
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ConfigurationError("mix needs three non-negative weights")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "SynthConfig":
        defaults = cls()
        return cls(
            n_vessels=config.get('n_vessels', defaults.n_vessels),
            days=config.get('days', defaults.days),
            report_interval=config.get('report_interval', defaults.report_interval),
            lifetime_hours=tuple(config.get('lifetime_hours', defaults.lifetime_hours)),
            speed_knots=tuple(config.get('speed_knots', defaults.speed_knots)),
            max_turn_rate=math.radians(config.get('max_turn_rate_deg_min', 1.0)) / 60.0,
            mean_leg_hours=config.get('mean_leg_hours', defaults.mean_leg_hours),
            scenario=config.get('scenario', defaults.scenario),
            mix=tuple(config.get('mix', defaults.mix)),
            origin_lat=config.get('origin_lat', defaults.origin_lat),
            origin_lon=config.get('origin_lon', defaults.origin_lon),
            open_radius=config.get('open_radius', defaults.open_radius),
            channel_length=config.get('channel_length', defaults.channel_length),
            channel_width=config.get('channel_width', defaults.channel_width),
            port_radius=config.get('port_radius', defaults.port_radius),
            n_docks=config.get('n_docks', defaults.n_docks),
            seed=config.get('seed', defaults.seed),
        )


class TrafficGenerator:
    """Simulates vessel legs in a metric frame centered on the port."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        x0, y0, self.zone = to_utm(cfg.origin_lat, cfg.origin_lon)
        self.origin = np.array([x0, y0])
        angles = np.linspace(0.0, 2 * math.pi, cfg.n_docks, endpoint=False)
        self.docks = self.origin + 0.5 * cfg.port_radius * np.column_stack([np.cos(angles), np.sin(angles)])

    def _speed(self) -> float:
        lo, hi = self.cfg.speed_knots
        return float(self.rng.uniform(lo, hi)) * KNOTS_TO_MS

    def _leg_steps(self) -> int:
        seconds = self.rng.exponential(self.cfg.mean_leg_hours * 3600.0)
        return max(1, int(round(seconds / self.cfg.report_interval)))

    def _maneuver(self) -> ProjectionModel:
        if self.rng.random() < 0.5:
            return CV
        return ProjectionModel.ctrv(float(self.rng.uniform(-1.0, 1.0)) * self.cfg.max_turn_rate)

    def _roll(self, state: Posit, model: ProjectionModel, steps: int, limit: int, out: List[Leg]) -> Posit:
        for _ in range(min(steps, limit - len(out))):
            out.append((state, model))
            state = project(state, self.cfg.report_interval, model)
        return state

    def simulate_open(self, start: Posit, n: int) -> List[Leg]:
        legs: List[Leg] = []
        state = start
        while len(legs) < n:
            state = self._roll(replace(state, v=self._speed()), self._maneuver(), self._leg_steps(), n, legs)
        return legs

    def simulate_channel(self, start: Posit, n: int) -> List[Leg]:
        legs: List[Leg] = []
        state = start
        while len(legs) < n:
            model = ProjectionModel.ctrv(float(self.rng.normal(0.0, 0.05)) * self.cfg.max_turn_rate)
            state = self._roll(replace(state, v=self._speed()), model, self._leg_steps(), n, legs)
        return legs

    def simulate_port(self, start: Posit, n: int) -> List[Leg]:
        """Dwell at a slip, then shuttle at low speed to another dock, repeatedly."""
        legs: List[Leg] = []
        state = start
        dt = self.cfg.report_interval
        while len(legs) < n:
            state = self._roll(replace(state, v=0.0), CV, self._leg_steps(), n, legs)
            target = self.docks[int(self.rng.integers(len(self.docks)))]
            target = target + self.rng.normal(0.0, 60.0, size=2)
            dx, dy = target[0] - state.x, target[1] - state.y
            distance = math.hypot(dx, dy)
            if distance < 1.0:
                continue
            steps = max(1, int(math.ceil(distance / (2.5 * dt))))  # at most ~5 kn
            heading = math.atan2(dy, dx)
            state = self._roll(replace(state, v=distance / (steps * dt), psi=heading), CV, steps, n, legs)
        return legs

    def _start(self, kind: str, t: float, source_id: int) -> Posit:
        cfg = self.cfg
        if kind == 'port':
            dock = self.docks[int(self.rng.integers(len(self.docks)))] + self.rng.normal(0.0, 60.0, size=2)
            return Posit(t, float(dock[0]), float(dock[1]), 0.0, float(self.rng.uniform(-math.pi, math.pi)),
                         self.zone, source_id)
        if kind == 'channel':
            outbound = self.rng.random() < 0.5
            along = float(self.rng.uniform(0.0, 0.3 if outbound else 1.0)) * cfg.channel_length
            across = float(self.rng.uniform(-0.5, 0.5)) * cfg.channel_width
            x, y = self.origin + np.array([cfg.port_radius + along, across])
            return Posit(t, float(x), float(y), 0.0, 0.0 if outbound else math.pi, self.zone, source_id)
        r = cfg.open_radius * math.sqrt(float(self.rng.uniform(0.2, 1.0)))
        bearing = float(self.rng.uniform(-math.pi, math.pi))
        x, y = self.origin + r * np.array([math.cos(bearing), math.sin(bearing)])
        return Posit(t, float(x), float(y), 0.0, float(self.rng.uniform(-math.pi, math.pi)), self.zone, source_id)

    def simulate_vessel(self, kind: str, vessel: int) -> List[Leg]:
        """Posits of one vessel, each paired with the model that produces the next."""
        cfg = self.cfg
        duration = cfg.days * 86400.0
        lifetime = min(duration - cfg.report_interval, float(self.rng.uniform(*cfg.lifetime_hours)) * 3600.0)
        t0 = float(np.floor(self.rng.uniform(0.0, duration - lifetime)))
        n = max(2, int(lifetime // cfg.report_interval))
        start = self._start(kind, t0, MMSI_BASE + vessel)
        simulate = {'open': self.simulate_open, 'channel': self.simulate_channel, 'port': self.simulate_port}[kind]
        return simulate(start, n)

    def scenario_of(self) -> str:
        if self.cfg.scenario != 'mixed':
            return self.cfg.scenario
        weights = np.asarray(self.cfg.mix, dtype=float)
        return ('open', 'channel', 'port')[int(self.rng.choice(3, p=weights / weights.sum()))]

    def to_record(self, posit: Posit, track_id: int) -> RawRecord:
        lat, lon = from_utm(posit.x, posit.y, self.zone)
        return RawRecord(
            point_id=-1,
            track_id=track_id,
            time=float(round(posit.t)),
            lat=round(lat, 6),
            lon=round(lon, 6),
            sog=round(posit.v / KNOTS_TO_MS, 1),
            cog=round(psi_to_cog(posit.psi), 1) % 360.0,
        )

    def generate(self) -> Tuple[List[RawRecord], Dict[int, str]]:
        records: List[RawRecord] = []
        scenarios: Dict[int, str] = {}
        for vessel in range(self.cfg.n_vessels):
            kind = self.scenario_of()
            track_id = MMSI_BASE + vessel
            scenarios[track_id] = kind
            records.extend(self.to_record(p, track_id) for p, _ in self.simulate_vessel(kind, vessel))

        records.sort(key=lambda r: (r.time, r.track_id))
        records = [replace(r, point_id=i) for i, r in enumerate(records)]
        logger.info(
            f"Generated {len(records)} reports for {self.cfg.n_vessels} vessels over {self.cfg.days} days "
            f"({self.cfg.scenario} scenario)"
        )
        return records, scenarios


def generate_synthetic(cfg: SynthConfig) -> List[RawRecord]:
    """Labeled raw reports, deterministic for a given config and seed."""
    records, _ = TrafficGenerator(cfg).generate()
    return records
