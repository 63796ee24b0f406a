from typing import Any, Dict, List, Sequence
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np

from src.errors import ConfigurationError, RecordValidationError
from src.geo.kinematics import RawRecord

logger = logging.getLogger(__name__)

METERS_PER_DEGREE_LAT = 111320.0


@dataclass(frozen=True)
class PreprocessConfig:
    interval: float = 1800.0  # s, one report kept per vessel per bucket
    position_noise: float = 30.0  # m
    time_jitter: float = 15.0  # s
    stop_speed: float = 0.5  # kn
    keep_stopped: float = 0.05

    def __post_init__(self):
        if self.interval <= 0:
            raise ConfigurationError("preprocess interval must be positive")
        if self.position_noise < 0 or self.time_jitter < 0:
            raise ConfigurationError("noise standard deviations must be non-negative")
        if not 0.0 <= self.keep_stopped <= 1.0:
            raise ConfigurationError("keep_stopped must lie in [0, 1]")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "PreprocessConfig":
        return cls(
            interval=config.get('interval', 1800.0),
            position_noise=config.get('position_noise', 30.0),
            time_jitter=config.get('time_jitter', 15.0),
            stop_speed=config.get('stop_speed', 0.5),
            keep_stopped=config.get('keep_stopped', 0.05),
        )


def downsample(rows: Sequence[RawRecord], interval: float) -> List[RawRecord]:
    """Earliest report of each interval bucket; `rows` sorted by time."""
    kept, seen = [], set()
    for r in rows:
        bucket = math.floor(r.time / interval)
        if bucket not in seen:
            seen.add(bucket)
            kept.append(r)
    return kept


def _perturb(r: RawRecord, rng: np.random.Generator, cfg: PreprocessConfig) -> RawRecord:
    dn, de = rng.normal(0.0, cfg.position_noise, size=2) if cfg.position_noise > 0 else (0.0, 0.0)
    jitter = rng.normal(0.0, cfg.time_jitter) if cfg.time_jitter > 0 else 0.0
    if dn == 0.0 and de == 0.0 and jitter == 0.0:
        return r
    lat = r.lat + dn / METERS_PER_DEGREE_LAT
    lon = r.lon + de / (METERS_PER_DEGREE_LAT * math.cos(math.radians(r.lat)))
    return replace(
        r,
        time=float(max(0, round(r.time + jitter))),
        lat=round(min(90.0, max(-90.0, lat)), 6),
        lon=round((lon + 180.0) % 360.0 - 180.0, 6),
    )


def preprocess(records: Sequence[RawRecord], cfg: PreprocessConfig, seed: int = 0) -> List[RawRecord]:
    """Downsample per vessel, drop most stopped reports, then add position noise and time jitter."""
    if any(r.track_id is None for r in records):
        raise RecordValidationError("preprocessing needs ground-truth track ids on every record")

    rng = np.random.default_rng(seed)
    by_track: Dict[int, List[RawRecord]] = defaultdict(list)
    for r in records:
        by_track[r.track_id].append(r)

    output: List[RawRecord] = []
    dropped_stopped = 0
    for track_id in sorted(by_track):
        rows = downsample(sorted(by_track[track_id], key=lambda r: (r.time, r.point_id)), cfg.interval)
        for r in rows:
            if r.sog < cfg.stop_speed and rng.random() >= cfg.keep_stopped:
                dropped_stopped += 1
                continue
            output.append(_perturb(r, rng, cfg))

    output.sort(key=lambda r: (r.time, r.point_id))
    logger.info(
        f"Preprocessed {len(records)} records to {len(output)} "
        f"({dropped_stopped} stopped reports removed)"
    )
    return output
