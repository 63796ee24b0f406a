from typing import Callable, Dict, List, Sequence
import logging
from collections import Counter, defaultdict

from src.errors import ConfigurationError, RecordValidationError
from src.geo.kinematics import KNOTS_TO_MS, RawRecord, to_utm

logger = logging.getLogger(__name__)


class DataValidator:
    """Stream-level checks on parsed AIS records, beyond per-row bounds."""

    def __init__(self, max_implied_speed_kn: float = 60.0):
        self.max_implied_speed = max_implied_speed_kn * KNOTS_TO_MS
        self.schema_validators: Dict[str, Callable[[Sequence[RawRecord]], List[str]]] = {
            'inference': self._validate_inference,
            'labeled': self._validate_labeled,
        }

    def validate_data(self, records: Sequence[RawRecord], target: str) -> List[str]:
        """Problems found for `target`; an empty list means the stream is usable."""
        if target not in self.schema_validators:
            raise ConfigurationError(f"Unknown target schema: {target}")
        problems = self.schema_validators[target](records)
        for problem in problems[:20]:
            logger.warning(problem)
        if problems:
            logger.warning(f"{len(problems)} problems found validating {len(records)} records for {target}")
        else:
            logger.info(f"Data validation successful for target: {target}")
        return problems

    def _validate_inference(self, records: Sequence[RawRecord]) -> List[str]:
        counts = Counter(r.point_id for r in records)
        return [f"point_id {pid} appears {n} times" for pid, n in sorted(counts.items()) if n > 1]

    def _validate_labeled(self, records: Sequence[RawRecord]) -> List[str]:
        problems = self._validate_inference(records)
        unlabeled = sum(r.track_id is None for r in records)
        if unlabeled:
            problems.append(f"{unlabeled} records have no track_id")

        tracks: Dict[int, List[RawRecord]] = defaultdict(list)
        for r in records:
            if r.track_id is not None:
                tracks[r.track_id].append(r)
        for track_id, rows in sorted(tracks.items()):
            problems.extend(self._check_track(track_id, sorted(rows, key=lambda r: (r.time, r.point_id))))
        return problems

    def _check_track(self, track_id: int, rows: List[RawRecord]) -> List[str]:
        """Flag same-time duplicates and jumps no vessel could make."""
        problems = []
        zone = None
        previous = None
        for r in rows:
            try:
                x, y, zone = to_utm(r.lat, r.lon, zone)
            except RecordValidationError as e:
                problems.append(f"track {track_id} point {r.point_id}: {e}")
                continue
            if previous is not None:
                dt = r.time - previous[0]
                if dt <= 0:
                    problems.append(f"track {track_id}: points {previous[3]} and {r.point_id} share t={r.time}")
                elif ((x - previous[1]) ** 2 + (y - previous[2]) ** 2) ** 0.5 / dt > self.max_implied_speed:
                    problems.append(f"track {track_id}: implausible jump before point {r.point_id}")
            previous = (r.time, x, y, r.point_id)
        return problems
