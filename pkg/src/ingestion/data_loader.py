from typing import Dict, List, Mapping, Optional, Sequence
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from src.errors import RecordValidationError
from src.geo.kinematics import RawRecord

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
INPUT_COLUMNS = ('point_id', 'track_id', 'time', 'lat', 'lon', 'speed', 'course')
OUTPUT_COLUMNS = ('point_id', 'track_id', 'day', 'time', 'lat', 'lon', 'speed', 'course')


@dataclass
class ParseResult:
    records: List[RawRecord] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)


def parse_clock(value: str) -> int:
    """'HH:MM:SS' to seconds within the day."""
    parts = value.strip().split(':')
    if len(parts) != 3:
        raise ValueError(f"time {value!r} is not HH:MM:SS")
    hours, minutes, seconds = (int(p) for p in parts)
    if not (0 <= hours < 24 and 0 <= minutes < 60 and 0 <= seconds < 60):
        raise ValueError(f"time {value!r} out of range")
    return hours * 3600 + minutes * 60 + seconds


def format_clock(seconds_of_day: int) -> str:
    hours, rest = divmod(int(seconds_of_day), 3600)
    minutes, seconds = divmod(rest, 60)
    return f"{hours:02d}:{minutes:02d}:{seconds:02d}"


def _parse_row(row: Mapping[str, str], default_day: int) -> RawRecord:
    track = row['track_id'].strip()
    day_text = row.get('day', '').strip() if 'day' in row else ''
    day = int(day_text) if day_text else default_day
    values = {name: float(row[name]) for name in ('lat', 'lon', 'speed', 'course')}
    if not all(math.isfinite(v) for v in values.values()):
        raise ValueError("non-finite numeric field")
    record = RawRecord(
        point_id=int(row['point_id']),
        track_id=int(track) if track else None,
        time=float(day * SECONDS_PER_DAY + parse_clock(row['time'])),
        lat=values['lat'],
        lon=values['lon'],
        sog=values['speed'],
        cog=values['course'],
    )
    record.validate()
    return record


def parse_csv(path: Path, default_day: int = 0) -> ParseResult:
    """Parse an AIS CSV; bad rows are skipped and reported with their line number."""
    path = Path(path)
    result = ParseResult()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        logger.info(f"{path} is empty")
        return result
    except Exception as e:
        logger.error(f"Error reading {path}: {e}")
        raise

    missing = [c for c in INPUT_COLUMNS if c not in frame.columns]
    if missing:
        raise RecordValidationError(f"{path}: missing columns {missing}")

    for index, row in enumerate(frame.to_dict('records')):
        line = index + 2  # header is line 1
        try:
            result.records.append(_parse_row(row, default_day))
        except (ValueError, RecordValidationError) as e:
            message = f"{path}:{line}: {e}"
            logger.warning(f"Skipping row {message}")
            result.errors.append(message)

    logger.info(f"Parsed {len(result.records)} records from {path}, skipped {result.skipped}")
    return result


def parse_files(paths: Sequence[Path]) -> ParseResult:
    """Concatenate day files; a file without a day column is day i for the i-th path."""
    combined = ParseResult()
    for day, path in enumerate(paths):
        parsed = parse_csv(path, default_day=day)
        combined.records.extend(parsed.records)
        combined.errors.extend(parsed.errors)
    return combined


def records_frame(
    records: Sequence[RawRecord],
    predicted: Optional[Mapping[int, int]] = None
) -> pd.DataFrame:
    rows = []
    for r in records:
        day, clock = divmod(int(round(r.time)), SECONDS_PER_DAY)
        row = {
            'point_id': str(r.point_id),
            'track_id': '' if r.track_id is None else str(r.track_id),
            'day': str(day),
            'time': format_clock(clock),
            'lat': f"{r.lat:.6f}",
            'lon': f"{r.lon:.6f}",
            'speed': f"{r.sog:.1f}",
            'course': f"{r.cog:.1f}",
        }
        if predicted is not None:
            row['predicted_track_id'] = str(predicted[r.point_id])
        rows.append(row)
    columns = list(OUTPUT_COLUMNS) + (['predicted_track_id'] if predicted is not None else [])
    return pd.DataFrame(rows, columns=columns)


def write_csv(
    records: Sequence[RawRecord],
    path: Path,
    predicted: Optional[Mapping[int, int]] = None
) -> Path:
    """Write records in (time, point_id) order with pinned numeric formats."""
    ordered = sorted(records, key=lambda r: (r.time, r.point_id))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(ordered, predicted).to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote {len(ordered)} records to {path}")
    return path


def truth_labels(records: Sequence[RawRecord]) -> Dict[int, int]:
    """point_id -> ground-truth track id; every record must carry one."""
    missing = [r.point_id for r in records if r.track_id is None]
    if missing:
        raise RecordValidationError(f"{len(missing)} records lack a track_id, e.g. point {missing[0]}")
    return {r.point_id: r.track_id for r in records}


def read_predictions(path: Path) -> pd.DataFrame:
    """Relabeled CSV as point_id, t, predicted_track_id for scoring."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if 'predicted_track_id' not in frame.columns:
        raise RecordValidationError(f"{path} has no predicted_track_id column")
    parsed = parse_csv(path)
    if parsed.errors:
        raise RecordValidationError(f"{path}: {parsed.skipped} malformed rows, first: {parsed.errors[0]}")
    t = {r.point_id: r.time for r in parsed.records}
    point_ids = frame['point_id'].astype(int)
    return pd.DataFrame({
        'point_id': point_ids,
        't': point_ids.map(t),
        'predicted_track_id': frame['predicted_track_id'].astype(int),
    })
