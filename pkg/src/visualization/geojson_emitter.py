from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Sequence
import json
import logging
from collections import defaultdict
from pathlib import Path

from matplotlib import colormaps
from matplotlib.colors import to_hex

from src.evaluation.posit_metrics import PositScore
from src.geo.kinematics import RawRecord

if TYPE_CHECKING:
    from src.tracking.tracker import LabeledStream

logger = logging.getLogger(__name__)

IDENTITY_COLORMAP = 'tab20'
SCORE_COLORMAP = 'viridis'  # 0 neighbors right = dark purple, 1 = blue, 2 = yellow


class GeoJson:
    def __init__(self):
        self.data: Dict[str, Any] = {"type": "FeatureCollection", "features": []}

    def add_point(self, lon: float, lat: float, properties: Dict[str, Any]) -> Dict[str, Any]:
        feature = {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": properties,
        }
        self.data["features"].append(feature)
        return feature

    def add_line_string(self, coordinates: List[List[float]], properties: Dict[str, Any]) -> Dict[str, Any]:
        if len(coordinates) == 1:
            # a LineString needs two positions
            coordinates = coordinates * 2
        feature = {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coordinates},
            "properties": properties,
        }
        self.data["features"].append(feature)
        return feature


def identity_color(index: int) -> str:
    cmap = colormaps[IDENTITY_COLORMAP]
    return to_hex(cmap(index % cmap.N))


def score_color(earned: int, available: int = 2) -> str:
    return to_hex(colormaps[SCORE_COLORMAP](earned / available if available else 1.0))


def emit_geojson(
    stream: "LabeledStream",
    records: Sequence[RawRecord],
    score: Optional[PositScore] = None
) -> Dict[str, Any]:
    """Tracks as colored line strings, or posits colored by earned points when `score` is given."""
    position: Mapping[int, RawRecord] = {r.point_id: r for r in records}
    doc = GeoJson()

    if score is None:
        tracks: Dict[int, List[List[float]]] = defaultdict(list)
        order = sorted(zip(stream.times, stream.point_ids, stream.track_ids))
        for _, point_id, track_id in order:
            r = position[point_id]
            tracks[track_id].append([round(r.lon, 6), round(r.lat, 6)])
        for index, track_id in enumerate(sorted(tracks)):
            doc.add_line_string(tracks[track_id], {
                "track_id": int(track_id),
                "posits": len(tracks[track_id]),
                "color": identity_color(index),
            })
    else:
        earned = dict(zip(score.per_posit['point_id'], score.per_posit['earned']))
        available = dict(zip(score.per_posit['point_id'], score.per_posit['available']))
        for point_id, track_id in zip(stream.point_ids, stream.track_ids):
            r = position[point_id]
            doc.add_point(round(r.lon, 6), round(r.lat, 6), {
                "point_id": int(point_id),
                "track_id": int(track_id),
                "earned": int(earned[point_id]),
                "color": score_color(int(earned[point_id]), int(available[point_id])),
            })

    logger.info(f"Built GeoJSON with {len(doc.data['features'])} features")
    return doc.data


def write_geojson(document: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(document, sort_keys=True, separators=(',', ':')))
    logger.info(f"Wrote map to {path}")
    return path
