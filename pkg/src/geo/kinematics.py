from typing import Iterable, List, Optional, Tuple
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

from pyproj import Transformer

from src.errors import ConfigurationError, RecordValidationError

logger = logging.getLogger(__name__)

KNOTS_TO_MS = 0.514444
CTRV_EPSILON = 1e-9
UTM_MAX_ABS_LAT = 84.0


@dataclass(frozen=True)
class RawRecord:
    """One AIS report as it appears in the input CSV."""

    point_id: int
    track_id: Optional[int]
    time: float  # seconds since stream epoch
    lat: float
    lon: float
    sog: float  # knots
    cog: float  # degrees clockwise from north

    def validate(self) -> None:
        """Raise RecordValidationError when a field is out of bounds."""
        checks = [
            (-90.0 <= self.lat <= 90.0, f"lat {self.lat} outside [-90, 90]"),
            (-180.0 <= self.lon <= 180.0, f"lon {self.lon} outside [-180, 180]"),
            (self.sog >= 0.0, f"sog {self.sog} is negative"),
            (0.0 <= self.cog < 360.0, f"cog {self.cog} outside [0, 360)"),
            (math.isfinite(self.time), f"time {self.time} is not finite"),
        ]
        for ok, message in checks:
            if not ok:
                raise RecordValidationError(f"point {self.point_id}: {message}")


@dataclass(frozen=True)
class Posit:
    """Time-stamped kinematic report in metric UTM coordinates."""

    t: float
    x: float
    y: float
    v: float  # m/s
    psi: float  # radians from +x axis, (-pi, pi]
    zone: str = ""
    source_id: int = -1

    def step_to(self, other: "Posit") -> Tuple[float, float]:
        return other.x - self.x, other.y - self.y


class ModelKind(str, Enum):
    CV = "cv"
    CTRV = "ctrv"
    TANGENTIAL_ACCEL = "tangential_accel"


@dataclass(frozen=True)
class ProjectionModel:
    kind: ModelKind = ModelKind.CV
    omega: float = 0.0  # rad/s, CTRV only
    accel: float = 0.0  # m/s^2, tangential acceleration only

    def __post_init__(self):
        if not math.isfinite(self.omega) or not math.isfinite(self.accel):
            raise ConfigurationError("Projection model parameters must be finite")

    @classmethod
    def cv(cls) -> "ProjectionModel":
        return cls(ModelKind.CV)

    @classmethod
    def ctrv(cls, omega: float) -> "ProjectionModel":
        return cls(ModelKind.CTRV, omega=omega)

    @classmethod
    def tangential(cls, accel: float) -> "ProjectionModel":
        return cls(ModelKind.TANGENTIAL_ACCEL, accel=accel)


CV = ProjectionModel.cv()


@dataclass(frozen=True)
class LocalResidual:
    e_par: float
    e_perp: float
    delta_c: float


def utm_zone_for(lat: float, lon: float) -> str:
    """Standard UTM zone id such as '14N' for a geographic point."""
    number = int(math.floor((lon + 180.0) / 6.0)) % 60 + 1
    return f"{number}{'N' if lat >= 0 else 'S'}"


@lru_cache(maxsize=None)
def _transformer(zone: str, inverse: bool) -> Transformer:
    number, hemisphere = int(zone[:-1]), zone[-1].upper()
    epsg = (32600 if hemisphere == 'N' else 32700) + number
    if inverse:
        return Transformer.from_crs(f"EPSG:{epsg}", "EPSG:4326", always_xy=True)
    return Transformer.from_crs("EPSG:4326", f"EPSG:{epsg}", always_xy=True)


def to_utm(lat: float, lon: float, zone: Optional[str] = None) -> Tuple[float, float, str]:
    """Forward UTM projection; `zone` forces an anchor zone for the whole run."""
    if abs(lat) > UTM_MAX_ABS_LAT:
        raise RecordValidationError(f"latitude {lat} outside the UTM validity band")
    zone = zone or utm_zone_for(lat, lon)
    x, y = _transformer(zone, False).transform(lon, lat)
    return float(x), float(y), zone


def from_utm(x: float, y: float, zone: str) -> Tuple[float, float]:
    """Inverse UTM projection, returns (lat, lon) in degrees."""
    lon, lat = _transformer(zone, True).transform(x, y)
    return float(lat), float(lon)


def wrap_course(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    wrapped = math.atan2(math.sin(a), math.cos(a))
    return math.pi if wrapped <= -math.pi else wrapped


def cog_to_psi(cog_deg: float) -> float:
    """Compass course (clockwise from north) to math angle from +x."""
    return wrap_course(math.pi / 2.0 - math.radians(cog_deg))


def psi_to_cog(psi: float) -> float:
    return (90.0 - math.degrees(psi)) % 360.0


def to_local_frame(error: Tuple[float, float], psi: float) -> Tuple[float, float]:
    """Rotate a global error vector into the along/cross-track frame at `psi`."""
    dx, dy = error
    c, s = math.cos(psi), math.sin(psi)
    return c * dx + s * dy, -s * dx + c * dy


def local_residual(query: Posit, projected: Posit, anchor_psi: float) -> LocalResidual:
    e_par, e_perp = to_local_frame((query.x - projected.x, query.y - projected.y), anchor_psi)
    return LocalResidual(e_par, e_perp, wrap_course(query.psi - anchor_psi))


def project(p: Posit, dt: float, model: ProjectionModel = CV) -> Posit:
    """Project a posit by `dt` seconds (negative for backward projection)."""
    if dt == 0:
        return p

    if model.kind == ModelKind.CTRV and abs(model.omega) >= CTRV_EPSILON:
        w = model.omega
        psi_new = p.psi + w * dt
        x = p.x + p.v / w * (math.sin(psi_new) - math.sin(p.psi))
        y = p.y + p.v / w * (-math.cos(psi_new) + math.cos(p.psi))
        return replace(p, t=p.t + dt, x=x, y=y, psi=wrap_course(psi_new))

    if model.kind == ModelKind.TANGENTIAL_ACCEL and model.accel != 0.0:
        a = model.accel
        span = dt
        if p.v + a * dt < 0.0:
            # speed reaches zero at -v/a and the vessel stays put afterwards
            span = -p.v / a
        travel = p.v * span + 0.5 * a * span * span
        return replace(
            p,
            t=p.t + dt,
            x=p.x + travel * math.cos(p.psi),
            y=p.y + travel * math.sin(p.psi),
            v=max(0.0, p.v + a * span),
        )

    return replace(
        p,
        t=p.t + dt,
        x=p.x + p.v * math.cos(p.psi) * dt,
        y=p.y + p.v * math.sin(p.psi) * dt,
    )


def estimate_turn_rate(previous: Optional[Posit], current: Posit) -> Optional[float]:
    """Turn rate implied by the last two courses of a track, if defined."""
    if previous is None:
        return None
    dt = current.t - previous.t
    if dt <= 0:
        return None
    return wrap_course(current.psi - previous.psi) / dt


def record_to_posit(record: RawRecord, zone: Optional[str] = None) -> Posit:
    """Convert a RawRecord to a Posit, optionally in a forced anchor zone."""
    x, y, zone = to_utm(record.lat, record.lon, zone)
    return Posit(
        t=float(record.time),
        x=x,
        y=y,
        v=record.sog * KNOTS_TO_MS,
        psi=cog_to_psi(record.cog),
        zone=zone,
        source_id=record.point_id,
    )


def posits_from_records(
    records: Iterable[RawRecord],
    anchor_zone: Optional[str] = None
) -> List[Posit]:
    """Convert records to posits in one anchor zone, sorted by (t, point_id)."""
    ordered = sorted(records, key=lambda r: (r.time, r.point_id))
    if not ordered:
        return []
    zone = anchor_zone or utm_zone_for(ordered[0].lat, ordered[0].lon)
    posits = []
    for record in ordered:
        try:
            posits.append(record_to_posit(record, zone))
        except RecordValidationError as e:
            logger.warning(f"Skipping record: {e}")
    logger.info(f"Converted {len(posits)} records to posits in zone {zone}")
    return posits
