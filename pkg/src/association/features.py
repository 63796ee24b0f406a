from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import circstd

from src.association.gating import CandidateScore
from src.association.screening import EndpointStore, ScreenResult
from src.errors import ConfigurationError
from src.geo.kinematics import CV, Posit, project

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SECONDS_PER_DAY = 86400.0
CLAMP = 10.0

# (name, unit, transform)
CANDIDATE_FEATURES: List[Tuple[str, str, str]] = [
    # local-frame residuals and link kinematics
    ("e_par", "m", "slog"),
    ("e_perp", "m", "slog"),
    ("dt", "s", "identity"),
    ("v_req", "m/s", "identity"),
    ("implied_turn_rate", "rad/s", "identity"),
    ("track_turn_rate", "rad/s", "identity"),
    ("mahal_sq", "1", "slog"),
    ("link_score", "1", "slog"),
    # projection errors
    ("forward_error", "m", "slog"),
    ("backward_error", "m", "slog"),
    ("symmetric_error", "m", "slog"),
    # heading and speed consistency
    ("delta_c", "rad", "identity"),
    ("step_angle", "rad", "identity"),
    ("speed_gap_required", "m/s", "identity"),
    ("speed_gap_endpoint", "m/s", "identity"),
    ("endpoint_speed", "m/s", "identity"),
    ("query_speed", "m/s", "identity"),
    ("course_jitter", "rad", "identity"),
    ("speed_jitter", "m/s", "identity"),
    ("track_length", "posits", "identity"),
    ("score_gap_new", "1", "slog"),
    # context
    ("local_density", "endpoints", "slog"),
    ("tod_sin", "1", "identity"),
    ("tod_cos", "1", "identity"),
]

NEW_VESSEL_FEATURES: List[Tuple[str, str, str]] = [
    ("new_vessel_score", "1", "identity"),
    ("local_density", "endpoints", "slog"),
    ("tod_sin", "1", "identity"),
    ("tod_cos", "1", "identity"),
    ("candidate_count", "candidates", "identity"),
    ("best_score_gap", "1", "slog"),
    ("query_speed", "m/s", "identity"),
]


@dataclass
class FeatureSpec:
    name: str
    index: int
    unit: str
    transform: str = "identity"
    shift: float = 0.0
    scale: float = 1.0


@dataclass
class FeatureSchema:
    """Ordered feature definitions plus frozen normalization constants."""

    k: int
    candidate: List[FeatureSpec]
    new_vessel: List[FeatureSpec]
    version: int = SCHEMA_VERSION

    @classmethod
    def default(cls, k: int) -> "FeatureSchema":
        return cls(
            k=k,
            candidate=[FeatureSpec(n, i, u, t) for i, (n, u, t) in enumerate(CANDIDATE_FEATURES)],
            new_vessel=[FeatureSpec(n, i, u, t) for i, (n, u, t) in enumerate(NEW_VESSEL_FEATURES)],
        )

    @property
    def slot_width(self) -> int:
        """Width of one slot: candidate features plus the mask column."""
        return len(self.candidate) + 1

    @property
    def input_width(self) -> int:
        return (self.k + 1) * self.slot_width

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def normalize_candidate(self, raw: np.ndarray) -> np.ndarray:
        return _normalize(raw, self.candidate)

    def normalize_new_vessel(self, raw: np.ndarray) -> np.ndarray:
        return _normalize(raw, self.new_vessel)

    def mask_columns(self) -> np.ndarray:
        return np.arange(1, self.k + 2) * self.slot_width - 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'k': self.k,
            'candidate': [vars(s) for s in self.candidate],
            'new_vessel': [vars(s) for s in self.new_vessel],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureSchema":
        if data.get('version') != SCHEMA_VERSION:
            raise ConfigurationError(f"Unsupported schema version: {data.get('version')}")
        schema = cls(
            k=data['k'],
            candidate=[FeatureSpec(**s) for s in data['candidate']],
            new_vessel=[FeatureSpec(**s) for s in data['new_vessel']],
        )
        expected = [n for n, _, _ in CANDIDATE_FEATURES]
        if [s.name for s in schema.candidate] != expected:
            raise ConfigurationError("Schema candidate features do not match this build")
        return schema

    def save(self, path: Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: Path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FeatureVector:
    values: np.ndarray
    mask: int = 1


@dataclass(frozen=True)
class GlobalContext:
    density: int
    time_of_day: float


class AssembledInput(NamedTuple):
    values: np.ndarray  # (k+1) * slot_width, float32
    mask: np.ndarray  # k+1 booleans, New Vessel last


def _signed_log1p(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.log1p(np.abs(values))


def _apply_transforms(raw: np.ndarray, specs: Sequence[FeatureSpec]) -> np.ndarray:
    out = np.array(raw, dtype=np.float64, copy=True)
    for spec in specs:
        if spec.transform == "slog":
            out[..., spec.index] = _signed_log1p(out[..., spec.index])
    return out


def _normalize(raw: np.ndarray, specs: Sequence[FeatureSpec]) -> np.ndarray:
    transformed = _apply_transforms(raw, specs)
    shift = np.array([s.shift for s in specs])
    scale = np.array([s.scale for s in specs])
    normalized = (transformed - shift) / scale
    return np.clip(np.nan_to_num(normalized, nan=0.0, posinf=CLAMP, neginf=-CLAMP), -CLAMP, CLAMP)


def _time_of_day(t: float) -> Tuple[float, float]:
    phase = 2.0 * math.pi * (t % SECONDS_PER_DAY) / SECONDS_PER_DAY
    return math.sin(phase), math.cos(phase)


def candidate_raw_features(
    query: Posit,
    cand: CandidateScore,
    track_context: Sequence[Posit],
    global_context: GlobalContext,
    new_vessel_score: float
) -> np.ndarray:
    """Unnormalized candidate features in CANDIDATE_FEATURES order."""
    dt = cand.dt
    forward = math.hypot(cand.e_par, cand.e_perp)
    back = project(query, -dt, CV)
    backward = math.hypot(back.x - cand.endpoint.x, back.y - cand.endpoint.y)

    courses = np.array([p.psi for p in track_context]) if track_context else np.zeros(1)
    speeds = np.array([p.v for p in track_context]) if track_context else np.zeros(1)
    course_jitter = float(circstd(courses, high=math.pi, low=-math.pi)) if courses.size > 1 else 0.0
    speed_jitter = float(np.std(speeds)) if speeds.size > 1 else 0.0
    tod_sin, tod_cos = _time_of_day(global_context.time_of_day)

    return np.array([
        cand.e_par,
        cand.e_perp,
        dt,
        cand.v_req,
        cand.delta_c / dt,
        cand.omega if cand.omega is not None else 0.0,
        cand.mahal_sq,
        cand.score,
        forward,
        backward,
        0.5 * (forward + backward),
        cand.delta_c,
        cand.angle,
        cand.v_req - query.v,
        cand.endpoint.v - query.v,
        cand.endpoint.v,
        query.v,
        course_jitter,
        speed_jitter,
        float(len(track_context)),
        cand.score - new_vessel_score,
        float(global_context.density),
        tod_sin,
        tod_cos,
    ])


def new_vessel_raw_features(
    query: Posit,
    result: ScreenResult,
    global_context: GlobalContext
) -> np.ndarray:
    tod_sin, tod_cos = _time_of_day(global_context.time_of_day)
    best_gap = result.candidates[0].score - result.new_vessel_score if result.candidates else 0.0
    return np.array([
        result.new_vessel_score,
        float(global_context.density),
        tod_sin,
        tod_cos,
        float(len(result.candidates)),
        best_gap,
        query.v,
    ])


def build_features(
    query: Posit,
    cand: CandidateScore,
    track_context: Sequence[Posit],
    global_context: GlobalContext,
    schema: FeatureSchema,
    new_vessel_score: float = 0.0
) -> FeatureVector:
    raw = candidate_raw_features(query, cand, track_context, global_context, new_vessel_score)
    if raw.size != len(schema.candidate):
        raise ConfigurationError(
            f"Feature width {raw.size} does not match schema width {len(schema.candidate)}"
        )
    return FeatureVector(values=schema.normalize_candidate(raw), mask=1)


def empty_slot(schema: FeatureSchema) -> FeatureVector:
    return FeatureVector(values=np.zeros(len(schema.candidate)), mask=0)


def assemble_input(
    result: ScreenResult,
    features: List[FeatureVector],
    new_vessel: FeatureVector,
    schema: FeatureSchema
) -> AssembledInput:
    """Lay out candidate slots in screen order, pad, and append the New Vessel slot."""
    if len(features) != len(result.candidates):
        raise ConfigurationError(
            f"{len(features)} feature vectors for {len(result.candidates)} screened candidates"
        )
    return layout_slots(features, new_vessel, schema)


def layout_slots(
    features: List[FeatureVector],
    new_vessel: FeatureVector,
    schema: FeatureSchema
) -> AssembledInput:
    if len(features) > schema.k:
        raise ConfigurationError(f"{len(features)} candidates exceed k={schema.k}")
    width = schema.slot_width
    values = np.zeros(schema.input_width, dtype=np.float32)
    mask = np.zeros(schema.k + 1, dtype=bool)
    for slot, vector in enumerate(features):
        values[slot * width:slot * width + width - 1] = vector.values
        values[slot * width + width - 1] = vector.mask
        mask[slot] = bool(vector.mask)
    start = schema.k * width
    values[start:start + new_vessel.values.size] = new_vessel.values
    values[start + width - 1] = 1.0
    mask[schema.k] = True
    return AssembledInput(values, mask)


class FeatureBuilder:
    """Builds classifier inputs for screened queries against a live store."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema

    @staticmethod
    def raw_rows(
        query: Posit,
        result: ScreenResult,
        store: EndpointStore
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Unnormalized candidate rows and New Vessel row, for schema fitting."""
        context = GlobalContext(result.query_density, query.t)
        rows = [
            candidate_raw_features(
                query, cand, store.history(cand.track_id), context, result.new_vessel_score
            )
            for cand in result.candidates
        ]
        cand_raw = np.vstack(rows) if rows else np.zeros((0, len(CANDIDATE_FEATURES)))
        return cand_raw, new_vessel_raw_features(query, result, context)

    def assemble(self, query: Posit, result: ScreenResult, store: EndpointStore) -> AssembledInput:
        cand_raw, new_raw = self.raw_rows(query, result, store)
        return self.assemble_raw(cand_raw, new_raw)

    def assemble_raw(self, cand_raw: np.ndarray, new_raw: np.ndarray) -> AssembledInput:
        """Normalize stored raw rows and lay them out; used for offline example building."""
        features = [FeatureVector(self.schema.normalize_candidate(row)) for row in cand_raw]
        new_vessel = FeatureVector(self.schema.normalize_new_vessel(new_raw))
        return layout_slots(features, new_vessel, self.schema)


def fit_schema(k: int, cand_raw: np.ndarray, new_raw: np.ndarray) -> FeatureSchema:
    """Freeze shift/scale from training-split rows after each feature's transform."""
    schema = FeatureSchema.default(k)
    for specs, raw in ((schema.candidate, cand_raw), (schema.new_vessel, new_raw)):
        if raw.shape[0] == 0:
            logger.warning("No rows to fit normalization; keeping identity scaling")
            continue
        transformed = _apply_transforms(raw, specs)
        means = transformed.mean(axis=0)
        stds = transformed.std(axis=0)
        for spec in specs:
            spec.shift = float(means[spec.index])
            spec.scale = float(max(stds[spec.index], 1e-6))
    logger.info(f"Fitted feature schema on {cand_raw.shape[0]} candidate rows")
    return schema
