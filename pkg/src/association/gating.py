from typing import Any, Dict, NamedTuple, Optional, Tuple
import logging
import math
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigurationError, InvalidPairError
from src.geo.kinematics import (
    CTRV_EPSILON,
    CV,
    ModelKind,
    Posit,
    ProjectionModel,
    local_residual,
    project,
    to_local_frame,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GateConfig:
    """Anisotropic covariance growth and gate thresholds."""

    sigma0: float = 30.0
    alpha_par: float = 0.6
    alpha_perp: float = 0.25
    tau: float = 4.0
    theta: float = math.radians(85.0)
    max_dt: float = 6 * 3600.0

    def __post_init__(self):
        if self.alpha_par < self.alpha_perp:
            raise ConfigurationError("alpha_par must not be smaller than alpha_perp")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if not math.radians(60.0) - 1e-12 <= self.theta <= math.radians(90.0) + 1e-12:
            raise ConfigurationError("theta must lie in [60, 90] degrees")
        if self.max_dt <= 0 or self.sigma0 < 0:
            raise ConfigurationError("max_dt must be positive and sigma0 non-negative")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "GateConfig":
        return cls(
            sigma0=config.get('sigma0', 30.0),
            alpha_par=config.get('alpha_par', 0.6),
            alpha_perp=config.get('alpha_perp', 0.25),
            tau=config.get('tau', 4.0),
            theta=math.radians(config.get('theta_deg', 85.0)),
            max_dt=config.get('max_dt', 6 * 3600.0),
        )


@dataclass(frozen=True)
class ScoreConfig:
    """Penalty weights and prior parameters of the link score."""

    lambda_psi: float = 50.0
    lambda_v: float = 0.5
    t_half: float = 2 * 3600.0
    beta: float = 1.0
    r_loc: float = 10_000.0

    def __post_init__(self):
        if self.lambda_psi < 0 or self.lambda_v < 0:
            raise ConfigurationError("score weights must be non-negative")
        if self.t_half <= 0 or self.beta <= 0 or self.r_loc <= 0:
            raise ConfigurationError("t_half, beta and r_loc must be positive")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "ScoreConfig":
        return cls(
            lambda_psi=config.get('lambda_psi', 50.0),
            lambda_v=config.get('lambda_v', 0.5),
            t_half=config.get('t_half', 2 * 3600.0),
            beta=config.get('beta', 1.0),
            r_loc=config.get('r_loc', 10_000.0),
        )


@dataclass(frozen=True)
class CandidateScore:
    """One screened hypothesis: endpoint of `track_id` precedes the query."""

    track_id: int
    endpoint: Posit
    dt: float
    e_par: float
    e_perp: float
    delta_c: float
    v_req: float
    mahal_sq: float
    angle: float
    score: float
    passed_gates: bool
    omega: Optional[float] = None


class LinkScores(NamedTuple):
    """Vectorized screening results, one entry per endpoint row."""

    dt: np.ndarray
    e_par: np.ndarray
    e_perp: np.ndarray
    delta_c: np.ndarray
    v_req: np.ndarray
    mahal_sq: np.ndarray
    angle: np.ndarray
    passed: np.ndarray
    score: np.ndarray


def covariance(dt: float, cfg: GateConfig) -> Tuple[float, float]:
    """Diagonal of the along/cross-track error covariance at gap `dt`."""
    base = cfg.sigma0 ** 2
    return base + cfg.alpha_par ** 2 * dt * dt, base + cfg.alpha_perp ** 2 * dt * dt


def mahalanobis_sq(error: Tuple[float, float], psi: float, dt: float, cfg: GateConfig) -> float:
    e_par, e_perp = to_local_frame(error, psi)
    var_par, var_perp = covariance(dt, cfg)
    return e_par * e_par / var_par + e_perp * e_perp / var_perp


def step_angle(actual: Tuple[float, float], projected: Tuple[float, float]) -> float:
    """Unsigned angle between two displacement vectors; 0 if either has zero length."""
    ax, ay = actual
    px, py = projected
    if (px == 0.0 and py == 0.0) or (ax == 0.0 and ay == 0.0):
        return 0.0
    return math.atan2(abs(ax * py - ay * px), ax * px + ay * py)


def angle_gate(actual: Tuple[float, float], projected: Tuple[float, float], theta: float) -> bool:
    return step_angle(actual, projected) <= theta


def implied_speed(actual: Tuple[float, float], dt: float) -> float:
    if dt <= 0:
        raise InvalidPairError(f"implied speed needs a positive time gap, got {dt}")
    return math.hypot(*actual) / dt


def continuation_cost(dt: float, density: float, scfg: ScoreConfig) -> float:
    """-log pi_cont: exp(-dt / t_half) / (1 + density)."""
    return dt / scfg.t_half + math.log1p(density)


def birth_prior(density: float, scfg: ScoreConfig) -> float:
    return scfg.beta / (scfg.beta + density)


def score_new(query: Posit, density: float, scfg: ScoreConfig) -> float:
    """New Vessel score, -log pi_birth, for a query with `density` nearby endpoints."""
    return -math.log(birth_prior(density, scfg))


def score_link(
    query: Posit,
    endpoint: Posit,
    cfg: GateConfig,
    scfg: ScoreConfig,
    model: ProjectionModel = CV,
    endpoint_density: float = 0.0,
    track_id: int = -1
) -> CandidateScore:
    """Gate and score the hypothesis that `endpoint` precedes `query`."""
    dt = query.t - endpoint.t
    if dt <= 0:
        raise InvalidPairError(
            f"query {query.source_id} does not follow endpoint {endpoint.source_id} (dt={dt})"
        )

    predicted = project(endpoint, dt, model)
    residual = local_residual(query, predicted, endpoint.psi)
    e_par, e_perp, delta_c = residual.e_par, residual.e_perp, residual.delta_c
    var_par, var_perp = covariance(dt, cfg)
    m2 = e_par * e_par / var_par + e_perp * e_perp / var_perp

    actual = endpoint.step_to(query)
    v_req = implied_speed(actual, dt)
    if endpoint.v == 0.0:
        angle = 0.0
    else:
        angle = step_angle(actual, (predicted.x - endpoint.x, predicted.y - endpoint.y))

    passed = m2 <= cfg.tau ** 2 and angle <= cfg.theta and dt <= cfg.max_dt
    if passed:
        score = (
            m2
            + scfg.lambda_psi * delta_c * delta_c
            + scfg.lambda_v * (v_req - query.v) ** 2
            + continuation_cost(dt, endpoint_density, scfg)
        )
    else:
        score = math.inf

    omega = model.omega if model.kind == ModelKind.CTRV else None
    return CandidateScore(
        track_id=track_id,
        endpoint=endpoint,
        dt=dt,
        e_par=e_par,
        e_perp=e_perp,
        delta_c=delta_c,
        v_req=v_req,
        mahal_sq=m2,
        angle=angle,
        score=score,
        passed_gates=passed,
        omega=omega,
    )


def score_links(
    query: Posit,
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
    psi: np.ndarray,
    t: np.ndarray,
    omega: np.ndarray,
    density: np.ndarray,
    cfg: GateConfig,
    scfg: ScoreConfig
) -> LinkScores:
    """Vectorized score_link over endpoint arrays; NaN omega means CV."""
    dt = query.t - t
    valid_dt = dt > 0
    safe_dt = np.where(valid_dt, dt, 1.0)

    use_ctrv = np.isfinite(omega) & (np.abs(np.nan_to_num(omega)) >= CTRV_EPSILON)
    w = np.where(use_ctrv, omega, 1.0)
    psi_new = psi + w * safe_dt
    ctrv_dx = v / w * (np.sin(psi_new) - np.sin(psi))
    ctrv_dy = v / w * (-np.cos(psi_new) + np.cos(psi))
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    proj_dx = np.where(use_ctrv, ctrv_dx, v * cos_psi * safe_dt)
    proj_dy = np.where(use_ctrv, ctrv_dy, v * sin_psi * safe_dt)

    act_dx = query.x - x
    act_dy = query.y - y
    err_x = act_dx - proj_dx
    err_y = act_dy - proj_dy
    e_par = cos_psi * err_x + sin_psi * err_y
    e_perp = -sin_psi * err_x + cos_psi * err_y

    base = cfg.sigma0 ** 2
    var_par = base + cfg.alpha_par ** 2 * safe_dt * safe_dt
    var_perp = base + cfg.alpha_perp ** 2 * safe_dt * safe_dt
    m2 = e_par * e_par / var_par + e_perp * e_perp / var_perp

    delta_c = np.arctan2(np.sin(query.psi - psi), np.cos(query.psi - psi))
    delta_c = np.where(delta_c <= -np.pi, np.pi, delta_c)

    v_req = np.hypot(act_dx, act_dy) / safe_dt
    cross = np.abs(act_dx * proj_dy - act_dy * proj_dx)
    dot = act_dx * proj_dx + act_dy * proj_dy
    degenerate = ((proj_dx == 0) & (proj_dy == 0)) | ((act_dx == 0) & (act_dy == 0)) | (v == 0)
    angle = np.where(degenerate, 0.0, np.arctan2(cross, dot))

    passed = valid_dt & (dt <= cfg.max_dt) & (m2 <= cfg.tau ** 2) & (angle <= cfg.theta)
    raw = (
        m2
        + scfg.lambda_psi * delta_c * delta_c
        + scfg.lambda_v * (v_req - query.v) ** 2
        + safe_dt / scfg.t_half
        + np.log1p(density)
    )
    score = np.where(passed, raw, np.inf)
    return LinkScores(dt, e_par, e_perp, delta_c, v_req, m2, angle, passed, score)
