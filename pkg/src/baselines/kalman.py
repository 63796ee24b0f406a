from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import ExtendedKalmanFilter, KalmanFilter
from scipy.stats import chi2

from src.errors import ConfigurationError
from src.evaluation.posit_metrics import posit_accuracy
from src.geo.kinematics import CTRV_EPSILON, Posit, wrap_course
from src.tracking.tracker import LabeledStream, check_sorted

logger = logging.getLogger(__name__)

MEASUREMENT_DIM = 4


@dataclass(frozen=True)
class KalmanConfig:
    measurement_std: float = 30.0  # m, matches the gate's sigma0
    speed_std: float = 0.5  # m/s
    course_std: float = math.radians(5.0)
    accel_std: float = 0.1  # m/s^2 process noise
    yaw_accel_std: float = 1e-4  # rad/s^2 process noise, CTRV only
    turn_rate_std: float = 0.01  # rad/s initial uncertainty, CTRV only
    gate: float = float(chi2.ppf(0.99, MEASUREMENT_DIM))
    max_age: float = 6 * 3600.0

    def __post_init__(self):
        if min(self.measurement_std, self.speed_std, self.course_std, self.accel_std) <= 0:
            raise ConfigurationError("Kalman noise parameters must be positive")
        if self.gate <= 0 or self.max_age <= 0:
            raise ConfigurationError("gate and max_age must be positive")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "KalmanConfig":
        gate = config.get('gate')
        if gate is None:
            gate = float(chi2.ppf(config.get('gate_probability', 0.99), MEASUREMENT_DIM))
        return cls(
            measurement_std=config.get('measurement_std', 30.0),
            speed_std=config.get('speed_std', 0.5),
            course_std=math.radians(config.get('course_std_deg', 5.0)),
            accel_std=config.get('accel_std', 0.1),
            yaw_accel_std=config.get('yaw_accel_std', 1e-4),
            turn_rate_std=config.get('turn_rate_std', 0.01),
            gate=gate,
            max_age=config.get('max_age', 6 * 3600.0),
        )


def ensure_positive_definite(P: np.ndarray, fallback: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Symmetrize P; swap in `fallback` when the Cholesky factorization fails."""
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
        return P, False
    except np.linalg.LinAlgError:
        return fallback.copy(), True


def mahalanobis_innovation(y: np.ndarray, S: np.ndarray) -> float:
    """Squared innovation norm under covariance S."""
    y = y.reshape(-1)
    return float(y @ np.linalg.solve(S, y))


class KalmanTrack(ABC):
    """One vessel hypothesis carried by a predict/update filter."""

    def __init__(self, posit: Posit, track_id: int, cfg: KalmanConfig):
        self.track_id = track_id
        self.t = posit.t
        self.cfg = cfg
        self.reinitialized = 0
        self.R = np.diag([
            cfg.measurement_std ** 2,
            cfg.measurement_std ** 2,
            cfg.speed_std ** 2,
            cfg.speed_std ** 2,
        ])

    @abstractmethod
    def measurement(self, posit: Posit) -> np.ndarray:
        """Observation vector this filter reads from a posit."""
        ...

    @abstractmethod
    def innovation_sq(self, posit: Posit) -> float:
        """Squared innovation Mahalanobis distance of `posit`; does not touch the filter."""

    @abstractmethod
    def advance(self, posit: Posit):
        """Predict to the posit time and update with it."""


class CvTrack(KalmanTrack):
    """Linear filter on [x, y, vx, vy] observing the full state."""

    def __init__(self, posit: Posit, track_id: int, cfg: KalmanConfig):
        super().__init__(posit, track_id, cfg)
        self.kf = KalmanFilter(dim_x=4, dim_z=MEASUREMENT_DIM)
        self.kf.x = self.measurement(posit).reshape(4, 1)
        self.kf.H = np.eye(4)
        self.kf.R = self.R.copy()
        self.P0 = self.R.copy()
        self.kf.P = self.P0.copy()

    def measurement(self, posit: Posit) -> np.ndarray:
        return np.array([posit.x, posit.y, posit.v * math.cos(posit.psi), posit.v * math.sin(posit.psi)])

    def _model(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        Q = Q_discrete_white_noise(dim=2, dt=dt, var=self.cfg.accel_std ** 2, block_size=2, order_by_dim=False)
        return F, Q

    def innovation_sq(self, posit: Posit) -> float:
        F, Q = self._model(posit.t - self.t)
        x = F @ self.kf.x
        P = F @ self.kf.P @ F.T + Q
        S = self.kf.H @ P @ self.kf.H.T + self.kf.R
        return mahalanobis_innovation(self.measurement(posit) - (self.kf.H @ x).reshape(-1), S)

    def advance(self, posit: Posit):
        F, Q = self._model(posit.t - self.t)
        self.kf.predict(F=F, Q=Q)
        self.kf.update(self.measurement(posit))
        self.kf.P, flagged = ensure_positive_definite(self.kf.P, self.P0)
        if flagged:
            self.reinitialized += 1
            logger.warning(f"Reinitialized covariance of track {self.track_id}")
        self.t = posit.t


def ctrv_transition(state: np.ndarray, dt: float) -> np.ndarray:
    """Constant turn-rate motion of [x, y, v, psi, omega]; straight-line below CTRV_EPSILON."""
    x, y, v, psi, omega = state.reshape(-1)
    if abs(omega) < CTRV_EPSILON:
        return np.array([
            x + v * math.cos(psi) * dt, y + v * math.sin(psi) * dt, v, psi, omega,
        ]).reshape(5, 1)
    psi_new = psi + omega * dt
    return np.array([
        x + v / omega * (math.sin(psi_new) - math.sin(psi)),
        y + v / omega * (-math.cos(psi_new) + math.cos(psi)),
        v,
        wrap_course(psi_new),
        omega,
    ]).reshape(5, 1)


def ctrv_jacobian(state: np.ndarray, dt: float) -> np.ndarray:
    """Jacobian of ctrv_transition with respect to the state."""
    _, _, v, psi, omega = state.reshape(-1)
    J = np.eye(5)
    J[3, 4] = dt
    s0, c0 = math.sin(psi), math.cos(psi)
    if abs(omega) < CTRV_EPSILON:
        J[0, 2], J[0, 3], J[0, 4] = c0 * dt, -v * s0 * dt, -0.5 * v * dt * dt * s0
        J[1, 2], J[1, 3], J[1, 4] = s0 * dt, v * c0 * dt, 0.5 * v * dt * dt * c0
        return J
    s1, c1 = math.sin(psi + omega * dt), math.cos(psi + omega * dt)
    J[0, 2] = (s1 - s0) / omega
    J[0, 3] = v / omega * (c1 - c0)
    J[0, 4] = -v / omega ** 2 * (s1 - s0) + v / omega * c1 * dt
    J[1, 2] = (c0 - c1) / omega
    J[1, 3] = v / omega * (s1 - s0)
    J[1, 4] = -v / omega ** 2 * (c0 - c1) + v / omega * s1 * dt
    return J


def angle_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # course component wrapped to [-pi, pi)
    y = a - b
    y[3] = wrap_course(float(y[3]))
    return y


class CtrvFilter(ExtendedKalmanFilter):
    """EKF whose state prediction follows the constant turn-rate model."""

    def __init__(self):
        super().__init__(dim_x=5, dim_z=MEASUREMENT_DIM)
        self.dt = 0.0

    def predict_x(self, u=0):
        self.x = ctrv_transition(self.x, self.dt)


H_CTRV = np.hstack([np.eye(4), np.zeros((4, 1))])


class CtrvTrack(KalmanTrack):
    """Extended filter on [x, y, v, psi, omega] observing position, speed and course."""

    def __init__(self, posit: Posit, track_id: int, cfg: KalmanConfig):
        super().__init__(posit, track_id, cfg)
        self.R = np.diag([cfg.measurement_std ** 2, cfg.measurement_std ** 2, cfg.speed_std ** 2, cfg.course_std ** 2])
        self.ekf = CtrvFilter()
        self.ekf.x = np.array([posit.x, posit.y, posit.v, posit.psi, 0.0]).reshape(5, 1)
        self.ekf.R = self.R.copy()
        self.P0 = np.diag([*np.diag(self.R), cfg.turn_rate_std ** 2])
        self.ekf.P = self.P0.copy()

    def measurement(self, posit: Posit) -> np.ndarray:
        return np.array([posit.x, posit.y, posit.v, posit.psi])

    def _process_noise(self, dt: float) -> np.ndarray:
        psi = float(self.ekf.x[3, 0])
        G = np.array([
            [0.5 * dt * dt * math.cos(psi), 0.0],
            [0.5 * dt * dt * math.sin(psi), 0.0],
            [dt, 0.0],
            [0.0, 0.5 * dt * dt],
            [0.0, dt],
        ])
        return G @ np.diag([self.cfg.accel_std ** 2, self.cfg.yaw_accel_std ** 2]) @ G.T

    def innovation_sq(self, posit: Posit) -> float:
        dt = posit.t - self.t
        F = ctrv_jacobian(self.ekf.x, dt)
        x = ctrv_transition(self.ekf.x, dt)
        P = F @ self.ekf.P @ F.T + self._process_noise(dt)
        S = H_CTRV @ P @ H_CTRV.T + self.R
        y = angle_residual(self.measurement(posit).reshape(4, 1), H_CTRV @ x)
        return mahalanobis_innovation(y, S)

    def advance(self, posit: Posit):
        dt = posit.t - self.t
        self.ekf.dt = dt
        self.ekf.F = ctrv_jacobian(self.ekf.x, dt)
        self.ekf.Q = self._process_noise(dt)
        self.ekf.predict()
        self.ekf.update(
            self.measurement(posit).reshape(4, 1),
            HJacobian=lambda _: H_CTRV,
            Hx=lambda state: H_CTRV @ state,
            residual=angle_residual,
        )
        self.ekf.x[3, 0] = wrap_course(float(self.ekf.x[3, 0]))
        self.ekf.P, flagged = ensure_positive_definite(self.ekf.P, self.P0)
        if flagged:
            self.reinitialized += 1
            logger.warning(f"Reinitialized covariance of track {self.track_id}")
        self.t = posit.t


TRACK_TYPES = {'cv': CvTrack, 'ctrv': CtrvTrack}


class KalmanTracker:
    """Nearest-neighbor association on innovation distance, one filter per track."""

    def __init__(self, model: str, cfg: KalmanConfig):
        if model not in TRACK_TYPES:
            raise ConfigurationError(f"Unknown filter model: {model}")
        self.model = model
        self.cfg = cfg
        self.reinitialized = 0

    def run(self, posits: Sequence[Posit]) -> LabeledStream:
        """Assign each posit to the gated track with the smallest innovation, else start a filter."""
        check_sorted(posits)
        track_type = TRACK_TYPES[self.model]
        tracks: Dict[int, KalmanTrack] = {}
        stream = LabeledStream()
        next_track = 0

        for query in posits:
            for tid in [tid for tid, tr in tracks.items() if query.t - tr.t > self.cfg.max_age]:
                self.reinitialized += tracks.pop(tid).reinitialized

            best: Optional[Tuple[float, int]] = None
            for tid, track in tracks.items():
                if query.t <= track.t:
                    continue
                d2 = track.innovation_sq(query)
                if d2 <= self.cfg.gate and (best is None or (d2, tid) < best):
                    best = (d2, tid)

            if best is None:
                tid = next_track
                next_track += 1
                tracks[tid] = track_type(query, tid, self.cfg)
            else:
                tid = best[1]
                tracks[tid].advance(query)
            stream.append(query.source_id, query.t, tid)

        self.reinitialized += sum(tr.reinitialized for tr in tracks.values())
        logger.info(
            f"KF({self.model.upper()})+NN linked {len(posits)} posits into {next_track} tracks "
            f"({self.reinitialized} covariance resets)"
        )
        return stream


def kf_nn_track(posits: Sequence[Posit], model: str, cfg: KalmanConfig) -> LabeledStream:
    """Run the nearest-neighbor tracker with a `cv` or `ctrv` filter."""
    return KalmanTracker(model, cfg).run(posits)


def tune_gate(
    posits: Sequence[Posit],
    truth: Mapping[int, int],
    gates: Sequence[float],
    model: str,
    cfg: KalmanConfig
) -> Tuple[float, Dict[float, float]]:
    """Pick the gate with best posit accuracy on validation posits; ties go to the smaller gate."""
    scores: Dict[float, float] = {}
    for gate in sorted(gates):
        stream = kf_nn_track(posits, model, replace(cfg, gate=gate))
        scores[gate] = posit_accuracy(stream, truth).accuracy
        logger.info(f"KF({model.upper()}) gate {gate:.2f}: posit accuracy {scores[gate]:.4f}")
    best = max(scores, key=lambda g: (scores[g], -g))
    return best, scores
