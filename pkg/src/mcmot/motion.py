"""Linear constant-velocity Kalman filter over the 10-d box state.

State layout: ``(x, y, z, yaw, l, w, h, vx, vy, vz)``; the measurement is the
first seven entries. Yaw and dims follow a random walk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .geometry import FilterDivergenceError, measurement_residual
from .model import Box3D, Detection, normalize_yaw

STATE_DIM = 10
MEAS_DIM = 7
MIN_DIM = 1e-3

H = np.hstack([np.eye(MEAS_DIM), np.zeros((MEAS_DIM, STATE_DIM - MEAS_DIM))])
_EYE = np.eye(STATE_DIM)


def _default_process() -> tuple[float, ...]:
    # sigma 0.1 per second on pose and shape, looser on velocity for turning objects
    return (0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.25, 0.25, 0.01)


def _default_measurement() -> tuple[float, ...]:
    # sigma 0.3 m position, 0.2 rad yaw, 0.1 m dims
    return (0.09, 0.09, 0.09, 0.04, 0.01, 0.01, 0.01)


@dataclass(frozen=True)
class KalmanConfig:
    process_noise: tuple[float, ...] = field(default_factory=_default_process)
    measurement_noise: tuple[float, ...] = field(default_factory=_default_measurement)
    initial_velocity_var: float = 10.0

    def __post_init__(self) -> None:
        pn = tuple(float(v) for v in self.process_noise)
        mn = tuple(float(v) for v in self.measurement_noise)
        if len(pn) != STATE_DIM or len(mn) != MEAS_DIM:
            raise ValueError(f"expected {STATE_DIM} process and {MEAS_DIM} measurement variances")
        if min(pn) <= 0.0 or min(mn) <= 0.0 or self.initial_velocity_var <= 0.0:
            raise ValueError("all variances must be > 0")
        object.__setattr__(self, "process_noise", pn)
        object.__setattr__(self, "measurement_noise", mn)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.measurement_noise)

    def to_dict(self) -> dict:
        return {
            "process_noise": list(self.process_noise),
            "measurement_noise": list(self.measurement_noise),
            "initial_velocity_var": self.initial_velocity_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KalmanConfig":
        return cls(
            process_noise=tuple(d.get("process_noise", _default_process())),
            measurement_noise=tuple(d.get("measurement_noise", _default_measurement())),
            initial_velocity_var=float(d.get("initial_velocity_var", 10.0)),
        )


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def box(self) -> Box3D:
        return Box3D.from_measurement(self.mean[:MEAS_DIM])

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[7:10]

    def innovation_cov(self, cfg: KalmanConfig) -> np.ndarray:
        S = H @ self.covariance @ H.T + cfg.R
        return 0.5 * (S + S.T)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def transition(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 7] = F[1, 8] = F[2, 9] = dt
    return F


@lru_cache(maxsize=64)
def _predict_mats(dt: float, process_noise: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
    F = transition(dt)
    Q = np.diag(process_noise) * dt
    F.flags.writeable = False
    Q.flags.writeable = False
    return F, Q


def kf_init(det: Detection, cfg: KalmanConfig) -> KalmanState:
    mean = np.zeros(STATE_DIM)
    mean[:MEAS_DIM] = det.box.measurement()
    if det.velocity_hint is not None:
        mean[7:10] = det.velocity_hint
    var = np.concatenate([cfg.measurement_noise, [cfg.initial_velocity_var] * 3])
    return KalmanState(mean, np.diag(var))


def kf_predict(state: KalmanState, dt: float, cfg: KalmanConfig | None = None, Q: np.ndarray | None = None) -> KalmanState:
    """Constant-velocity prediction. ``Q`` overrides the config-derived
    ``diag(process_noise) * dt``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if Q is None:
        F, Q = _predict_mats(float(dt), (cfg or KalmanConfig()).process_noise)
    else:
        F = transition(dt)
    mean = F @ state.mean
    mean[3] = normalize_yaw(mean[3])
    P = _symmetrize(F @ state.covariance @ F.T + Q)
    return KalmanState(mean, P)


def _update_vec(state: KalmanState, z: np.ndarray, R: np.ndarray) -> tuple[KalmanState, np.ndarray]:
    P = state.covariance
    # H selects the first MEAS_DIM states, so H P H^T and P H^T are slices
    PHt = P[:, :MEAS_DIM]
    S = _symmetrize(PHt[:MEAS_DIM] + R)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance not invertible") from exc
    K = PHt @ np.linalg.inv(S)
    r = measurement_residual(z, state.mean[:MEAS_DIM])
    mean = state.mean + K @ r
    mean[3] = normalize_yaw(mean[3])
    mean[4:7] = np.maximum(mean[4:7], MIN_DIM)
    IKH = _EYE.copy()
    IKH[:, :MEAS_DIM] -= K
    # Joseph form keeps P symmetric PSD
    P_post = _symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return KalmanState(mean, P_post), S


def kf_update(state: KalmanState, det: Detection, cfg: KalmanConfig) -> tuple[KalmanState, np.ndarray]:
    """Measurement update with one detection; also returns S = H P H^T + R."""
    return _update_vec(state, det.box.measurement(), cfg.R)


def update_with_multiple(state: KalmanState, dets: Sequence[Detection], cfg: KalmanConfig) -> tuple[KalmanState, np.ndarray]:
    """Fuse several detections of one object by sequential updates, highest score first."""
    if not dets:
        raise ValueError("update_with_multiple needs at least one detection")
    ordered = sorted(dets, key=lambda d: -d.score)
    S = None
    for det in ordered:
        state, S = kf_update(state, det, cfg)
    return state, S
