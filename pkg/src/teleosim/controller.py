"""Cartesian impedance control with force/torque saturation.

The task-space spring force along axis i is

    f_i = K_nom,ii / max(0.1, cosh(p_i))^2 * e_i,   p_i = K_nom,ii e_i / F_max,i

so |f_i| never exceeds ~0.4477 F_max,i (the maximum of x / cosh(x)^2).
A config switch restores the raw product form of p(e) for comparison.
Damping comes from a double-diagonalization design against the current
task-space inertia and the error-dependent stiffness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, sqrtm

from .dynamics import DynTerms, RobotModel, RobotState
from .geometry import SpatialAccel, Transform, Twist, quat_conj, quat_mul, quat_rotate, rot_err

# max of x / cosh(x)^2, attained at x with x tanh(x) = 1/2
SATURATION_GAIN = 0.4477432046943028


class ControllerFault(RuntimeError):
    """Raised on non-finite controller inputs; the session must abort."""


@dataclass
class ImpedanceConfig:
    k_trans: float = 400.0            # N/m
    k_rot: float = 40.0               # N*m/rad
    f_max: np.ndarray = field(default_factory=lambda: np.full(3, 40.0))     # N
    tau_max: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))   # N*m
    damping_ratio: float = 1.0
    k_nullspace: float = 10.0         # N*m/rad
    d_nullspace: float = 2.0
    dimensionless_saturation: bool = True   # False: raw product form of p(e)
    feedforward_pinv: bool = False          # True: map xdd_d through pinv(J) instead of J^T

    def __post_init__(self) -> None:
        self.f_max = np.asarray(self.f_max, dtype=float)
        self.tau_max = np.asarray(self.tau_max, dtype=float)
        if self.k_trans <= 0 or self.k_rot <= 0:
            raise ValueError("stiffness must be positive")
        if not (0.0 < self.damping_ratio <= 2.0):
            raise ValueError("damping ratio must be in (0, 2]")

    @property
    def k_nom(self) -> np.ndarray:
        return np.concatenate([np.full(3, self.k_trans), np.full(3, self.k_rot)])

    @property
    def saturation_scale(self) -> np.ndarray:
        return np.concatenate([self.f_max, self.tau_max])


@dataclass
class CartesianError:
    e: np.ndarray
    edot: np.ndarray


def cartesian_error(
    T_d: Transform, T: Transform, xdot_d: Twist, xdot: Twist
) -> CartesianError:
    """Pose and twist error; the rotation part is the world-frame log of the
    relative rotation (equal to R * log(R^T R_d))."""
    e_rot_body = rot_err(quat_mul(quat_conj(T.q), T_d.q))
    e = np.concatenate([T_d.p - T.p, quat_rotate(T.q, e_rot_body)])
    edot = xdot_d.as_vector() - xdot.as_vector()
    return CartesianError(e, edot)


def saturated_stiffness(e: np.ndarray, cfg: ImpedanceConfig) -> np.ndarray:
    """Error-dependent diagonal stiffness; entries in (0, K_nom]."""
    k_nom = cfg.k_nom
    if cfg.dimensionless_saturation:
        p = k_nom * e / cfg.saturation_scale
    else:
        p = k_nom * cfg.saturation_scale * e
    scale = 1.0 / np.maximum(0.1, np.cosh(p)) ** 2
    return np.diag(scale * k_nom)


def damping_matrix(
    K_e: np.ndarray, task_inertia: np.ndarray, cfg: ImpedanceConfig
) -> tuple[np.ndarray, bool]:
    """Double-diagonalization damping for the current stiffness and task inertia.

    Factors Lambda = Q Q^T with Q = Lambda^{1/2} U where U diagonalizes
    Lambda^{-1/2} K Lambda^{-1/2}; returns D = Q (2 zeta Kd^{1/2}) Q^T.
    Falls back to diagonal damping when the task inertia is near singular;
    the second return value reports the fallback.
    """
    zeta = cfg.damping_ratio
    kdiag = np.diag(K_e).copy()
    try:
        cond = np.linalg.cond(task_inertia)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e8:
        return np.diag(2.0 * zeta * np.sqrt(kdiag)), True
    L_half = np.real(sqrtm(task_inertia))
    L_half_inv = np.linalg.inv(L_half)
    kd, U = eigh(L_half_inv @ K_e @ L_half_inv.T)
    kd = np.maximum(kd, 0.0)
    Q = L_half @ U
    D = Q @ np.diag(2.0 * zeta * np.sqrt(kd)) @ Q.T
    return 0.5 * (D + D.T), False


def task_inertia(M: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Operational-space inertia (J M^-1 J^T)^-1; pseudo-inverted when singular."""
    A = J @ np.linalg.solve(M, J.T)
    return np.linalg.pinv(A, rcond=1e-10, hermitian=True)


def damped_pinv(J: np.ndarray, lam: float = 1e-6) -> np.ndarray:
    """Right pseudoinverse, Tikhonov-damped only when J is near singular."""
    u, s, vt = np.linalg.svd(J, full_matrices=False)
    if s[-1] > 1e-6 * s[0] and s[-1] > 1e-9:
        inv_s = 1.0 / s
    else:
        inv_s = s / (s**2 + lam)
    return (vt.T * inv_s) @ u.T


def nullspace_torque(
    state: RobotState, J: np.ndarray, cfg: ImpedanceConfig, q_rest: np.ndarray
) -> np.ndarray:
    """Rest-posture regulation projected into the Jacobian nullspace."""
    n = J.shape[1]
    Jp = damped_pinv(J)
    proj = np.eye(n) - J.T @ Jp.T
    tau_posture = cfg.k_nullspace * (q_rest - state.q) - cfg.d_nullspace * state.qdot
    return proj @ tau_posture


def impedance_torque(
    state: RobotState,
    err: CartesianError,
    xdd_d: SpatialAccel,
    model: RobotModel,
    cfg: ImpedanceConfig,
    terms: DynTerms,
    xdot_d: Twist | None = None,
):
    """Full control torque at one 1 kHz tick.

    tau = J^T [K(e) e + D(e) edot] + tau_ffwd + tau_nullspace + g(q)

    Gravity is added explicitly because the simulated robot, unlike a
    hardware arm with internal compensation, does not cancel it itself.
    Returns (tau, info) where info carries the stiffness diagonal and
    saturation/damping-fallback flags for logging.
    """
    if not (
        np.all(np.isfinite(err.e))
        and np.all(np.isfinite(err.edot))
        and np.all(np.isfinite(state.q))
        and np.all(np.isfinite(state.qdot))
    ):
        raise ControllerFault("non-finite controller input")
    K_e = saturated_stiffness(err.e, cfg)
    Lam = task_inertia(terms.M, terms.J)
    D, fallback = damping_matrix(K_e, Lam, cfg)
    wrench = K_e @ err.e + D @ err.edot
    xdd = xdd_d.as_vector()
    xd = xdot_d.as_vector() if xdot_d is not None else np.zeros(6)
    if cfg.feedforward_pinv:
        tau_ffwd = terms.coriolis + terms.M @ (damped_pinv(terms.J) @ xdd)
    else:
        tau_ffwd = terms.coriolis + terms.M @ (terms.J.T @ xdd + terms.Jdot.T @ xd)
    tau_ns = nullspace_torque(state, terms.J, cfg, model.q_rest)
    tau = terms.J.T @ wrench + tau_ffwd + tau_ns + terms.gravity
    info = {
        "k_diag": np.diag(K_e),
        "saturation_active": np.diag(K_e) < 0.5 * cfg.k_nom,
        "damping_fallback": fallback,
    }
    return tau, info
