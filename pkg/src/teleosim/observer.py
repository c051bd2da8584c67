"""Momentum-based external joint torque and tool wrench estimation.

The residual obeys first-order dynamics toward the true external torque
with per-joint time constant 1/K_O:

    tau_hat = K_O [ M(q) qd - Int( tau - g + C^T qd + tau_hat ) ds ]

The integral is accumulated with the trapezoidal rule; the implicit
dependence of the integrand on the current tau_hat is solved in closed form
(diagonal K_O makes it elementwise).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynTerms, RobotModel, coriolis_transpose_qdot


@dataclass
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.force = np.asarray(self.force, dtype=float)
        self.torque = np.asarray(self.torque, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @property
    def force_norm(self) -> float:
        return float(np.linalg.norm(self.force))


@dataclass
class ObserverState:
    gain: np.ndarray                      # diagonal K_O entries (1/s)
    integral: np.ndarray
    tau_hat_ext: np.ndarray
    _prev_integrand: np.ndarray | None = None

    @staticmethod
    def create(n: int, gain: float = 50.0) -> "ObserverState":
        if gain <= 0:
            raise ValueError("observer gain must be positive")
        return ObserverState(
            gain=np.full(n, gain),
            integral=np.zeros(n),
            tau_hat_ext=np.zeros(n),
        )


def observer_step(
    s: ObserverState,
    q: np.ndarray,
    qdot: np.ndarray,
    tau: np.ndarray,
    model: RobotModel,
    dt: float,
    terms: DynTerms | None = None,
) -> ObserverState:
    """Advance the observer one control tick; ``tau`` is the commanded torque."""
    from .dynamics import bias_terms, mass_matrix

    if terms is not None:
        M, g, cor = terms.M, terms.gravity, terms.coriolis
    else:
        M = mass_matrix(model, q)
        cor, g = bias_terms(model, q, qdot)
    # C^T qd = Mdot qd - C qd (Christoffel factorization); Mdot by a
    # directional difference along qd -- cheaper than the energy gradient
    h = 1e-6
    Mdot_qd = (mass_matrix(model, q + h * qdot) - mass_matrix(model, q - h * qdot)) @ qdot / (
        2.0 * h
    )
    ct_qd = Mdot_qd - cor
    p = M @ qdot
    u = tau - g + ct_qd
    if s._prev_integrand is None:
        prev = u + s.tau_hat_ext
    else:
        prev = s._prev_integrand
    # trapezoid with implicit tau_hat at the new sample:
    #   tau_hat = K (p - I_prev - dt/2 (prev + u + tau_hat))
    k = s.gain
    tau_hat = k * (p - s.integral - 0.5 * dt * (prev + u)) / (1.0 + 0.5 * dt * k)
    integrand = u + tau_hat
    return ObserverState(
        gain=s.gain,
        integral=s.integral + 0.5 * dt * (prev + integrand),
        tau_hat_ext=tau_hat,
        _prev_integrand=integrand,
    )


def wrench_estimate(J: np.ndarray, tau_hat: np.ndarray) -> tuple[Wrench, bool]:
    """Least-squares tool wrench from estimated joint torques.

    Solves J^T W = tau_hat; rank-deficient Jacobians yield the minimum-norm
    solution and a low-confidence flag (second return value False).
    """
    W, _, rank, _ = np.linalg.lstsq(J.T, tau_hat, rcond=1e-8)
    return Wrench(W[:3], W[3:]), rank >= 6


_WRENCH_WIRE = struct.Struct("<Id3d3dBf")


@dataclass
class WrenchMsg:
    """Follower-to-leader feedback sample.

    ``impulse_intensity`` is the follower-computed momentum-loss intensity;
    it rides along because only the follower has joint-level data.
    """

    seq: int
    t: float
    force: np.ndarray
    torque: np.ndarray
    in_contact: bool
    impulse_intensity: float = 0.0

    def to_bytes(self) -> bytes:
        return _WRENCH_WIRE.pack(
            self.seq, self.t, *self.force, *self.torque,
            int(self.in_contact), self.impulse_intensity,
        )

    @staticmethod
    def from_bytes(raw: bytes) -> "WrenchMsg":
        v = _WRENCH_WIRE.unpack(raw)
        return WrenchMsg(
            seq=v[0],
            t=v[1],
            force=np.array(v[2:5]),
            torque=np.array(v[5:8]),
            in_contact=bool(v[8]),
            impulse_intensity=float(v[9]),
        )
