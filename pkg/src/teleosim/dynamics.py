"""Serial-chain rigid-body dynamics with penalty contacts.

All quantities are computed in the world frame.  The mass matrix comes from
the composite-rigid-body algorithm written about the world origin (composite
spatial inertias add without frame shifts there), bias terms from recursive
Newton-Euler passes, and the Coriolis-transpose product needed by the
momentum observer from the gradient of kinetic energy:

    C^T(q, qd) qd = d/dq [ 1/2 qd^T M(q) qd ]

which holds for the Christoffel factorization of C.

Spatial vectors are ordered [angular; linear] internally; the public
Jacobian is stacked [linear; angular] to match Twist.as_vector().
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Transform, Twist, quat_from_matrix, quat_to_matrix, skew

GRAVITY = 9.81


class ModelError(RuntimeError):
    """Raised for structurally invalid models (non-SPD inertia, singular M)."""


@dataclass
class Joint:
    axis: np.ndarray                 # unit axis in the joint frame
    origin: Transform                # parent frame -> joint frame at q = 0
    mass: float
    com: np.ndarray                  # center of mass, joint frame (m)
    inertia: np.ndarray              # 3x3 rotational inertia about com, joint frame
    q_min: float = -np.pi
    q_max: float = np.pi

    def __post_init__(self) -> None:
        self.axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(self.axis)
        if n == 0:
            raise ModelError("joint axis must be nonzero")
        self.axis = self.axis / n
        self.com = np.asarray(self.com, dtype=float)
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.inertia.shape == (3,):
            self.inertia = np.diag(self.inertia)
        if not np.allclose(self.inertia, self.inertia.T):
            raise ModelError("inertia must be symmetric")
        if np.linalg.eigvalsh(self.inertia)[0] <= 0:
            raise ModelError("inertia must be positive definite")
        # cached rotation/translation of the fixed origin offset
        self._R_off = self.origin.rotation_matrix()
        self._p_off = self.origin.p
        self._K = skew(self.axis)
        self._K2 = self._K @ self._K


@dataclass
class RobotModel:
    joints: list[Joint]
    tool: Transform = field(default_factory=Transform.identity)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY]))
    q_rest: np.ndarray | None = None
    name: str = "robot"

    def __post_init__(self) -> None:
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.q_rest is None:
            self.q_rest = np.zeros(len(self.joints))
        else:
            self.q_rest = np.asarray(self.q_rest, dtype=float)

    @property
    def n(self) -> int:
        return len(self.joints)


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.qdot.copy(), self.t)


# ---------------------------------------------------------------------------
# kinematics


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy axis-normalization overhead for plain 3-vectors;
    # this path is hot (dozens of calls per 1 kHz tick)
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _joint_rotation(jnt: Joint, qi: float) -> np.ndarray:
    # Rodrigues about the (fixed) joint axis
    return np.eye(3) + np.sin(qi) * jnt._K + (1.0 - np.cos(qi)) * jnt._K2


def _fk(model: RobotModel, q: np.ndarray):
    """World rotation, frame origin, joint axis, world com and world inertia per joint."""
    n = model.n
    R = np.empty((n, 3, 3))
    o = np.empty((n, 3))
    z = np.empty((n, 3))
    c = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    Rp = np.eye(3)
    op = np.zeros(3)
    for i, jnt in enumerate(model.joints):
        oi = op + Rp @ jnt._p_off
        Rpre = Rp @ jnt._R_off
        zi = Rpre @ jnt.axis
        Ri = Rpre @ _joint_rotation(jnt, q[i])
        R[i] = Ri
        o[i] = oi
        z[i] = zi
        c[i] = oi + Ri @ jnt.com
        Iw[i] = Ri @ jnt.inertia @ Ri.T
        Rp, op = Ri, oi
    return R, o, z, c, Iw


def tool_pose(model: RobotModel, q: np.ndarray, fk=None) -> Transform:
    R, o, _, _, _ = fk if fk is not None else _fk(model, q)
    Rt = R[-1] @ model.tool.rotation_matrix()
    pt = o[-1] + R[-1] @ model.tool.p
    return Transform(quat_from_matrix(Rt), pt)


def jacobian(model: RobotModel, q: np.ndarray, qdot: np.ndarray | None = None):
    """Geometric tool Jacobian (6xN, [linear; angular] rows).

    With ``qdot`` given, also returns Jdot from a central difference along
    the instantaneous joint trajectory.
    """
    J = _jacobian_only(model, q)
    if qdot is None:
        return J
    h = 1e-6
    Jp = _jacobian_only(model, q + h * qdot)
    Jm = _jacobian_only(model, q - h * qdot)
    Jdot = (Jp - Jm) / (2.0 * h)
    return J, Jdot


def _jacobian_only(model: RobotModel, q: np.ndarray, fk=None) -> np.ndarray:
    R, o, z, _, _ = fk if fk is not None else _fk(model, q)
    pt = o[-1] + R[-1] @ model.tool.p
    J = np.zeros((6, model.n))
    for i in range(model.n):
        J[:3, i] = _cross(z[i], pt - o[i])
        J[3:, i] = z[i]
    return J


def tool_twist(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> Twist:
    v = _jacobian_only(model, q) @ qdot
    return Twist(v[:3], v[3:])


# ---------------------------------------------------------------------------
# dynamics


def rnea(
    model: RobotModel,
    q: np.ndarray,
    qdot: np.ndarray,
    qddot: np.ndarray,
    gravity: bool = True,
    fk=None,
) -> np.ndarray:
    """Inverse dynamics: joint torques realizing (q, qd, qdd) with no external wrench."""
    n = model.n
    R, o, z, c, Iw = fk if fk is not None else _fk(model, q)
    w = np.zeros(3)      # angular velocity of parent
    al = np.zeros(3)     # angular acceleration of parent
    ao = -model.gravity if gravity else np.zeros(3)  # frame-origin accel (gravity trick)
    op = np.zeros(3)
    W = np.empty((n, 3))
    AL = np.empty((n, 3))
    AC = np.empty((n, 3))
    for i in range(n):
        d = o[i] - op
        aoi = ao + _cross(al, d) + _cross(w, _cross(w, d))
        wi = w + z[i] * qdot[i]
        ali = al + z[i] * qddot[i] + _cross(w, z[i]) * qdot[i]
        rc = c[i] - o[i]
        AC[i] = aoi + _cross(ali, rc) + _cross(wi, _cross(wi, rc))
        W[i], AL[i] = wi, ali
        w, al, ao, op = wi, ali, aoi, o[i]
    tau = np.empty(n)
    f = np.zeros(3)
    nt = np.zeros(3)
    child_o = None
    for i in range(n - 1, -1, -1):
        m = model.joints[i].mass
        Fi = m * AC[i]
        Ni = Iw[i] @ AL[i] + _cross(W[i], Iw[i] @ W[i])
        if child_o is not None:
            nt = nt + _cross(child_o - o[i], f)
        nt = nt + Ni + _cross(c[i] - o[i], Fi)
        f = f + Fi
        tau[i] = z[i] @ nt
        child_o = o[i]
    return tau


def mass_matrix(model: RobotModel, q: np.ndarray, fk=None) -> np.ndarray:
    """Composite-rigid-body mass matrix, assembled about the world origin."""
    n = model.n
    _, o, z, c, Iw = fk if fk is not None else _fk(model, q)
    # per-body spatial inertia at the world origin ([angular; linear] convention)
    Ic = np.zeros((6, 6))
    S = np.empty((n, 6))
    Isp = np.empty((n, 6, 6))
    for i in range(n):
        m = model.joints[i].mass
        ch = skew(c[i])
        Isp[i, :3, :3] = Iw[i] - m * ch @ ch
        Isp[i, :3, 3:] = m * ch
        Isp[i, 3:, :3] = -m * ch
        Isp[i, 3:, 3:] = m * np.eye(3)
        S[i, :3] = z[i]
        S[i, 3:] = _cross(o[i], z[i])
    M = np.empty((n, n))
    for i in range(n - 1, -1, -1):
        Ic = Ic + Isp[i]
        Fi = Ic @ S[i]
        M[i, i] = S[i] @ Fi
        for j in range(i):
            M[i, j] = M[j, i] = S[j] @ Fi
    return M


def bias_terms(model: RobotModel, q: np.ndarray, qdot: np.ndarray):
    """Coriolis vector C(q, qd) qd and gravity vector g(q)."""
    g = rnea(model, q, np.zeros_like(q), np.zeros_like(q))
    cor = rnea(model, q, qdot, np.zeros_like(q), gravity=False)
    return cor, g


def kinetic_energy(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> float:
    return float(_kinetic_energy_batch(model, q[None, :], qdot)[0])


def _kinetic_energy_batch(model: RobotModel, Q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Kinetic energy for a batch of configurations sharing one velocity vector."""
    B, n = Q.shape
    Rp = np.broadcast_to(np.eye(3), (B, 3, 3))
    op = np.zeros((B, 3))
    w = np.zeros((B, 3))
    vo = np.zeros((B, 3))
    E = np.zeros(B)
    for i, jnt in enumerate(model.joints):
        th = Q[:, i]
        Rj = (
            np.eye(3)[None]
            + np.sin(th)[:, None, None] * jnt._K[None]
            + (1.0 - np.cos(th))[:, None, None] * jnt._K2[None]
        )
        Rpre = Rp @ jnt._R_off
        oi = op + np.einsum("bij,j->bi", Rp, jnt._p_off)
        Ri = Rpre @ Rj
        zi = np.einsum("bij,j->bi", Rpre, jnt.axis)
        voi = vo + np.cross(w, oi - op)
        wi = w + zi * qdot[i]
        ci = oi + np.einsum("bij,j->bi", Ri, jnt.com)
        vci = voi + np.cross(wi, ci - oi)
        Iwi = Ri @ jnt.inertia @ np.transpose(Ri, (0, 2, 1))
        E += 0.5 * jnt.mass * np.einsum("bi,bi->b", vci, vci)
        E += 0.5 * np.einsum("bi,bij,bj->b", wi, Iwi, wi)
        Rp, op, w, vo = Ri, oi, wi, voi
    return E


def coriolis_transpose_qdot(
    model: RobotModel, q: np.ndarray, qdot: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """C^T(q, qd) qd as the kinetic-energy gradient (central differences)."""
    n = model.n
    Q = np.repeat(q[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    Q[idx, idx] += h
    Q[n + idx, idx] -= h
    E = _kinetic_energy_batch(model, Q, qdot)
    return (E[:n] - E[n:]) / (2.0 * h)


def mass_matrix_partials(model: RobotModel, q: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """dM/dq_k, shape (N, N, N) indexed [k, i, j]."""
    n = model.n
    dM = np.empty((n, n, n))
    for k in range(n):
        qp = q.copy()
        qm = q.copy()
        qp[k] += h
        qm[k] -= h
        dM[k] = (mass_matrix(model, qp) - mass_matrix(model, qm)) / (2.0 * h)
    return dM


def coriolis_matrix(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Christoffel-symbol Coriolis matrix (satisfies Mdot - 2C skew-symmetric)."""
    dM = mass_matrix_partials(model, q)
    # c_ijk = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i)
    C = 0.5 * (
        np.einsum("kij,k->ij", dM, qdot)
        + np.einsum("jik,k->ij", dM, qdot)
        - np.einsum("ijk,k->ij", dM, qdot)
    )
    return C


def mdot_matrix(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    dM = mass_matrix_partials(model, q)
    return np.einsum("kij,k->ij", dM, qdot)


# ---------------------------------------------------------------------------
# contact


@dataclass
class HalfSpace:
    """Penalty obstacle occupying ``normal . x <= offset``."""

    normal: np.ndarray
    offset: float
    stiffness: float = 1e4
    damping: float = 200.0
    friction: float = 0.2

    def __post_init__(self) -> None:
        self.normal = np.asarray(self.normal, dtype=float)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-6:
            raise ModelError("half-space normal must be unit length")
        if self.stiffness < 0 or self.damping < 0:
            raise ModelError("contact stiffness/damping must be non-negative")


@dataclass
class ContactScene:
    obstacles: list[HalfSpace] = field(default_factory=list)


def contact_wrench(scene: ContactScene, pose: Transform, twist: Twist) -> np.ndarray:
    """Point-contact wrench [force; torque] at the tool origin, world frame.

    Spring-damper along the obstacle normal, clamped non-adhesive; viscous
    tangential drag scaled by the normal load.  Zero torque (point contact).
    """
    force = np.zeros(3)
    p = pose.p
    v = twist.linear
    for obs in scene.obstacles:
        depth = obs.offset - obs.normal @ p
        if depth <= 0.0:
            continue
        depth_rate = -(obs.normal @ v)
        fn = obs.stiffness * depth + obs.damping * depth_rate
        if fn <= 0.0:
            continue
        vt = v - (obs.normal @ v) * obs.normal
        force += fn * obs.normal - obs.friction * fn * vt
    return np.concatenate([force, np.zeros(3)])


# ---------------------------------------------------------------------------
# integration


@dataclass
class DynTerms:
    """Per-step dynamic quantities shared between simulator, controller and observer."""

    M: np.ndarray
    coriolis: np.ndarray    # C(q,qd) qd
    gravity: np.ndarray
    J: np.ndarray
    Jdot: np.ndarray
    pose: Transform
    twist: Twist


def compute_terms(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> DynTerms:
    fk = _fk(model, q)
    zero = np.zeros_like(q)
    M = mass_matrix(model, q, fk=fk)
    g = rnea(model, q, zero, zero, fk=fk)
    cor = rnea(model, q, qdot, zero, gravity=False, fk=fk)
    J = _jacobian_only(model, q, fk=fk)
    h = 1e-6
    Jdot = (_jacobian_only(model, q + h * qdot) - _jacobian_only(model, q - h * qdot)) / (
        2.0 * h
    )
    v = J @ qdot
    return DynTerms(M, cor, g, J, Jdot, tool_pose(model, q, fk=fk), Twist(v[:3], v[3:]))


def step(
    model: RobotModel,
    state: RobotState,
    tau: np.ndarray,
    W_ext: np.ndarray,
    dt: float,
    terms: DynTerms | None = None,
) -> RobotState:
    """Semi-implicit Euler step of M qdd + C qd + g = tau + J^T W_ext."""
    if not (0.0 < dt <= 2e-3):
        raise ValueError(f"dt {dt} outside (0, 2 ms]")
    if not np.all(np.isfinite(tau)):
        raise ValueError("non-finite joint torque")
    if terms is None:
        terms = compute_terms(model, state.q, state.qdot)
    rhs = tau + terms.J.T @ np.asarray(W_ext, dtype=float) - terms.coriolis - terms.gravity
    try:
        qdd = np.linalg.solve(terms.M, rhs)
    except np.linalg.LinAlgError as exc:  # cannot happen for SPD link inertias
        raise ModelError("singular mass matrix") from exc
    qdot = state.qdot + dt * qdd
    q = state.q + dt * qdot
    for i, jnt in enumerate(model.joints):
        if q[i] < jnt.q_min:
            q[i] = jnt.q_min
            qdot[i] = max(qdot[i], 0.0)
        elif q[i] > jnt.q_max:
            q[i] = jnt.q_max
            qdot[i] = min(qdot[i], 0.0)
    return RobotState(q, qdot, state.t + dt)


def total_energy(model: RobotModel, state: RobotState) -> float:
    """Kinetic plus gravitational potential energy."""
    _, _, _, c, _ = _fk(model, state.q)
    pot = -sum(
        jnt.mass * (model.gravity @ ci) for jnt, ci in zip(model.joints, c)
    )
    return kinetic_energy(model, state.q, state.qdot) + pot


# ---------------------------------------------------------------------------
# model presets and file I/O


def planar_3dof() -> RobotModel:
    """Planar 3-link arm in the x-y plane (joints about z); analytic cross-checks."""
    links = [(0.40, 4.0), (0.30, 3.0), (0.20, 1.0)]
    joints = []
    prev = 0.0
    for length, mass in links:
        joints.append(
            Joint(
                axis=[0, 0, 1],
                origin=Transform.from_translation([prev, 0, 0]),
                mass=mass,
                com=[length / 2.0, 0, 0],
                inertia=np.diag([1e-4, mass * length**2 / 12.0, mass * length**2 / 12.0]),
                q_min=-2.9,
                q_max=2.9,
            )
        )
        prev = length
    return RobotModel(
        joints=joints,
        tool=Transform.from_translation([links[-1][0], 0, 0]),
        gravity=np.array([0.0, -GRAVITY, 0.0]),
        q_rest=np.array([0.4, 0.6, 0.3]),
        name="planar3",
    )


def franka_like_7dof() -> RobotModel:
    """7-DOF chain with Franka-style datasheet geometry and approximate inertias."""
    # modified DH rows: (a, d, alpha); joint axis is local z
    dh = [
        (0.0, 0.333, 0.0),
        (0.0, 0.0, -np.pi / 2),
        (0.0, 0.316, np.pi / 2),
        (0.0825, 0.0, np.pi / 2),
        (-0.0825, 0.384, -np.pi / 2),
        (0.0, 0.0, np.pi / 2),
        (0.088, 0.0, np.pi / 2),
    ]
    masses = [4.97, 0.65, 3.23, 3.59, 1.23, 1.67, 0.74]
    coms = [
        [0.0, -0.03, -0.08],
        [0.0, -0.07, 0.03],
        [0.03, 0.03, -0.07],
        [-0.05, 0.10, 0.03],
        [0.0, 0.03, -0.10],
        [0.06, -0.01, 0.01],
        [0.01, 0.01, 0.08],
    ]
    inertias = [0.30, 0.30, 0.06, 0.05, 0.03, 0.012, 0.008]
    limits = [
        (-2.897, 2.897),
        (-1.763, 1.763),
        (-2.897, 2.897),
        (-3.072, -0.07),
        (-2.897, 2.897),
        (-0.018, 3.752),
        (-2.897, 2.897),
    ]
    joints = []
    for (a, d, alpha), m, com, ii, (lo, hi) in zip(dh, masses, coms, inertias, limits):
        ca, sa = np.cos(alpha), np.sin(alpha)
        Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
        origin = Transform(quat_from_matrix(Rx), np.array([a, 0.0, 0.0]))
        origin = Transform(origin.q, origin.p + Rx @ np.array([0.0, 0.0, d]))
        joints.append(
            Joint(
                axis=[0, 0, 1],
                origin=origin,
                mass=m,
                com=com,
                inertia=np.diag([ii, ii, ii * 0.6]),
                q_min=lo,
                q_max=hi,
            )
        )
    return RobotModel(
        joints=joints,
        tool=Transform.from_translation([0.0, 0.0, 0.107]),
        q_rest=np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0, np.pi / 2, np.pi / 4]),
        name="franka7",
    )


_PRESETS = {"planar3": planar_3dof, "franka7": franka_like_7dof}


def named_model(name: str) -> RobotModel:
    if name not in _PRESETS:
        raise ModelError(f"unknown model preset {name!r}")
    return _PRESETS[name]()


def save_model(model: RobotModel, path: str) -> None:
    doc = {
        "name": model.name,
        "gravity": list(model.gravity),
        "q_rest": list(model.q_rest),
        "tool": list(model.tool.q) + list(model.tool.p),
        "joints": [
            {
                "axis": list(j.axis),
                "origin": list(j.origin.q) + list(j.origin.p),
                "mass": j.mass,
                "com": list(j.com),
                "inertia": [list(row) for row in j.inertia],
                "limits": [j.q_min, j.q_max],
            }
            for j in model.joints
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_model(path: str) -> RobotModel:
    with open(path) as f:
        doc = json.load(f)
    joints = []
    for j in doc["joints"]:
        org = np.asarray(j["origin"], dtype=float)
        joints.append(
            Joint(
                axis=j["axis"],
                origin=Transform(org[:4], org[4:]),
                mass=float(j["mass"]),
                com=j["com"],
                inertia=np.asarray(j["inertia"], dtype=float),
                q_min=float(j["limits"][0]),
                q_max=float(j["limits"][1]),
            )
        )
    tool = np.asarray(doc["tool"], dtype=float)
    return RobotModel(
        joints=joints,
        tool=Transform(tool[:4], tool[4:]),
        gravity=np.asarray(doc["gravity"], dtype=float),
        q_rest=np.asarray(doc["q_rest"], dtype=float),
        name=doc.get("name", "robot"),
    )
