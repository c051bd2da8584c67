"""View-indexing and command-clutch state machines on the leader side.

Frames: W is the leader world, P the handheld device, A the virtual anchor
(equivalent to the robot base in the rendered scene), H the frozen view
anchor while "hold view" is pressed, B the robot base, T the tool and D the
commanded offset frame.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import SpatialAccel, Transform, Twist, compose, invert

log = logging.getLogger(__name__)

COMMAND_RATE_HZ = 100.0


@dataclass
class ViewState:
    """Viewpoint indexing: freezes the rendered viewpoint while hold is pressed."""

    T_A_W: Transform = field(default_factory=Transform.identity)
    T_A_H: Transform = field(default_factory=Transform.identity)
    hold: bool = False


def update_view(s: ViewState, T_W_P: Transform, hold_pressed: bool) -> tuple[ViewState, Transform]:
    """Advance the view state machine one sample.

    Free: T_A_P = T_A_W * T_W_P and H tracks P.  Hold: T_A_P stays frozen at
    T_A_H while T_A_W = T_A_H * inv(T_W_P) is rebased continuously, so the
    released viewpoint is continuous.
    """
    if hold_pressed:
        T_A_P = s.T_A_H.copy()
        new = ViewState(
            T_A_W=compose(s.T_A_H, invert(T_W_P)),
            T_A_H=s.T_A_H.copy(),
            hold=True,
        )
    else:
        T_A_P = compose(s.T_A_W, T_W_P)
        new = ViewState(T_A_W=s.T_A_W.copy(), T_A_H=T_A_P.copy(), hold=False)
    return new, T_A_P


def camera_anchor(T_A_P: Transform, T_B_C_i: Transform) -> Transform:
    """Placement of camera i's point cloud in the rendered space: inv(T_A_P) * T_B_C,i."""
    return compose(invert(T_A_P), T_B_C_i)


@dataclass
class ClutchState:
    """Accumulated commanded offset of the tool from its initial pose."""

    engaged: bool = False
    T_T_D: Transform = field(default_factory=Transform.identity)
    T_A_P_at_engage: Transform = field(default_factory=Transform.identity)
    T_T_D_at_engage: Transform = field(default_factory=Transform.identity)


def engage_clutch(s: ClutchState, T_A_P: Transform) -> ClutchState:
    """Latch the engage-instant anchor. Double-engage is rejected (UI logic bug)."""
    if s.engaged:
        log.warning("engage_clutch called while already engaged; ignored")
        return s
    return ClutchState(
        engaged=True,
        T_T_D=s.T_T_D.copy(),
        T_A_P_at_engage=T_A_P.copy(),
        T_T_D_at_engage=s.T_T_D.copy(),
    )


def disengage_clutch(s: ClutchState) -> ClutchState:
    return ClutchState(engaged=False, T_T_D=s.T_T_D.copy())


def update_command(s: ClutchState, T_A_P: Transform) -> ClutchState:
    """Update the commanded offset while engaged.

    T_T_D(t) = T_T_D(tc) * [I, -p(tc)] * T_A_P(t) * [R(tc)^-1, 0]
    with p(tc), R(tc) the translation/rotation of T_A_P at the engage instant.
    Evaluates to T_T_D(tc) at t = tc, so engaging never jumps the command.
    """
    if not s.engaged:
        log.warning("update_command called while disengaged; no-op")
        return s
    anchor = s.T_A_P_at_engage
    delta = compose(
        compose(Transform.from_translation(-anchor.p), T_A_P),
        Transform.from_rotation(invert(anchor).q),
    )
    new = ClutchState(
        engaged=True,
        T_T_D=compose(s.T_T_D_at_engage, delta),
        T_A_P_at_engage=anchor.copy(),
        T_T_D_at_engage=s.T_T_D_at_engage.copy(),
    )
    return new


def desired_tool_pose(T_B_T_0: Transform, s: ClutchState) -> Transform:
    """Desired tool pose: initial tool pose composed with the accumulated offset."""
    return compose(T_B_T_0, s.T_T_D)


_CMD_WIRE = struct.Struct("<Id7d6d6dBB")  # seq, t, pose, twist, accel, clutch, hold


@dataclass
class CommandMsg:
    """Leader-to-follower command sample (one per 10 ms)."""

    seq: int
    t: float
    pose: Transform  # T_W_P
    twist: Twist
    accel: SpatialAccel
    clutch: bool
    hold: bool = False

    def to_bytes(self) -> bytes:
        return _CMD_WIRE.pack(
            self.seq,
            self.t,
            *self.pose.q,
            *self.pose.p,
            *self.twist.linear,
            *self.twist.angular,
            *self.accel.linear,
            *self.accel.angular,
            int(self.clutch),
            int(self.hold),
        )

    @staticmethod
    def from_bytes(raw: bytes) -> "CommandMsg":
        v = _CMD_WIRE.unpack(raw)
        return CommandMsg(
            seq=v[0],
            t=v[1],
            pose=Transform(np.array(v[2:6]), np.array(v[6:9])),
            twist=Twist(np.array(v[9:12]), np.array(v[12:15])),
            accel=SpatialAccel(np.array(v[15:18]), np.array(v[18:21])),
            clutch=bool(v[21]),
            hold=bool(v[22]),
        )


@dataclass
class LeaderSample:
    """One scripted or live leader pose sample."""

    t: float
    pose: Transform
    twist: Twist
    accel: SpatialAccel
    clutch: bool
    hold: bool


class ScriptedLeader:
    """Leader pose source replaying an ordered list of samples.

    Samples are held (zero-order) between records, matching the merge of a
    60 Hz pose stream into the 100 Hz command rate.
    """

    def __init__(self, samples: list[LeaderSample]):
        if not samples:
            raise ValueError("empty leader script")
        self._samples = sorted(samples, key=lambda s: s.t)
        self._idx = 0

    def sample(self, t: float) -> LeaderSample:
        while self._idx + 1 < len(self._samples) and self._samples[self._idx + 1].t <= t:
            self._idx += 1
        return self._samples[self._idx]

    def reset(self) -> None:
        self._idx = 0

    @property
    def duration(self) -> float:
        return self._samples[-1].t

    @staticmethod
    def load(path: str) -> "ScriptedLeader":
        samples = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                samples.append(_sample_from_record(json.loads(line)))
        return ScriptedLeader(samples)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            for s in self._samples:
                f.write(json.dumps(_sample_to_record(s)) + "\n")


def _sample_to_record(s: LeaderSample) -> dict:
    return {
        "t": s.t,
        "pose": list(s.pose.q) + list(s.pose.p),
        "twist": list(s.twist.as_vector()),
        "accel": list(s.accel.as_vector()),
        "clutch": s.clutch,
        "hold": s.hold,
    }


def _sample_from_record(r: dict) -> LeaderSample:
    pose = np.asarray(r["pose"], dtype=float)
    twist = np.asarray(r["twist"], dtype=float)
    accel = np.asarray(r["accel"], dtype=float)
    return LeaderSample(
        t=float(r["t"]),
        pose=Transform(pose[:4], pose[4:]),
        twist=Twist(twist[:3], twist[3:]),
        accel=SpatialAccel(accel[:3], accel[3:]),
        clutch=bool(r["clutch"]),
        hold=bool(r.get("hold", False)),
    )


def indexing_script(
    cycles: int = 4,
    stroke: float = 0.14,
    cycle_time: float = 2.0,
    rate_hz: float = COMMAND_RATE_HZ,
) -> ScriptedLeader:
    """Clutched descend / unclutched return script for workspace indexing.

    Each cycle moves the device down by ``stroke`` with the clutch engaged,
    then back up with the clutch released, so the commanded tool offset
    accumulates ``cycles * stroke`` while the device stays inside a small
    comfort zone.
    """
    samples: list[LeaderSample] = []
    dt = 1.0 / rate_hz
    half = cycle_time / 2.0
    n_half = int(round(half * rate_hz))
    t = 0.0
    for _ in range(cycles):
        for phase, clutch in ((0, True), (1, False)):
            for i in range(n_half):
                u = i / n_half
                # smooth-step z profile within the comfort zone
                sprof = u * u * (3 - 2 * u)
                z = -stroke * sprof if phase == 0 else -stroke * (1.0 - sprof)
                dz_du = -stroke * 6 * u * (1 - u) if phase == 0 else stroke * 6 * u * (1 - u)
                vz = dz_du / half
                samples.append(
                    LeaderSample(
                        t=t,
                        pose=Transform.from_translation([0.0, 0.0, z]),
                        twist=Twist([0.0, 0.0, vz], np.zeros(3)),
                        accel=SpatialAccel(),
                        clutch=clutch,
                        hold=False,
                    )
                )
                t += dt
    samples.append(
        LeaderSample(
            t=t,
            pose=Transform.identity(),
            twist=Twist(),
            accel=SpatialAccel(),
            clutch=False,
            hold=False,
        )
    )
    return ScriptedLeader(samples)


def descent_to_contact_script(
    depth: float = 0.30,
    descend_time: float = 2.0,
    hold_time: float = 2.0,
    rate_hz: float = COMMAND_RATE_HZ,
    direction: tuple[float, float, float] = (0.0, 0.0, -1.0),
) -> ScriptedLeader:
    """Single clutched straight-line push of ``depth`` along ``direction``, then hold.

    Device deltas map into the tool frame, so the direction that drives the
    tool toward a surface depends on the initial tool orientation (a
    downward-facing tool descends for device -z).
    """
    d = np.asarray(direction, dtype=float)
    samples: list[LeaderSample] = []
    dt = 1.0 / rate_hz
    n_down = int(round(descend_time * rate_hz))
    for i in range(n_down):
        u = i / n_down
        sprof = u * u * (3 - 2 * u)
        v = depth * 6 * u * (1 - u) / descend_time
        samples.append(
            LeaderSample(
                t=i * dt,
                pose=Transform.from_translation(d * depth * sprof),
                twist=Twist(d * v, np.zeros(3)),
                accel=SpatialAccel(),
                clutch=True,
                hold=False,
            )
        )
    n_hold = int(round(hold_time * rate_hz))
    for i in range(n_hold):
        samples.append(
            LeaderSample(
                t=descend_time + i * dt,
                pose=Transform.from_translation(d * depth),
                twist=Twist(),
                accel=SpatialAccel(),
                clutch=True,
                hold=False,
            )
        )
    return ScriptedLeader(samples)
