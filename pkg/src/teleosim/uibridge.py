"""WebSocket bridge between the browser console and a live simulated session.

The bridge logic is plain synchronous code (testable without sockets); a
thin FastAPI application wires it to a ``/ws`` endpoint.  Messages carry a
schema version; unknown client message types are counted and ignored.

Client -> server:  {"v": 1, "type": "input",  "dp": [dx, dy, dz], "drot": [...]}
                   {"v": 1, "type": "clutch", "pressed": bool}
                   {"v": 1, "type": "hold",   "pressed": bool}
Server -> client:  {"v": 1, "type": "robot" | "wrench" | "haptic" | "cloud"
                    | "metrics", ...}

A client disconnect is treated exactly like a 100 ms command-stream gap:
the watchdog trips and the clutch disengages; re-engaging requires an
explicit clutch release + press from a reconnected client.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import ImpedanceConfig, cartesian_error, impedance_torque
from .depthcodec import deproject, synthetic_tabletop
from .dynamics import (
    ContactScene,
    RobotState,
    compute_terms,
    contact_wrench,
    named_model,
    step,
    tool_pose,
)
from .geometry import SpatialAccel, Transform, Twist, compose, rot_exp
from .haptics import ContactFSM, contact_update, impulse_intensity
from .leader import ClutchState, ViewState, desired_tool_pose, disengage_clutch, engage_clutch, update_command, update_view
from .netsim import WatchdogState
from .observer import ObserverState, observer_step, wrench_estimate
from .session import CONTROL_DT, CameraConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SNAPSHOT_RATE_HZ = 15.0
INPUT_APPLY_TICKS = 10  # device input applied at 100 Hz


@dataclass
class LiveSession:
    """Interactive follower pipeline driven by bridge input instead of a script.

    Network transport is bypassed (the WebSocket itself is the link); the
    watchdog still runs on input arrival times so a silent or disconnected
    client releases the clutch within 100 ms of simulated time.
    """

    model_name: str = "franka7"
    impedance: ImpedanceConfig = field(default_factory=ImpedanceConfig)
    observer_gain: float = 50.0
    scene: ContactScene | None = None

    def __post_init__(self) -> None:
        self.model = named_model(self.model_name)
        self.state = RobotState(q=self.model.q_rest.copy(), qdot=np.zeros(self.model.n))
        self.obs = ObserverState.create(self.model.n, gain=self.observer_gain)
        self.T_B_T0 = tool_pose(self.model, self.state.q)
        self.view = ViewState()
        self.clutch = ClutchState()
        self.watchdog = WatchdogState()
        self.fsm = ContactFSM()
        self.t = 0.0
        self._tick = 0
        self.device_pose = Transform.identity()
        self.clutch_btn = False
        self.prev_clutch_btn = False
        self.hold_btn = False
        self.desired = self.T_B_T0.copy()
        self.frozen = False
        self.wrench = np.zeros(6)
        self.in_contact = False
        self.haptic_events: list[dict] = []
        self._qdot_prev = np.zeros(self.model.n)
        self._last_cyclic_t: float | None = None
        self._release_seen = False  # explicit clutch release clears a tripped watchdog

    # ---- input side -------------------------------------------------------

    def apply_input(self, dp, drot=None) -> None:
        """Accumulate a device pose delta (meters / radians)."""
        delta = Transform(
            rot_exp(np.asarray(drot, dtype=float)) if drot is not None else np.array([1.0, 0, 0, 0]),
            np.asarray(dp, dtype=float),
        )
        self.device_pose = compose(self.device_pose, delta)
        self.watchdog.on_rx(self.t)

    def set_clutch(self, pressed: bool) -> None:
        self.clutch_btn = bool(pressed)
        if not pressed:
            self._release_seen = True
        self.watchdog.on_rx(self.t)

    def set_hold(self, pressed: bool) -> None:
        self.hold_btn = bool(pressed)
        self.watchdog.on_rx(self.t)

    def on_stream_lost(self) -> None:
        """Client went away: behave like a >100 ms gap immediately."""
        self.watchdog.tripped = True
        if self.clutch.engaged:
            self.clutch = disengage_clutch(self.clutch)
        self.clutch_btn = False
        self.prev_clutch_btn = False
        self.frozen = True
        self._release_seen = False

    # ---- simulation side --------------------------------------------------

    def advance(self, sim_dt: float) -> None:
        """Run the 1 kHz pipeline for ``sim_dt`` seconds of simulated time."""
        for _ in range(max(1, int(round(sim_dt / CONTROL_DT)))):
            self._one_tick()

    def _one_tick(self) -> None:
        now = self.t
        was = self.watchdog.tripped
        if self.watchdog.check(now) and not was:
            if self.clutch.engaged:
                self.clutch = disengage_clutch(self.clutch)
            self.frozen = True

        if self._tick % INPUT_APPLY_TICKS == 0:
            self.view, T_A_P = update_view(self.view, self.device_pose, self.hold_btn)
            if self.watchdog.tripped and self._release_seen and not self.clutch_btn:
                self.watchdog.reset(now)
                self.frozen = False
                self._release_seen = False
            if not self.watchdog.tripped:
                if self.clutch_btn and not self.prev_clutch_btn and not self.clutch.engaged:
                    self.clutch = engage_clutch(self.clutch, T_A_P)
                elif not self.clutch_btn and self.clutch.engaged:
                    self.clutch = disengage_clutch(self.clutch)
                if self.clutch.engaged:
                    self.clutch = update_command(self.clutch, T_A_P)
            self.prev_clutch_btn = self.clutch_btn
            if not self.frozen:
                self.desired = desired_tool_pose(self.T_B_T0, self.clutch)

        terms = compute_terms(self.model, self.state.q, self.state.qdot)
        W_true = (
            contact_wrench(self.scene, terms.pose, terms.twist)
            if self.scene is not None
            else np.zeros(6)
        )
        err = cartesian_error(self.desired, terms.pose, Twist(), terms.twist)
        tau, _ = impedance_torque(
            self.state, err, SpatialAccel(), self.model, self.impedance, terms
        )
        self.state = step(self.model, self.state, tau, W_true, CONTROL_DT, terms=terms)
        self.obs = observer_step(
            self.obs, self.state.q, self.state.qdot, tau, self.model, CONTROL_DT, terms=terms
        )

        if self._tick % INPUT_APPLY_TICKS == 0:
            W_est, _ = wrench_estimate(terms.J, self.obs.tau_hat_ext)
            self.wrench = W_est.as_vector()
            self.fsm, edge = contact_update(self.fsm, W_est.force_norm)
            self.in_contact = self.fsm.in_contact
            if edge == "made":
                i = impulse_intensity(terms.J, terms.M, self.state.qdot, self._qdot_prev)
                self.haptic_events.append({"t": now, "pattern": "impulse", "intensity": i})
                self._last_cyclic_t = None
            if self.in_contact:
                if self._last_cyclic_t is None or now - self._last_cyclic_t >= 0.1 - 1e-9:
                    from .haptics import cyclic_intensity

                    self.haptic_events.append(
                        {
                            "t": now,
                            "pattern": "cyclic",
                            "intensity": cyclic_intensity(self.wrench[:3]),
                        }
                    )
                    self._last_cyclic_t = now
            self._qdot_prev = self.state.qdot.copy()

        self.t += CONTROL_DT
        self._tick += 1


class UiBridge:
    """Protocol logic between one client and a :class:`LiveSession`."""

    def __init__(self, session: LiveSession, cameras: CameraConfig | None = None):
        self.session = session
        self.cameras = cameras or CameraConfig(count=1)
        self.unknown_messages = 0
        self.bad_messages = 0
        self._events_sent = 0
        self._cloud_cache: list[dict] | None = None

    # -- client -> server ---------------------------------------------------

    def handle_client_message(self, msg: dict) -> bool:
        """Apply one client message; returns False when it was ignored."""
        if not isinstance(msg, dict) or msg.get("v") != SCHEMA_VERSION:
            self.bad_messages += 1
            log.warning("rejected message with missing/unknown schema version")
            return False
        kind = msg.get("type")
        try:
            if kind == "input":
                self.session.apply_input(msg["dp"], msg.get("drot"))
            elif kind == "clutch":
                self.session.set_clutch(msg["pressed"])
            elif kind == "hold":
                self.session.set_hold(msg["pressed"])
            else:
                self.unknown_messages += 1
                log.warning("ignoring unknown client message type %r", kind)
                return False
        except (KeyError, TypeError, ValueError) as exc:
            self.bad_messages += 1
            log.warning("malformed %r message: %s", kind, exc)
            return False
        return True

    def on_disconnect(self) -> None:
        self.session.on_stream_lost()

    # -- server -> client ---------------------------------------------------

    def robot_message(self) -> dict:
        s = self.session
        pose = tool_pose(s.model, s.state.q)
        return {
            "v": SCHEMA_VERSION,
            "type": "robot",
            "t": round(s.t, 6),
            "q": [round(float(x), 6) for x in s.state.q],
            "tool_p": [round(float(x), 6) for x in pose.p],
            "tool_q": [round(float(x), 6) for x in pose.q],
            "desired_p": [round(float(x), 6) for x in s.desired.p],
            "desired_q": [round(float(x), 6) for x in s.desired.q],
            "clutch": s.clutch.engaged,
            "hold": s.view.hold,
            "watchdog": s.watchdog.tripped,
        }

    def wrench_message(self) -> dict:
        s = self.session
        return {
            "v": SCHEMA_VERSION,
            "type": "wrench",
            "force": [round(float(x), 4) for x in s.wrench[:3]],
            "torque": [round(float(x), 4) for x in s.wrench[3:]],
            "in_contact": s.in_contact,
        }

    def haptic_messages(self) -> list[dict]:
        fresh = self.session.haptic_events[self._events_sent :]
        self._events_sent = len(self.session.haptic_events)
        return [
            {
                "v": SCHEMA_VERSION,
                "type": "haptic",
                "t": round(e["t"], 6),
                "pattern": e["pattern"],
                "intensity": round(float(e["intensity"]), 4),
            }
            for e in fresh
        ]

    def cloud_messages(self) -> list[dict]:
        """Strided static point clouds; rendered once and cached."""
        if self._cloud_cache is None:
            cam = self.cameras
            out = []
            for ci in range(cam.count):
                frame = synthetic_tabletop(cam.width, cam.height, seed=ci)
                pts = deproject(frame, cam.intrinsics(), stride=cam.stride)
                out.append(
                    {
                        "v": SCHEMA_VERSION,
                        "type": "cloud",
                        "camera": ci,
                        "stride": cam.stride,
                        "points": np.round(pts, 4).tolist(),
                    }
                )
            self._cloud_cache = out
        return self._cloud_cache

    def metrics_message(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "type": "metrics",
            "t": round(self.session.t, 6),
            "unknown_messages": self.unknown_messages,
            "bad_messages": self.bad_messages,
            "haptic_events": len(self.session.haptic_events),
        }

    def snapshot(self, include_cloud: bool = False) -> list[dict]:
        out = [self.robot_message(), self.wrench_message()]
        out += self.haptic_messages()
        if include_cloud:
            out += self.cloud_messages()
        out.append(self.metrics_message())
        return out


def create_app(bridge: UiBridge | None = None, realtime: bool = True):
    """FastAPI application exposing the bridge on ``/ws``.

    ``realtime=False`` advances the simulation a fixed slice per snapshot
    instead of tracking the wall clock (deterministic for tests).
    """
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="teleop bridge")
    if bridge is None:
        bridge = UiBridge(LiveSession())
    app.state.bridge = bridge

    @app.get("/health")
    def health():
        return {"ok": True, "schema": SCHEMA_VERSION, "t": bridge.session.t}

    async def ws(sock):
        await sock.accept()
        first = True
        last_wall = time.monotonic()
        period = 1.0 / SNAPSHOT_RATE_HZ
        try:
            import asyncio

            while True:
                # drain any pending client input without blocking the loop
                try:
                    while True:
                        msg = await asyncio.wait_for(sock.receive_json(), timeout=0.001)
                        bridge.handle_client_message(msg)
                except (asyncio.TimeoutError, TimeoutError):
                    pass
                now = time.monotonic()
                slice_s = min(now - last_wall, 0.25) if realtime else period
                last_wall = now
                if slice_s > 0:
                    bridge.session.advance(slice_s)
                for m in bridge.snapshot(include_cloud=first):
                    await sock.send_json(m)
                first = False
                if realtime:
                    await asyncio.sleep(period)
        except WebSocketDisconnect:
            bridge.on_disconnect()

    # postponed annotation evaluation leaves locally imported names
    # unresolvable for the route inspector; bind the real class instead
    ws.__annotations__ = {"sock": WebSocket}
    app.websocket("/ws")(ws)

    return app
