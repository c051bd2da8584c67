"""End-to-end session orchestration on a deterministic virtual clock.

One coordinator advances a 1 ms clock.  Per tick it (a) emits leader
commands at 100 Hz into the uplink channel, (b) delivers due datagrams on
both links, (c) runs the follower pipeline -- watchdog, view/clutch state
machines, impedance control, simulation, momentum observer -- at 1 kHz,
(d) emits wrench feedback at 100 Hz and camera frames at the configured
fps through the priority shaper on the downlink, and (e) turns delivered
wrench messages into haptic events on the leader side.

Everything stochastic draws from generators spawned off the session seed,
so a (config, seed) pair reproduces the log byte for byte.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .controller import (
    ControllerFault,
    ImpedanceConfig,
    cartesian_error,
    impedance_torque,
)
from .depthcodec import (
    CameraIntrinsics,
    ColorStreamConfig,
    color_payload_model,
    encode_depth,
    synthetic_tabletop,
)
from .dynamics import (
    ContactScene,
    HalfSpace,
    RobotState,
    compute_terms,
    contact_wrench,
    named_model,
    step,
    tool_pose,
)
from .geometry import SpatialAccel, Transform, Twist
from .haptics import HapticStreamState, contact_update, feed_haptics, impulse_intensity
from .leader import (
    ClutchState,
    CommandMsg,
    ScriptedLeader,
    ViewState,
    desired_tool_pose,
    disengage_clutch,
    engage_clutch,
    update_command,
    update_view,
)
from .netsim import (
    ChannelModel,
    PriorityShaper,
    Reassembler,
    StreamId,
    TrafficClass,
    WatchdogState,
    channel_profile,
    fragment,
    rtt_probe,
)
from .observer import ObserverState, WrenchMsg, observer_step, wrench_estimate

CONTROL_DT = 1e-3
COMMAND_PERIOD_TICKS = 10  # 100 Hz at the 1 kHz base clock


class ConfigError(ValueError):
    """Invalid session configuration."""


@dataclass
class CameraConfig:
    count: int = 4
    width: int = 848
    height: int = 480
    fps: float = 30.0
    color_bitrate_bps: float = 15e6
    stride: int = 4  # point-cloud decimation for render snapshots

    def __post_init__(self) -> None:
        if self.fps not in (15.0, 30.0, 60.0):
            raise ConfigError("camera fps must be one of 15, 30, 60")
        if self.count < 0:
            raise ConfigError("camera count must be non-negative")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=0.5 * self.width, fy=0.5 * self.width,
            cx=self.width / 2.0, cy=self.height / 2.0,
        )


@dataclass
class SessionConfig:
    model: str = "franka7"
    duration: float = 5.0
    seed: int = 0
    script: ScriptedLeader | None = None
    impedance: ImpedanceConfig = field(default_factory=ImpedanceConfig)
    observer_gain: float = 50.0
    scene: ContactScene | None = None
    channel: str | tuple[ChannelModel, ChannelModel] = "ideal"
    video_cap_mbps: float = 60.0
    cameras: CameraConfig | None = field(default_factory=CameraConfig)
    wrench_rate_hz: float = 100.0
    log_joint_state: bool = False  # 1 kHz joint records make logs large
    probe_rtt: bool = False

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not (0 < self.video_cap_mbps <= 1000):
            raise ConfigError("video cap out of range")
        if self.wrench_rate_hz <= 0 or self.wrench_rate_hz > 1000:
            raise ConfigError("wrench rate out of range")

    def channels(self) -> tuple[ChannelModel, ChannelModel]:
        """(uplink leader->follower, downlink follower->leader)."""
        if isinstance(self.channel, str):
            return channel_profile(self.channel), channel_profile(self.channel)
        up, down = self.channel
        return up, down


def table_scene(z: float = 0.30, stiffness: float = 1e4) -> ContactScene:
    """Horizontal table occupying z <= ``z`` in the robot base frame."""
    return ContactScene([HalfSpace(normal=[0.0, 0.0, 1.0], offset=z, stiffness=stiffness)])


@dataclass
class SessionLog:
    """Deterministically serializable record of one session."""

    config_digest: str = ""
    records: list[dict] = field(default_factory=list)
    haptic_events: list[dict] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    rtt_summary: dict | None = None
    aborted: bool = False
    abort_reason: str = ""

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def to_jsonl(self) -> str:
        header = {
            "schema": 1,
            "kind": "session-log",
            "config_digest": self.config_digest,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }
        lines = [_dump(header)]
        lines += [_dump(r) for r in self.records]
        lines += [_dump({"kind": "haptic", **e}) for e in self.haptic_events]
        lines.append(_dump({"kind": "counters", **self.counters}))
        if self.rtt_summary is not None:
            lines.append(_dump({"kind": "rtt", **self.rtt_summary}))
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_jsonl())

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    @staticmethod
    def load(path: str) -> "SessionLog":
        log = SessionLog()
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                kind = rec.pop("kind", "record")
                if kind == "session-log":
                    log.config_digest = rec.get("config_digest", "")
                    log.aborted = rec.get("aborted", False)
                    log.abort_reason = rec.get("abort_reason", "")
                elif kind == "haptic":
                    log.haptic_events.append(rec)
                elif kind == "counters":
                    log.counters = rec
                elif kind == "rtt":
                    log.rtt_summary = rec
                else:
                    log.records.append(rec)
        return log


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _round(x: float) -> float:
    # fixed decimal quantization keeps logs byte-stable across platforms
    return round(float(x), 12)


def _vec(v: np.ndarray) -> list[float]:
    return [_round(x) for x in np.asarray(v, dtype=float)]


def _config_digest(cfg: SessionConfig) -> str:
    blob = {
        "model": cfg.model,
        "duration": cfg.duration,
        "seed": cfg.seed,
        "channel": cfg.channel if isinstance(cfg.channel, str) else "custom",
        "video_cap_mbps": cfg.video_cap_mbps,
        "observer_gain": cfg.observer_gain,
        "cameras": None
        if cfg.cameras is None
        else [cfg.cameras.count, cfg.cameras.width, cfg.cameras.height, cfg.cameras.fps],
    }
    return hashlib.sha256(_dump(blob).encode()).hexdigest()[:16]


class _Link:
    """One channel direction plus its delivery queue and byte accounting."""

    def __init__(self, channel: ChannelModel, rng: np.random.Generator):
        self.channel = channel
        self.rng = rng
        self._heap: list = []
        self._tie = 0
        self.sent_bytes = {}
        self.delivered_bytes = {}
        self.lost_datagrams = 0

    def send(self, d, now: float) -> None:
        sid = int(d.stream)
        self.sent_bytes[sid] = self.sent_bytes.get(sid, 0) + d.size
        deliveries = self.channel.transfer(d, now, self.rng)
        if not deliveries:
            self.lost_datagrams += 1
        for t_arr, dg in deliveries:
            self._tie += 1
            heapq.heappush(self._heap, (t_arr, self._tie, dg))

    def due(self, now: float) -> list:
        out = []
        while self._heap and self._heap[0][0] <= now:
            t_arr, _, dg = heapq.heappop(self._heap)
            sid = int(dg.stream)
            self.delivered_bytes[sid] = self.delivered_bytes.get(sid, 0) + dg.size
            out.append((t_arr, dg))
        return out

    @property
    def in_flight(self) -> int:
        return len(self._heap)


def run_session(cfg: SessionConfig) -> SessionLog:
    """Run one scripted session; returns the complete (or flagged-partial) log."""
    model = named_model(cfg.model)
    from .leader import indexing_script

    script = cfg.script if cfg.script is not None else indexing_script()
    script.reset()
    ch_up, ch_down = cfg.channels()

    ss = np.random.SeedSequence(cfg.seed)
    rng_up, rng_down, rng_probe = [np.random.default_rng(s) for s in ss.spawn(3)]

    up = _Link(ch_up, rng_up)
    down = _Link(ch_down, rng_down)
    shaper = PriorityShaper(video_cap_mbps=cfg.video_cap_mbps)
    reasm = Reassembler()
    watchdog = WatchdogState()

    log = SessionLog(config_digest=_config_digest(cfg))
    if cfg.probe_rtt:
        pr = rtt_probe(ch_up, ch_down, n=2000, rng=rng_probe)
        log.rtt_summary = {
            "min_ms": _round(pr["min_ms"]),
            "mean_ms": _round(pr["mean_ms"]),
            "max_ms": _round(pr["max_ms"]),
            "lost": pr["lost"],
            "sent": pr["sent"],
        }

    # follower
    state = RobotState(q=model.q_rest.copy(), qdot=np.zeros(model.n))
    obs = ObserverState.create(model.n, gain=cfg.observer_gain)
    T_B_T0 = tool_pose(model, state.q)
    view = ViewState()
    clutch = ClutchState()
    applied: CommandMsg | None = None
    last_seq = -1
    prev_clutch_btn = False
    desired = T_B_T0.copy()
    desired_twist = Twist()
    desired_accel = SpatialAccel()
    frozen = False  # watchdog freeze of the desired pose
    fol_fsm_contact = False
    from .haptics import ContactFSM

    fol_fsm = ContactFSM()
    qdot_at_last_wrench = np.zeros(model.n)

    # leader side
    haptics_state = HapticStreamState()
    haptic_events = []

    # cameras: static scene per camera, encoded once and replayed per frame
    cam_payloads: list[bytes] = []
    color_cfgs: list[ColorStreamConfig] = []
    if cfg.cameras is not None and cfg.cameras.count > 0:
        cam = cfg.cameras
        for ci in range(cam.count):
            frame = synthetic_tabletop(cam.width, cam.height, seed=cfg.seed * 101 + ci)
            cam_payloads.append(encode_depth(frame).to_bytes())
            color_cfgs.append(
                ColorStreamConfig(
                    bitrate_bps=cam.color_bitrate_bps, fps=cam.fps, seed=cfg.seed * 131 + ci
                )
            )
        cam_period_ticks = int(round(1000.0 / cam.fps))
    else:
        cam_period_ticks = 0

    wrench_period_ticks = max(1, int(round(1000.0 / cfg.wrench_rate_hz)))

    n_ticks = int(round(cfg.duration / CONTROL_DT))
    cmd_seq = 0
    wrench_seq = 0
    frame_id = 0
    dg_seq_up = 0
    dg_seq_down = 0
    latency_sum = 0.0
    latency_max = 0.0
    latency_n = 0
    cmd_applied = 0
    watchdog_trips = 0
    video_frames_delivered = 0

    try:
        for n in range(n_ticks):
            now = n * CONTROL_DT

            # ---- leader: command emission at 100 Hz
            if n % COMMAND_PERIOD_TICKS == 0 and now <= script.duration:
                s = script.sample(now)
                msg = CommandMsg(
                    seq=cmd_seq, t=now, pose=s.pose, twist=s.twist,
                    accel=s.accel, clutch=s.clutch, hold=s.hold,
                )
                cmd_seq += 1
                for d in fragment(StreamId.COMMAND, msg.seq, msg.to_bytes(), dg_seq_up, int(now * 1e6)):
                    dg_seq_up += 1
                    up.send(d, now)

            # ---- follower: receive commands (latest-wins)
            newest: CommandMsg | None = None
            for _t_arr, dg in up.due(now):
                if dg.stream != StreamId.COMMAND:
                    continue
                msg = CommandMsg.from_bytes(dg.payload)
                if msg.seq <= last_seq:
                    continue
                last_seq = msg.seq
                newest = msg
            if newest is not None:
                watchdog.on_rx(now)
                lat = now - newest.t
                latency_sum += lat
                latency_max = max(latency_max, lat)
                latency_n += 1
                cmd_applied += 1
                applied = newest

            # ---- watchdog
            was_tripped = watchdog.tripped
            if watchdog.check(now) and not was_tripped:
                watchdog_trips += 1
                if clutch.engaged:
                    clutch = disengage_clutch(clutch)
                frozen = True
                desired_twist = Twist()
                desired_accel = SpatialAccel()

            # ---- view / clutch state machines on the applied command
            if applied is not None:
                view, T_A_P = update_view(view, applied.pose, applied.hold)
                btn = applied.clutch
                if watchdog.tripped and not btn:
                    # explicit release clears the latch; re-engage is then allowed
                    watchdog.reset(now)
                    frozen = False
                if not watchdog.tripped:
                    if btn and not prev_clutch_btn and not clutch.engaged:
                        clutch = engage_clutch(clutch, T_A_P)
                    elif not btn and clutch.engaged:
                        clutch = disengage_clutch(clutch)
                    if clutch.engaged:
                        clutch = update_command(clutch, T_A_P)
                prev_clutch_btn = btn
                if not frozen:
                    desired = desired_tool_pose(T_B_T0, clutch)
                    if clutch.engaged:
                        desired_twist = applied.twist
                        desired_accel = applied.accel
                    else:
                        desired_twist = Twist()
                        desired_accel = SpatialAccel()
                applied = None

            # ---- control + simulation + observer at 1 kHz
            terms = compute_terms(model, state.q, state.qdot)
            W_true = (
                contact_wrench(cfg.scene, terms.pose, terms.twist)
                if cfg.scene is not None
                else np.zeros(6)
            )
            err = cartesian_error(desired, terms.pose, desired_twist, terms.twist)
            tau, info = impedance_torque(
                state, err, desired_accel, model, cfg.impedance, terms, xdot_d=desired_twist
            )
            state = step(model, state, tau, W_true, CONTROL_DT, terms=terms)
            obs = observer_step(obs, state.q, state.qdot, tau, model, CONTROL_DT, terms=terms)

            # ---- wrench feedback at the feedback rate
            if n % wrench_period_ticks == 0:
                W_est, _conf = wrench_estimate(terms.J, obs.tau_hat_ext)
                fol_fsm, edge = contact_update(fol_fsm, W_est.force_norm)
                fol_fsm_contact = fol_fsm.in_contact
                imp = 0.0
                if edge == "made":
                    imp = impulse_intensity(
                        terms.J, terms.M, state.qdot, qdot_at_last_wrench
                    )
                qdot_at_last_wrench = state.qdot.copy()
                wmsg = WrenchMsg(
                    seq=wrench_seq, t=now, force=W_est.force, torque=W_est.torque,
                    in_contact=fol_fsm_contact, impulse_intensity=imp,
                )
                wrench_seq += 1
                for d in fragment(
                    StreamId.WRENCH, wmsg.seq, wmsg.to_bytes(), dg_seq_down, int(now * 1e6)
                ):
                    dg_seq_down += 1
                    shaper.enqueue(d)

                log.append(
                    {
                        "t": _round(now),
                        "leader_z": _round(
                            script.sample(now).pose.p[2] if now <= script.duration else 0.0
                        ),
                        "clutch": clutch.engaged,
                        "hold": view.hold,
                        "desired_p": _vec(desired.p),
                        "desired_q": _vec(desired.q),
                        "tool_p": _vec(terms.pose.p),
                        "tool_q": _vec(terms.pose.q),
                        "err_norm": _round(np.linalg.norm(err.e[:3])),
                        "f_true": _vec(W_true[:3]),
                        "f_est": _vec(W_est.force),
                        "in_contact": fol_fsm_contact,
                        "saturated": bool(np.any(info["saturation_active"])),
                    }
                )
            if cfg.log_joint_state:
                log.append(
                    {
                        "t": _round(now),
                        "q": _vec(state.q),
                        "qdot": _vec(state.qdot),
                        "tau": _vec(tau),
                        "w_ext_true": _vec(W_true),
                    }
                )

            # ---- cameras into the shaper
            if cam_period_ticks and n % cam_period_ticks == 0:
                for ci, payload in enumerate(cam_payloads):
                    for d in fragment(
                        StreamId(int(StreamId.DEPTH_0) + ci),
                        frame_id,
                        payload,
                        dg_seq_down,
                        int(now * 1e6),
                    ):
                        dg_seq_down += 1
                        shaper.enqueue(d)
                    color = color_payload_model(frame_id, color_cfgs[ci])
                    if color:
                        for d in fragment(
                            StreamId(int(StreamId.COLOR_0) + ci),
                            frame_id,
                            color,
                            dg_seq_down,
                            int(now * 1e6),
                        ):
                            dg_seq_down += 1
                            shaper.enqueue(d)
                frame_id += 1

            # ---- shaper drain into the downlink
            while (d := shaper.dequeue(now)) is not None:
                down.send(d, now)

            # ---- leader: receive feedback + video
            for t_arr, dg in down.due(now):
                if dg.stream == StreamId.WRENCH:
                    wmsg = WrenchMsg.from_bytes(dg.payload)
                    feed_haptics(haptics_state, wmsg, haptic_events)
                elif dg.traffic_class == TrafficClass.VIDEO:
                    if reasm.push(dg) is not None:
                        video_frames_delivered += 1
    except ControllerFault as exc:
        log.aborted = True
        log.abort_reason = str(exc)

    log.haptic_events = [
        {"t": _round(e.t), "pattern": e.kind, "intensity": _round(e.intensity)}
        for e in haptic_events
    ]
    log.counters = {
        "duration": _round(n_ticks * CONTROL_DT),
        "commands_sent": cmd_seq,
        "commands_applied": cmd_applied,
        "command_latency_mean_ms": _round(1e3 * latency_sum / max(1, latency_n)),
        "command_latency_max_ms": _round(1e3 * latency_max),
        "watchdog_trips": watchdog_trips,
        "uplink_sent_bytes": {str(k): v for k, v in sorted(up.sent_bytes.items())},
        "uplink_delivered_bytes": {str(k): v for k, v in sorted(up.delivered_bytes.items())},
        "uplink_lost_datagrams": up.lost_datagrams,
        "uplink_in_flight": up.in_flight,
        "downlink_sent_bytes": {str(k): v for k, v in sorted(down.sent_bytes.items())},
        "downlink_delivered_bytes": {
            str(k): v for k, v in sorted(down.delivered_bytes.items())
        },
        "downlink_lost_datagrams": down.lost_datagrams,
        "downlink_in_flight": down.in_flight,
        "video_frames_delivered": video_frames_delivered,
        "video_frames_dropped_shaper": shaper.dropped_video_frames,
        "video_frames_discarded_reassembly": reasm.discarded_frames,
    }
    return log


def metrics(log: SessionLog) -> dict:
    """Summary statistics from a finished session log."""
    c = log.counters
    if not c:
        return {
            "duration": 0.0,
            "uplink_mbps": 0.0,
            "downlink_mbps": 0.0,
            "video_fps": 0.0,
            "command_latency_mean_ms": 0.0,
            "tracking_rms_m": 0.0,
            "contact_force_max_n": 0.0,
            "haptic_events": 0,
        }
    dur = max(c.get("duration", 0.0), 1e-9)
    up_bytes = sum(c.get("uplink_delivered_bytes", {}).values())
    down_bytes = sum(c.get("downlink_delivered_bytes", {}).values())
    track = [
        (np.array(r["desired_p"]) - np.array(r["tool_p"]))
        for r in log.records
        if r.get("clutch") and not r.get("in_contact") and "desired_p" in r
    ]
    f_true = [np.linalg.norm(r["f_true"]) for r in log.records if "f_true" in r]
    return {
        "duration": dur,
        "uplink_mbps": up_bytes * 8.0 / dur / 1e6,
        "downlink_mbps": down_bytes * 8.0 / dur / 1e6,
        "video_fps": c.get("video_frames_delivered", 0) / dur,
        "command_latency_mean_ms": c.get("command_latency_mean_ms", 0.0),
        "command_latency_max_ms": c.get("command_latency_max_ms", 0.0),
        "tracking_rms_m": float(np.sqrt(np.mean(np.square(track)))) if track else 0.0,
        "contact_force_max_n": float(max(f_true)) if f_true else 0.0,
        "haptic_events": len(log.haptic_events),
        "watchdog_trips": c.get("watchdog_trips", 0),
    }
