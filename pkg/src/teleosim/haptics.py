"""Contact detection and haptic intensity synthesis.

Contact state is a two-threshold hysteresis on the force norm.  Contact
creation plays an impulse pattern scaled to the momentum the arm lost in a
short window; sustained contact plays a cyclic pattern whose intensity maps
the 10..40 N force range onto [i_min, 1].  Only force components matter;
external torques are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .observer import WrenchMsg

F_ON_DEFAULT = 10.0     # N, contact activation threshold
F_OFF_DEFAULT = 7.0     # N, release threshold, kept below activation for hysteresis
F_FULL_SCALE = 40.0     # N, force mapping to intensity 1.0
IMPULSE_MIN = 0.2
CYCLIC_MIN = 0.2
IMPULSE_WINDOW = 0.020  # s
CYCLIC_RATE_HZ = 10.0


@dataclass
class ContactFSM:
    f_on: float = F_ON_DEFAULT
    f_off: float = F_OFF_DEFAULT
    in_contact: bool = False

    def __post_init__(self) -> None:
        if not (self.f_on > self.f_off > 0.0):
            raise ValueError("need f_on > f_off > 0")


def contact_update(fsm: ContactFSM, f_norm: float) -> tuple[ContactFSM, str]:
    """One hysteresis update; returns (new state, edge in {none, made, broken})."""
    if f_norm < 0.0:
        raise ValueError("force norm must be non-negative")
    if not fsm.in_contact and f_norm >= fsm.f_on:
        return replace(fsm, in_contact=True), "made"
    if fsm.in_contact and f_norm <= fsm.f_off:
        return replace(fsm, in_contact=False), "broken"
    return fsm, "none"


@dataclass
class HapticEvent:
    kind: str        # "impulse" | "cyclic"
    intensity: float
    t: float


def impulse_intensity(
    J: np.ndarray,
    M: np.ndarray,
    qdot_now: np.ndarray,
    qdot_prev: np.ndarray,
    scale: float = 1.0,
    i_min: float = IMPULSE_MIN,
    task_space_variant: bool = False,
) -> float:
    """Contact-creation intensity from momentum lost over the sampling window.

    Default is the literal J M J^T J dq product with the selection of the
    translational rows; ``task_space_variant`` uses Lambda J dq with the
    task-space inertia instead.  Both are monotone in the velocity change.
    """
    dq = qdot_now - qdot_prev
    if task_space_variant:
        lam = np.linalg.pinv(J @ np.linalg.solve(M, J.T), rcond=1e-10, hermitian=True)
        v = lam @ (J @ dq)
    else:
        v = J @ M @ J.T @ (J @ dq)
    return min(1.0, i_min + scale * float(np.linalg.norm(v[:3])))


def cyclic_intensity(
    f_ext: np.ndarray,
    i_min: float = CYCLIC_MIN,
    f_thres: float = F_ON_DEFAULT,
    f_full: float = F_FULL_SCALE,
) -> float:
    """Sustained-contact intensity: affine in ||F||, i_min at 10 N, 1.0 at 40 N."""
    f_norm = float(np.linalg.norm(np.asarray(f_ext, dtype=float)[:3]))
    u = (f_norm - f_thres) / (f_full - f_thres)
    return float(np.clip(i_min + u * (1.0 - i_min), i_min, 1.0))


@dataclass
class HapticStreamState:
    fsm: ContactFSM = field(default_factory=ContactFSM)
    last_seq: int = -1
    last_cyclic_t: float | None = None
    dropped: int = 0


def haptic_stream(
    msgs: Iterable[WrenchMsg],
    fsm: ContactFSM | None = None,
    impulse_fn: Callable[[WrenchMsg], float] | None = None,
    cyclic_rate_hz: float = CYCLIC_RATE_HZ,
) -> list[HapticEvent]:
    """Transform a wrench message stream into an ordered haptic event stream.

    Impulse events fire exactly on made edges (intensity from the message's
    follower-computed value unless ``impulse_fn`` overrides it); cyclic
    events repeat at ``cyclic_rate_hz`` while in contact.  Out-of-order
    messages are dropped.
    """
    state = HapticStreamState(fsm=fsm or ContactFSM())
    events: list[HapticEvent] = []
    for msg in msgs:
        feed_haptics(state, msg, events, impulse_fn, cyclic_rate_hz)
    return events


def feed_haptics(
    state: HapticStreamState,
    msg: WrenchMsg,
    events: list[HapticEvent],
    impulse_fn: Callable[[WrenchMsg], float] | None = None,
    cyclic_rate_hz: float = CYCLIC_RATE_HZ,
) -> None:
    """Incremental form of :func:`haptic_stream` for live sessions."""
    if msg.seq <= state.last_seq:
        state.dropped += 1
        return
    state.last_seq = msg.seq
    f_norm = float(np.linalg.norm(msg.force))
    state.fsm, edge = contact_update(state.fsm, f_norm)
    if edge == "made":
        if impulse_fn is not None:
            intensity = impulse_fn(msg)
        elif msg.impulse_intensity > 0.0:
            intensity = min(1.0, msg.impulse_intensity)
        else:
            intensity = IMPULSE_MIN
        events.append(HapticEvent("impulse", float(np.clip(intensity, 0.0, 1.0)), msg.t))
        events.append(HapticEvent("cyclic", cyclic_intensity(msg.force), msg.t))
        state.last_cyclic_t = msg.t
    elif edge == "broken":
        state.last_cyclic_t = None
    elif state.fsm.in_contact:
        period = 1.0 / cyclic_rate_hz
        if state.last_cyclic_t is None or msg.t - state.last_cyclic_t >= period - 1e-9:
            events.append(HapticEvent("cyclic", cyclic_intensity(msg.force), msg.t))
            state.last_cyclic_t = msg.t
