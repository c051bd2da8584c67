import numpy as np
import pytest

from teleosim.session import CameraConfig
from teleosim.uibridge import SCHEMA_VERSION, LiveSession, UiBridge, create_app


def drag(session, dz_total, steps=20, ticks_between=10):
    """Press clutch, drag the device along z in small deltas, release."""
    session.set_clutch(True)
    session.advance(ticks_between * 1e-3)
    for _ in range(steps):
        session.apply_input([0.0, 0.0, dz_total / steps])
        session.advance(ticks_between * 1e-3)
    session.set_clutch(False)
    session.advance(ticks_between * 1e-3)


# --- live session ------------------------------------------------------------


def test_clutched_drag_moves_desired_pose():
    s = LiveSession()
    z0 = s.desired.p[2]
    drag(s, -0.05)
    # device -z maps through the downward-facing tool orientation: +z motion
    assert abs(abs(s.desired.p[2] - z0) - 0.05) < 1e-6


def test_unclutched_motion_ignored():
    s = LiveSession()
    before = s.desired.p.copy()
    for _ in range(10):
        s.apply_input([0.01, 0.0, 0.0])
        s.advance(0.01)
    np.testing.assert_allclose(s.desired.p, before, atol=1e-12)


def test_indexing_accumulates():
    s = LiveSession()
    z0 = s.desired.p[2]
    drag(s, -0.04)
    # reposition while disengaged: must not move the target
    for _ in range(5):
        s.apply_input([0.0, 0.0, 0.04])
        s.advance(0.01)
    drag(s, -0.04)
    assert abs(abs(s.desired.p[2] - z0) - 0.08) < 1e-6


def test_silent_client_trips_watchdog_and_disengages():
    s = LiveSession()
    s.set_clutch(True)
    s.advance(0.02)
    assert s.clutch.engaged
    s.advance(0.150)  # no input for 150 ms
    assert s.watchdog.tripped
    assert not s.clutch.engaged


def test_disconnect_disengages_immediately():
    s = LiveSession()
    s.set_clutch(True)
    s.advance(0.02)
    s.on_stream_lost()
    assert not s.clutch.engaged
    assert s.watchdog.tripped


def test_reengage_requires_explicit_release():
    s = LiveSession()
    s.set_clutch(True)
    s.advance(0.02)
    s.on_stream_lost()
    # pressing again without a release must stay latched
    s.set_clutch(True)
    s.advance(0.05)
    assert s.watchdog.tripped and not s.clutch.engaged
    # explicit release, then press: allowed again
    s.set_clutch(False)
    s.advance(0.02)
    assert not s.watchdog.tripped
    s.set_clutch(True)
    s.advance(0.02)
    assert s.clutch.engaged


def test_hold_freezes_view_but_motion_resumes_continuously():
    s = LiveSession()
    s.set_clutch(True)
    s.advance(0.02)
    s.apply_input([0.0, 0.0, -0.02])
    s.advance(0.02)
    d_mid = s.desired.p.copy()
    s.set_hold(True)
    for _ in range(5):
        s.apply_input([0.0, 0.0, -0.02])
        s.advance(0.01)
    np.testing.assert_allclose(s.desired.p, d_mid, atol=1e-9)  # frozen under hold
    s.set_hold(False)
    s.advance(0.02)
    np.testing.assert_allclose(s.desired.p, d_mid, atol=1e-9)  # no jump on release


# --- bridge protocol ---------------------------------------------------------


def test_schema_version_enforced():
    b = UiBridge(LiveSession())
    assert not b.handle_client_message({"type": "clutch", "pressed": True})
    assert not b.handle_client_message({"v": 99, "type": "clutch", "pressed": True})
    assert b.bad_messages == 2
    assert not b.session.clutch_btn


def test_unknown_type_counted_and_ignored():
    b = UiBridge(LiveSession())
    assert not b.handle_client_message({"v": 1, "type": "teleport", "to": "moon"})
    assert b.unknown_messages == 1


def test_malformed_payload_rejected():
    b = UiBridge(LiveSession())
    assert not b.handle_client_message({"v": 1, "type": "input"})  # missing dp
    assert not b.handle_client_message({"v": 1, "type": "input", "dp": "sideways"})
    assert b.bad_messages == 2


def test_valid_messages_applied():
    b = UiBridge(LiveSession())
    assert b.handle_client_message({"v": 1, "type": "clutch", "pressed": True})
    assert b.session.clutch_btn
    assert b.handle_client_message({"v": 1, "type": "input", "dp": [0, 0, -0.01]})
    assert b.handle_client_message({"v": 1, "type": "hold", "pressed": True})
    assert b.session.hold_btn


def test_snapshot_structure():
    b = UiBridge(LiveSession(), cameras=CameraConfig(count=1, width=64, height=48))
    b.session.advance(0.05)
    msgs = b.snapshot(include_cloud=True)
    types = [m["type"] for m in msgs]
    assert types[0] == "robot" and types[1] == "wrench"
    assert "cloud" in types and types[-1] == "metrics"
    assert all(m["v"] == SCHEMA_VERSION for m in msgs)
    robot = msgs[0]
    assert len(robot["q"]) == 7 and len(robot["tool_p"]) == 3


def test_haptic_messages_incremental():
    b = UiBridge(LiveSession())
    b.session.haptic_events.append({"t": 0.1, "pattern": "impulse", "intensity": 0.5})
    first = b.haptic_messages()
    assert len(first) == 1 and first[0]["pattern"] == "impulse"
    assert b.haptic_messages() == []  # already delivered
    b.session.haptic_events.append({"t": 0.2, "pattern": "cyclic", "intensity": 0.3})
    assert len(b.haptic_messages()) == 1


def test_cloud_cached_and_strided():
    cam = CameraConfig(count=1, width=64, height=48, stride=4)
    b = UiBridge(LiveSession(), cameras=cam)
    clouds = b.cloud_messages()
    assert clouds is b.cloud_messages()  # cached
    assert clouds[0]["stride"] == 4
    assert 0 < len(clouds[0]["points"]) <= (64 // 4 + 1) * (48 // 4 + 1)


def test_disconnect_via_bridge():
    b = UiBridge(LiveSession())
    b.handle_client_message({"v": 1, "type": "clutch", "pressed": True})
    b.session.advance(0.02)
    b.on_disconnect()
    assert b.session.watchdog.tripped


# --- websocket endpoint ------------------------------------------------------


def test_websocket_round_trip():
    from fastapi.testclient import TestClient

    bridge = UiBridge(
        LiveSession(), cameras=CameraConfig(count=1, width=64, height=48)
    )
    app = create_app(bridge, realtime=False)
    client = TestClient(app)

    health = client.get("/health").json()
    assert health["ok"] and health["schema"] == SCHEMA_VERSION

    with client.websocket_connect("/ws") as ws:
        ws.send_json({"v": 1, "type": "clutch", "pressed": True})
        seen = set()
        # first snapshot includes the cloud exactly once
        for _ in range(40):
            m = ws.receive_json()
            seen.add(m["type"])
            if m["type"] == "metrics" and {"robot", "wrench", "cloud"} <= seen:
                break
        assert {"robot", "wrench", "cloud", "metrics"} <= seen
    # context exit closes the socket; the bridge must have latched the watchdog
    assert bridge.session.watchdog.tripped
