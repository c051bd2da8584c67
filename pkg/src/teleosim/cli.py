"""Command-line entry points for scripted sessions, log tooling and benchmarks.

Exit codes: 0 success, 2 invalid configuration, 3 controller fault mid-run.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3


def _cmd_run(args) -> int:
    from .leader import ScriptedLeader, descent_to_contact_script, indexing_script
    from .session import ConfigError, SessionConfig, run_session, metrics, table_scene

    try:
        if args.script == "indexing":
            script = indexing_script()
        elif args.script == "descent":
            script = descent_to_contact_script(direction=(0, 0, 1))
        else:
            script = ScriptedLeader.load(args.script)
        scene = None
        if args.table_z is not None:
            scene = table_scene(z=args.table_z)
        cfg = SessionConfig(
            model=args.model,
            duration=args.duration,
            seed=args.seed,
            script=script,
            channel=args.channel,
            video_cap_mbps=args.video_cap,
            cameras=None if args.no_cameras else None or _cameras(args),
            scene=scene,
            probe_rtt=args.channel != "ideal",
        )
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.time()
    log = run_session(cfg)
    wall = time.time() - t0
    if args.out:
        log.save(args.out)
    summary = metrics(log)
    summary["wall_s"] = round(wall, 2)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if log.aborted:
        print(f"session aborted: {log.abort_reason}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _cameras(args):
    from .session import CameraConfig

    if args.no_cameras:
        return None
    return CameraConfig(fps=args.fps)


def _load_log(path: str):
    from .session import SessionLog

    return SessionLog.load(path)


def _cmd_replay(args) -> int:
    try:
        log = _load_log(args.log)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in log.records:
        print(json.dumps(r, sort_keys=True))
    for e in log.haptic_events:
        print(json.dumps({"kind": "haptic", **e}, sort_keys=True))
    return EXIT_OK


def _cmd_metrics(args) -> int:
    from .session import metrics

    try:
        log = _load_log(args.log)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(metrics(log), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_codec_bench(args) -> int:
    from .depthcodec import decode_depth, encode_depth, synthetic_tabletop

    frame = synthetic_tabletop(seed=args.seed)
    coded = encode_depth(frame)
    n = args.frames
    t0 = time.time()
    for i in range(n):
        coded = encode_depth(frame, frame_id=i)
    t_enc = time.time() - t0
    t0 = time.time()
    for _ in range(n):
        decode_depth(coded)
    t_dec = time.time() - t0
    raw = frame.pixels.nbytes
    print(
        json.dumps(
            {
                "resolution": f"{frame.width}x{frame.height}",
                "frames": n,
                "encode_fps": round(n / t_enc, 1),
                "decode_fps": round(n / t_dec, 1),
                "ratio": round(raw / len(coded.payload), 2),
                "raw_bytes": raw,
                "coded_bytes": len(coded.payload),
            },
            indent=2,
        )
    )
    return EXIT_OK


def _cmd_channel_bench(args) -> int:
    from .netsim import channel_profile, rtt_probe

    try:
        ch = channel_profile(args.profile)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    r = rtt_probe(ch, ch, n=args.packets, rng=np.random.default_rng(args.seed))
    print(
        json.dumps(
            {
                "profile": args.profile,
                "packets": r["sent"],
                "lost": r["lost"],
                "rtt_min_ms": round(r["min_ms"], 2),
                "rtt_mean_ms": round(r["mean_ms"], 2),
                "rtt_max_ms": round(r["max_ms"], 2),
            },
            indent=2,
        )
    )
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .session import table_scene
    from .uibridge import LiveSession, UiBridge, create_app

    scene = table_scene(z=args.table_z) if args.table_z is not None else None
    session = LiveSession(model_name=args.model, scene=scene)
    app = create_app(UiBridge(session))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleosim")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scripted session")
    run.add_argument("--script", default="indexing", help="'indexing', 'descent' or a JSONL path")
    run.add_argument("--model", default="franka7")
    run.add_argument("--duration", type=float, default=8.2)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--channel", default="ideal", choices=["ideal", "wifi", "5g-nsa"])
    run.add_argument("--video-cap", type=float, default=60.0)
    run.add_argument("--fps", type=float, default=30.0)
    run.add_argument("--no-cameras", action="store_true")
    run.add_argument("--table-z", type=float, default=None)
    run.add_argument("--out", default=None, help="write the session log (JSONL)")
    run.set_defaults(func=_cmd_run)

    rep = sub.add_parser("replay", help="print the records of a saved log")
    rep.add_argument("log")
    rep.set_defaults(func=_cmd_replay)

    met = sub.add_parser("metrics", help="summarize a saved log")
    met.add_argument("log")
    met.set_defaults(func=_cmd_metrics)

    cb = sub.add_parser("codec-bench", help="depth codec throughput benchmark")
    cb.add_argument("--frames", type=int, default=50)
    cb.add_argument("--seed", type=int, default=0)
    cb.set_defaults(func=_cmd_codec_bench)

    nb = sub.add_parser("channel-bench", help="RTT statistics for a channel profile")
    nb.add_argument("--profile", default="wifi")
    nb.add_argument("--packets", type=int, default=100_000)
    nb.add_argument("--seed", type=int, default=1)
    nb.set_defaults(func=_cmd_channel_bench)

    srv = sub.add_parser("serve", help="serve the operator-console bridge")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument("--model", default="franka7")
    srv.add_argument("--table-z", type=float, default=None)
    srv.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
