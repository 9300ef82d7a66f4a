"""Command-line surface: index building, serving, live tracking, evaluations.

Subcommands: gen-posters, build-index, serve, track, gen-sequence,
eval-tracking, eval-retrieval, eval-latency. Evaluations print a
human-readable summary and can additionally write line-delimited JSON
records with --report.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import BuildFailed, MalformedMessage
from .evaluation import (
    FRAME_PERIOD_MS,
    eval_latency,
    eval_retrieval,
    eval_tracking,
    generate_query_frames,
    make_reference_corpus,
)
from .image import load_image, save_image
from .protocol import decode_result, encode_request
from .geometry import RansacConfig
from .recognizer import RecognizerConfig
from .refindex import IndexConfig, ReferenceIndex, build_reference_index
from .segmentation import SegConfig
from .server import ServerConfig, serve
from .synth import default_scripts, generate_sequence, make_poster, place_row, place_single
from .tracker import ClientTracker, TrackerConfig
from .transport import UdpClientTransport

log = logging.getLogger("cloudtrack.cli")


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _parse_net(text: str):
    """Parse --net sim:<drop>,<delay_ms>,<jitter_ms> (or 'loopback')."""
    if text == "loopback":
        return {"drop": 0.0, "delay_ms": 0.0, "jitter_ms": 0.0}
    if text.startswith("sim:"):
        drop, delay, jitter = (float(v) for v in text[4:].split(","))
        return {"drop": drop, "delay_ms": delay, "jitter_ms": jitter}
    raise argparse.ArgumentTypeError(f"unknown --net value {text!r}")


def _load_corpus_dir(path: str):
    images = []
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in (".png", ".pgm"))
    for ref_id, file in enumerate(files):
        try:
            images.append((ref_id, file.stem, load_image(str(file))))
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", file, exc)
    return images


def _recognizer_config(args) -> RecognizerConfig:
    seg = SegConfig(
        window=args.seg_window,
        stride=args.seg_stride,
        var_threshold=args.seg_var_threshold,
    )
    ransac = RansacConfig(threshold_px=args.ransac_threshold, min_inliers=args.ransac_min_inliers)
    return RecognizerConfig(seg=seg, ransac=ransac)


def cmd_gen_posters(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        poster = make_poster(args.seed + i, size=args.size)
        save_image(poster, str(out / f"poster-{args.seed + i:05d}.png"))
    print(f"wrote {args.count} posters to {out}")
    return 0


def cmd_build_index(args) -> int:
    images = _load_corpus_dir(args.images)
    if not images:
        print(f"no readable images in {args.images}", file=sys.stderr)
        return 1
    cfg = IndexConfig(k_components=args.k)
    t0 = time.perf_counter()
    try:
        index = build_reference_index(images, cfg)
    except BuildFailed as exc:
        print(f"build failed: {exc}", file=sys.stderr)
        return 1
    index.save(args.out)
    n_desc = sum(len(e.descriptors) for e in index.entries.values())
    print(
        f"indexed {len(index)} references ({n_desc} descriptors, K={args.k}) "
        f"in {time.perf_counter() - t0:.1f}s -> {args.out}"
    )
    return 0


def cmd_serve(args) -> int:
    index = ReferenceIndex.load(args.index)
    cfg = ServerConfig(recognizer=_recognizer_config(args))
    print(f"serving {len(index)} references on {args.bind}")
    serve(index, _parse_addr(args.bind), cfg, stats_interval_s=args.stats_interval)
    return 0


def cmd_track(args) -> int:
    """Live client: renders a scripted sequence and offloads over UDP."""
    posters = [load_image(p) for p in args.poster]
    placements = (
        [place_single(0, posters[0], side=args.side)]
        if len(posters) == 1
        else place_row([(i, img) for i, img in enumerate(posters)])
    )
    scripts = default_scripts(args.frames, dims=(args.width, args.height))
    seq = generate_sequence(placements, scripts[args.script], dims=(args.width, args.height))
    tracker = ClientTracker(TrackerConfig())
    transport = UdpClientTransport(_parse_addr(args.server))
    period_s = FRAME_PERIOD_MS / 1000.0
    try:
        # paced at 30 FPS like a camera feed; outrunning the clock would
        # supersede every key frame before its result can arrive
        for i, frame in enumerate(seq.frames):
            t0 = time.perf_counter()
            update = tracker.process_frame(frame)
            if update.request_to_send:
                transport.send(encode_request(update.request_to_send))
            for raw in transport.poll():
                try:
                    tracker.on_result(decode_result(raw))
                except MalformedMessage:
                    pass
            time.sleep(max(0.0, period_s - (time.perf_counter() - t0)))
    finally:
        transport.close()
    print(json.dumps(tracker.counters))
    for obj in tracker.objects.values():
        print(f"object {obj.object_id} ref={obj.ref_id} corners={obj.corners.round(1).tolist()}")
    return 0


def cmd_gen_sequence(args) -> int:
    posters = (
        [load_image(p) for p in args.poster]
        if args.poster
        else [make_poster(args.seed + i) for i in range(args.count)]
    )
    placements = (
        [place_single(0, posters[0])]
        if len(posters) == 1
        else place_row([(i, img) for i, img in enumerate(posters)])
    )
    scripts = default_scripts(args.frames, dims=(args.width, args.height))
    seq = generate_sequence(
        placements, scripts[args.script], dims=(args.width, args.height), noise_sigma=args.noise
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        save_image(frame, str(out / f"frame-{i:05d}.png"))
    with open(out / "truth.jsonl", "w") as fh:
        for i in range(len(seq.frames)):
            fh.write(
                json.dumps(
                    {
                        "frame": i,
                        "corners": {
                            str(ref_id): np.round(t[i], 3).tolist()
                            for ref_id, t in seq.truth.items()
                        },
                    }
                )
                + "\n"
            )
    print(f"wrote {len(seq.frames)} frames + truth.jsonl to {out}")
    return 0


def _print_summary(title: str, payload: dict) -> None:
    print(f"== {title}")
    for key, value in payload.items():
        print(f"  {key}: {value}")


def cmd_eval_tracking(args) -> int:
    corpus = make_reference_corpus(args.refs, seed0=args.seed * 1000 + 1000)
    index = build_reference_index(corpus)
    images = {i: img for i, _, img in corpus}
    net = args.net  # parsed by argparse into {drop, delay_ms, jitter_ms}
    scripts = default_scripts(args.frames)
    names = [args.script] if args.script != "all" else list(scripts)
    ok = True
    for name in names:
        seq = generate_sequence([place_single(3, images[3])], scripts[name])
        report = eval_tracking(seq, index, seed=args.seed, **net)
        summary = report.summary()
        _print_summary(f"tracking/{name}", summary)
        if args.report:
            report.write_jsonl(f"{args.report}.{name}.jsonl")
        if summary["mean_error_px"] is None or summary["mean_error_px"] > 2.0:
            ok = False
    return 0 if ok else 2


def cmd_eval_retrieval(args) -> int:
    if args.index:
        index = ReferenceIndex.load(args.index)
        corpus = make_reference_corpus(args.refs)
    else:
        corpus = make_reference_corpus(args.refs)
        index = build_reference_index(corpus)
    images = {i: img for i, _, img in corpus}
    queries = generate_query_frames(
        images, n_single=args.single, n_multi=args.multi, seed=args.seed
    )
    rows = []
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.seg]
    for resolution in args.resolutions:
        for seg_on in modes:
            rows.append(eval_retrieval(index, queries, seg_on, resolution))
    for row in rows:
        print(row.to_json())
    if args.report:
        with open(args.report, "w") as fh:
            for row in rows:
                fh.write(row.to_json() + "\n")
    return 0


def cmd_eval_latency(args) -> int:
    corpus = make_reference_corpus(args.refs)
    index = build_reference_index(corpus)
    images = {i: img for i, _, img in corpus}
    scenes = [
        generate_sequence([place_single(i, images[i])], default_scripts(1)["static"]).frames[0]
        for i in range(min(5, len(images)))
    ]
    report = eval_latency(index, scenes, n_tasks=args.tasks)
    _print_summary("latency", report.summary())
    if args.report:
        with open(args.report, "w") as fh:
            for ms in report.latencies_ms:
                fh.write(json.dumps({"latency_ms": round(ms, 3)}) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudtrack")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-posters", help="write procedural reference posters")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--seed", type=int, default=1000)
    p.set_defaults(func=cmd_gen_posters)

    p = sub.add_parser("build-index", help="build a reference index from an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=16)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("serve", help="run the recognition server")
    p.add_argument("--index", required=True)
    p.add_argument("--bind", default="127.0.0.1:9900")
    p.add_argument("--stats-interval", type=float, default=0.0)
    p.add_argument("--seg-window", type=int, default=SegConfig.window)
    p.add_argument("--seg-stride", type=int, default=SegConfig.stride)
    p.add_argument("--seg-var-threshold", type=float, default=SegConfig.var_threshold)
    p.add_argument("--ransac-threshold", type=float, default=5.0)
    p.add_argument("--ransac-min-inliers", type=int, default=RansacConfig.min_inliers)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("track", help="run a live client against a server address")
    p.add_argument("--server", required=True)
    p.add_argument("--script", default="static", choices=list(default_scripts(1)))
    p.add_argument("--poster", action="append", required=True, help="poster image file (repeatable)")
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--side", type=float, default=160.0)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("gen-sequence", help="render a scripted synthetic sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--script", default="static", choices=list(default_scripts(1)))
    p.add_argument("--poster", action="append", help="poster image file (repeatable)")
    p.add_argument("--count", type=int, default=1, help="procedural posters if no --poster")
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=1000)
    p.set_defaults(func=cmd_gen_sequence)

    p = sub.add_parser("eval-tracking", help="pixel-error evaluation over the simulated link")
    p.add_argument("--script", default="all", choices=["all"] + list(default_scripts(1)))
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--refs", type=int, default=10)
    p.add_argument("--net", type=_parse_net, default="sim:0.0,150,0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_tracking)

    p = sub.add_parser("eval-retrieval", help="retrieval precision with/without segmentation")
    p.add_argument("--index", help="reuse an existing index file")
    p.add_argument("--refs", type=int, default=100)
    p.add_argument("--single", type=int, default=60)
    p.add_argument("--multi", type=int, default=30)
    p.add_argument("--resolutions", type=lambda s: [int(v) for v in s.split(",")],
                   default=[100, 200, 400])
    p.add_argument("--seg", choices=["on", "off", "both"], default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-latency", help="loopback UDP offloading latency")
    p.add_argument("--refs", type=int, default=100)
    p.add_argument("--tasks", type=int, default=200)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_latency)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
