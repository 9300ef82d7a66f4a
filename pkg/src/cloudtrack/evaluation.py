"""End-to-end evaluations: tracking accuracy, retrieval precision, latency.

Tracking runs client and server in one process over the simulated lossy link
on a logical 30 FPS clock, so every run is bit-reproducible under a fixed
seed. The latency evaluation instead uses real loopback UDP against a live
server and wall-clock time.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from .binary_features import detect_agast, extract_freak
from .errors import MalformedMessage
from .image import ImageGray8
from .lsh import query_knn
from .protocol import (
    RecognitionRequest,
    ResultMessage,
    decode_request,
    decode_result,
    encode_request,
    encode_result,
)
from .recognizer import ObjectIdAssigner, RecognizerConfig, recognize_frame
from .refindex import ReferenceIndex
from .segmentation import segment
from .server import RecognitionServer, ServerConfig
from .synth import BACKGROUND, SyntheticSequence, make_poster
from .tracker import ClientTracker, TrackerConfig, pixel_error
from .transport import SimulatedNetwork, UdpClientTransport

__all__ = [
    "FRAME_PERIOD_MS",
    "FrameRecord",
    "TrackingReport",
    "eval_tracking",
    "QueryFrame",
    "generate_query_frames",
    "RetrievalRow",
    "eval_retrieval",
    "LatencyReport",
    "eval_latency",
    "make_reference_corpus",
]

FRAME_PERIOD_MS = 1000.0 / 30.0


def make_reference_corpus(count: int, seed0: int = 1000, size: int = 400):
    """Procedural reference posters as (ref_id, name, image) triples."""
    return [(i, f"poster-{seed0 + i}", make_poster(seed0 + i, size=size)) for i in range(count)]


# --- tracking ---------------------------------------------------------------


@dataclass
class FrameRecord:
    frame: int
    now_ms: float
    errors: dict[int, float]
    request_cycle: int | None
    result_cycle: int | None
    result_latency_ms: float | None
    result_frames_passed: int | None
    result_errors: dict[int, float]
    timings: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame": self.frame,
                "now_ms": round(self.now_ms, 3),
                "errors": {str(k): round(v, 4) for k, v in self.errors.items()},
                "request_cycle": self.request_cycle,
                "result_cycle": self.result_cycle,
                "result_latency_ms": self.result_latency_ms,
                "result_frames_passed": self.result_frames_passed,
                "result_errors": {str(k): round(v, 4) for k, v in self.result_errors.items()},
                "timings": {k: round(v, 4) for k, v in self.timings.items()},
            }
        )


@dataclass
class TrackingReport:
    script: str
    records: list[FrameRecord]
    counters: dict[str, int]
    datagrams_sent: int
    datagrams_dropped: int

    def all_errors(self) -> list[float]:
        return [e for r in self.records for e in r.errors.values()]

    def result_frame_errors(self) -> list[float]:
        return [e for r in self.records for e in r.result_errors.values()]

    def latencies_ms(self) -> list[float]:
        return [r.result_latency_ms for r in self.records if r.result_latency_ms is not None]

    def latencies_frames(self) -> list[int]:
        return [r.result_frames_passed for r in self.records if r.result_frames_passed is not None]

    def summary(self) -> dict:
        errors = self.all_errors()
        result_errors = self.result_frame_errors()
        totals = [r.timings.get("total", 0.0) for r in self.records]
        return {
            "script": self.script,
            "frames": len(self.records),
            "mean_error_px": float(np.mean(errors)) if errors else None,
            "max_error_px": float(np.max(errors)) if errors else None,
            "max_result_frame_error_px": float(np.max(result_errors)) if result_errors else None,
            "results_applied": self.counters.get("results_applied", 0),
            "results_discarded": self.counters.get("results_discarded", 0),
            "requests_sent": self.counters.get("requests_sent", 0),
            "mean_frame_ms": float(np.mean(totals)) if totals else None,
            "mean_latency_ms": float(np.mean(self.latencies_ms())) if self.latencies_ms() else None,
            "datagrams_dropped": self.datagrams_dropped,
        }

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(record.to_json() + "\n")


def eval_tracking(
    sequence: SyntheticSequence,
    index: ReferenceIndex,
    delay_ms: float = 50.0,
    jitter_ms: float = 0.0,
    drop: float = 0.0,
    server_proc_ms: float = 40.0,
    tracker_cfg: TrackerConfig | None = None,
    recognizer_cfg: RecognizerConfig | None = None,
    seed: int = 0,
) -> TrackingReport:
    """Drive the tracker against the recognizer over a simulated link.

    Recognition content is computed synchronously when a request reaches the
    simulated server; its delivery back to the client is scheduled
    ``server_proc_ms`` later plus the downlink delay. ``delay_ms`` is the
    end-to-end result-delay target: uplink and downlink each get half of
    what remains after server processing.
    """
    leg_ms = max(0.0, (delay_ms - server_proc_ms)) / 2.0
    net = SimulatedNetwork(drop=drop, delay_ms=leg_ms, jitter_ms=jitter_ms,
                           rng=np.random.default_rng(seed))
    tracker = ClientTracker(tracker_cfg)
    ids = ObjectIdAssigner()
    sent_at: dict[int, tuple[float, int]] = {}
    records: list[FrameRecord] = []

    for i, frame in enumerate(sequence.frames):
        now = i * FRAME_PERIOD_MS

        for data in net.server.poll(now):
            try:
                request = decode_request(data)
            except MalformedMessage:
                continue
            outcome = recognize_frame(index, request.frame, recognizer_cfg, ids, request.cycle_id)
            reply = ResultMessage(request.cycle_id, request.nonce, outcome.recognized)
            net.server.send(encode_result(reply), now + server_proc_ms)

        update = tracker.process_frame(frame)
        request_cycle = None
        if update.request_to_send is not None:
            request_cycle = update.request_to_send.cycle_id
            net.client.send(encode_request(update.request_to_send), now)
            sent_at[request_cycle] = (now, i)

        result_cycle = None
        latency_ms = None
        frames_passed = None
        result_errors: dict[int, float] = {}
        for data in net.client.poll(now):
            try:
                message = decode_result(data)
            except MalformedMessage:
                continue
            outcome_client = tracker.on_result(message)
            if outcome_client.applied:
                result_cycle = message.cycle_id
                t_sent, i_sent = sent_at[message.cycle_id]
                latency_ms = now - t_sent
                frames_passed = i - i_sent
                result_errors = _measure_errors(tracker, sequence, i)

        records.append(
            FrameRecord(
                frame=i,
                now_ms=now,
                errors=_measure_errors(tracker, sequence, i),
                request_cycle=request_cycle,
                result_cycle=result_cycle,
                result_latency_ms=latency_ms,
                result_frames_passed=frames_passed,
                result_errors=result_errors,
                timings=update.timings,
            )
        )
    return TrackingReport(
        script=sequence.script.kind,
        records=records,
        counters=dict(tracker.counters),
        datagrams_sent=net.sent,
        datagrams_dropped=net.dropped,
    )


def _measure_errors(tracker: ClientTracker, sequence: SyntheticSequence, frame_idx: int) -> dict:
    by_ref = {obj.ref_id: obj for obj in tracker.objects.values()}
    errors: dict[int, float] = {}
    for ref_id, truths in sequence.truth.items():
        obj = by_ref.get(ref_id)
        if obj is None:
            continue
        try:
            errors[ref_id] = pixel_error(obj.corners, truths[frame_idx])
        except Exception:
            errors[ref_id] = float("inf")
    return errors


# --- retrieval --------------------------------------------------------------


@dataclass
class QueryFrame:
    frame: ImageGray8
    labels: set[int]
    quads: dict[int, np.ndarray]  # ref_id -> placed (4, 2) quad


def _jittered_quad(rng: np.random.Generator, x0: float, y0: float, side: float, jitter: float):
    base = np.array(
        [[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]], dtype=np.float64
    )
    return base + rng.uniform(-jitter * side, jitter * side, (4, 2))


def generate_query_frames(
    ref_images: dict[int, ImageGray8],
    n_single: int = 60,
    n_multi: int = 30,
    dims: tuple[int, int] = (640, 360),
    jitter: float = 0.10,
    seed: int = 0,
) -> list[QueryFrame]:
    """Warped single- and multi-target query frames with exact labels."""
    rng = np.random.default_rng(seed)
    ids = sorted(ref_images)
    w, h = dims
    queries: list[QueryFrame] = []

    def compose(chosen_slots: list[tuple[int, np.ndarray]]) -> QueryFrame:
        canvas = np.full((h, w), BACKGROUND, np.uint8)
        quads: dict[int, np.ndarray] = {}
        for ref_id, quad in chosen_slots:
            image = ref_images[ref_id]
            src = np.array(
                [
                    [0, 0],
                    [image.width - 1, 0],
                    [image.width - 1, image.height - 1],
                    [0, image.height - 1],
                ],
                dtype=np.float32,
            )
            m = cv2.getPerspectiveTransform(src, quad.astype(np.float32))
            patch = cv2.warpPerspective(image.pixels, m, (w, h), flags=cv2.INTER_LINEAR)
            mask = cv2.warpPerspective(np.full(image.shape, 255, np.uint8), m, (w, h)) > 127
            canvas[mask] = patch[mask]
            quads[ref_id] = quad
        return QueryFrame(ImageGray8(canvas), set(quads), quads)

    for _ in range(n_single):
        ref_id = int(rng.choice(ids))
        side = float(rng.uniform(170, 240))
        x0 = float(rng.uniform(40, w - side - 40))
        y0 = float(rng.uniform(20, h - side - 20))
        queries.append(compose([(ref_id, _jittered_quad(rng, x0, y0, side, jitter))]))

    for _ in range(n_multi):
        count = int(rng.integers(2, 4))
        chosen = rng.choice(ids, size=count, replace=False)
        slots = []
        side = 150.0
        span = count * side + (count - 1) * 90.0
        x = (w - span) / 2.0
        for ref_id in chosen:
            y0 = float(rng.uniform(40, h - side - 40))
            slots.append((int(ref_id), _jittered_quad(rng, x, y0, side, jitter * 0.6)))
            x += side + 90.0
        queries.append(compose(slots))
    return queries


@dataclass
class RetrievalRow:
    segmentation: bool
    resolution: int
    n_queries: int
    mean_ap: float
    top_k: dict[int, float]  # k -> accuracy

    def to_json(self) -> str:
        return json.dumps(
            {
                "segmentation": self.segmentation,
                "resolution": self.resolution,
                "n_queries": self.n_queries,
                "mAP": round(self.mean_ap, 4),
                **{f"top{k}": round(v, 4) for k, v in sorted(self.top_k.items())},
            }
        )


def _quad_iou(a: np.ndarray, b: np.ndarray) -> float:
    area_a = cv2.contourArea(a.astype(np.float32))
    area_b = cv2.contourArea(b.astype(np.float32))
    inter, _ = cv2.intersectConvexConvex(a.astype(np.float32), b.astype(np.float32))
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def _rank_refs(index: ReferenceIndex, image: ImageGray8, cfg: RecognizerConfig, k: int = 5):
    kps = detect_agast(image, cfg.agast)
    descs, _ = extract_freak(image, kps, octaves=cfg.agast.octaves)
    if len(descs) < cfg.min_patch_descriptors:
        return []
    fv = index.encode(descs)
    return [ref_id for ref_id, _ in query_knn(index.lsh, fv, k=k)]


def eval_retrieval(
    index: ReferenceIndex,
    queries: list[QueryFrame],
    with_segmentation: bool,
    resolution: int = 400,
    cfg: RecognizerConfig | None = None,
    k: int = 5,
) -> RetrievalRow:
    """Rank references for each query; report mAP and top-k accuracy.

    With segmentation on, each segmented patch is one retrieval query labeled
    by the placed poster it overlaps. With segmentation off, the whole frame
    is one query whose relevant set is every placed poster.
    """
    cfg = cfg or RecognizerConfig()
    aps: list[float] = []
    hits = {kk: 0 for kk in range(1, k + 1)}
    n = 0
    for query in queries:
        if with_segmentation:
            for patch in segment(query.frame, cfg.seg):
                truth = None
                best_iou = 0.2
                for ref_id, quad in query.quads.items():
                    iou = _quad_iou(patch.bbox_corners, quad)
                    if iou > best_iou:
                        truth, best_iou = ref_id, iou
                if truth is None:
                    continue
                image = patch.image
                if resolution != image.width:
                    image = ImageGray8(
                        cv2.resize(image.pixels, (resolution, resolution), interpolation=cv2.INTER_AREA)
                    )
                ranked = _rank_refs(index, image, cfg, k)
                n += 1
                aps.append(1.0 / (ranked.index(truth) + 1) if truth in ranked else 0.0)
                for kk in hits:
                    hits[kk] += truth in ranked[:kk]
        else:
            image = ImageGray8(
                cv2.resize(query.frame.pixels, (resolution, resolution), interpolation=cv2.INTER_AREA)
            )
            ranked = _rank_refs(index, image, cfg, k)
            n += 1
            relevant = query.labels
            found = 0
            precisions = []
            for rank, ref_id in enumerate(ranked, start=1):
                if ref_id in relevant:
                    found += 1
                    precisions.append(found / rank)
            aps.append(sum(precisions) / len(relevant) if relevant else 0.0)
            for kk in hits:
                hits[kk] += bool(relevant & set(ranked[:kk]))
    return RetrievalRow(
        segmentation=with_segmentation,
        resolution=resolution,
        n_queries=n,
        mean_ap=float(np.mean(aps)) if aps else 0.0,
        top_k={kk: hits[kk] / n if n else 0.0 for kk in hits},
    )


# --- latency ----------------------------------------------------------------


@dataclass
class LatencyReport:
    latencies_ms: list[float]
    timeouts: int

    def fraction_within(self, budget_ms: float) -> float:
        if not self.latencies_ms:
            return 0.0
        return float(np.mean([t <= budget_ms for t in self.latencies_ms]))

    def summary(self) -> dict:
        arr = np.array(self.latencies_ms)
        return {
            "tasks": len(self.latencies_ms) + self.timeouts,
            "timeouts": self.timeouts,
            "mean_ms": float(arr.mean()) if arr.size else None,
            "p50_ms": float(np.percentile(arr, 50)) if arr.size else None,
            "p97_ms": float(np.percentile(arr, 97)) if arr.size else None,
            "max_ms": float(arr.max()) if arr.size else None,
            "within_500ms": self.fraction_within(500.0),
        }


def eval_latency(
    index: ReferenceIndex,
    frames: list[ImageGray8],
    n_tasks: int = 200,
    timeout_s: float = 3.0,
    server_cfg: ServerConfig | None = None,
) -> LatencyReport:
    """Offloading latency over real loopback UDP against a live server.

    One task = encode request, send, wait for the matching result, decode.
    """
    server_cfg = server_cfg or ServerConfig(log_requests=False)
    latencies: list[float] = []
    timeouts = 0
    with RecognitionServer(index, cfg=server_cfg) as server:
        transport = UdpClientTransport(server.address)
        try:
            for task in range(n_tasks):
                frame = frames[task % len(frames)]
                t0 = time.perf_counter()
                data = encode_request(RecognitionRequest(nonce=1, cycle_id=task, frame=frame))
                transport.send(data)
                got = None
                deadline = time.perf_counter() + timeout_s
                while time.perf_counter() < deadline:
                    for raw in transport.poll():
                        try:
                            message = decode_result(raw)
                        except MalformedMessage:
                            continue
                        if message.cycle_id == task:
                            got = message
                            break
                    if got is not None:
                        break
                    time.sleep(0.001)
                if got is None:
                    timeouts += 1
                else:
                    latencies.append((time.perf_counter() - t0) * 1000.0)
        finally:
            transport.close()
    return LatencyReport(latencies, timeouts)
