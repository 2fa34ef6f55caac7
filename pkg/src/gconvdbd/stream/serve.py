"""Edge inference service: window the frame stream, classify, alert and report.

The service runs as three stages joined by bounded queues: a reader thread
decoding the source, the inference stage on the calling thread, and a writer
thread feeding the sink. A full queue blocks its producer, so nothing is
dropped under load.
"""

from __future__ import annotations

import datetime as dt
import logging
import queue
import threading
from collections import deque
from pathlib import Path

import numpy as np

from ..dataset import DataError, channel_key, normalize_matrix, resolve_channel, stride_for
from ..nn import Checkpoint, load_checkpoint
from .messages import MessageError, StreamMessage
from .transport import TransportError

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
REPORT_EVERY = 60
HEARTBEAT_S = 30

_END = object()


class InferenceStage:
    """Pure, single-threaded message handler; the testable core of :func:`serve`."""

    def __init__(
        self,
        ckpt: Checkpoint,
        *,
        min_alert_gap: float = 0.0,
        start_date: dt.date = dt.date(1970, 1, 1),
        report_every: int = REPORT_EVERY,
        heartbeat_s: float = HEARTBEAT_S,
    ):
        self.ckpt = ckpt
        self.model = ckpt.model
        self.graph = ckpt.graph
        self.stats = ckpt.stats
        cfg = ckpt.config
        self.T = cfg.window
        self.stride = stride_for(cfg.window, cfg.overlap)
        self.threshold = cfg.threshold
        self.min_alert_gap = min_alert_gap
        self.start_date = start_date
        self.report_every = report_every
        self.heartbeat_s = heartbeat_s
        self._keys = {channel_key(c): c for c in ckpt.channels}

        self.buffer: deque[np.ndarray] = deque(maxlen=self.T)
        self.stamps: deque[float] = deque(maxlen=self.T)
        self.frames_seen = 0
        self.inactive = False
        self.first_ts: float | None = None
        self.last_ts: float | None = None
        self.last_status_ts: float | None = None
        self.last_alert_ts: float | None = None
        self.day: int | None = None
        self.safe = 0
        self.unsafe = 0
        self.since_report = 0
        self.n_predictions = 0
        self._checked_scaling = False

    # ------------------------------------------------------------------

    def start(self) -> list[StreamMessage]:
        self.last_status_ts = 0
        return [StreamMessage("status", 0, {"state": "active", "channels": list(self.ckpt.channels)})]

    def _vector(self, values) -> np.ndarray:
        if not isinstance(values, dict):
            raise DataError("frame payload lacks a 'values' object")
        by_key = {}
        for name, v in values.items():
            key = channel_key(name)
            target = self._keys.get(key)
            if target is None:
                try:
                    target = resolve_channel(name, self.ckpt.channels)
                except DataError:
                    raise DataError(f"unexpected channel {name!r}") from None
            by_key[target] = v
        missing = [c for c in self.ckpt.channels if c not in by_key]
        if missing:
            raise DataError(f"missing channels {missing}")
        try:
            return np.array([float(by_key[c]) for c in self.ckpt.channels])
        except (TypeError, ValueError):
            raise DataError("non-numeric channel value") from None

    def _daily_report(self, ts: float, reason: str) -> StreamMessage:
        day = self.day or 0
        uptime = 0 if self.first_ts is None else self.last_ts - self.first_ts + 1
        return StreamMessage(
            "daily_report",
            ts,
            {
                "date": (self.start_date + dt.timedelta(days=day)).isoformat(),
                "day": day,
                "safe_count": self.safe,
                "unsafe_count": self.unsafe,
                "uptime_seconds": uptime,
                "reason": reason,
            },
        )

    def handle(self, msg: StreamMessage) -> list[StreamMessage]:
        if msg.kind != "frame":
            return []
        out: list[StreamMessage] = []
        ts = msg.ts
        try:
            raw = self._vector(msg.payload.get("values"))
        except DataError as exc:
            if not self.inactive:
                out.append(StreamMessage("status", ts, {"state": "inactive", "reason": str(exc)}))
                self.last_status_ts = ts
                self.inactive = True
            log.warning("skipping frame at ts=%s: %s", ts, exc)
            return out
        if self.inactive:
            self.inactive = False
            out.append(StreamMessage("status", ts, {"state": "active"}))
            self.last_status_ts = ts

        day = int(ts // SECONDS_PER_DAY)
        if self.day is None:
            self.day = day
        elif day != self.day:
            out.append(self._daily_report(ts, "rollover"))
            self.day, self.safe, self.unsafe, self.since_report = day, 0, 0, 0
        if self.first_ts is None:
            self.first_ts = ts
        self.last_ts = ts
        if self.last_status_ts is None or ts - self.last_status_ts >= self.heartbeat_s:
            out.append(StreamMessage("status", ts, {"state": "active", "heartbeat": True}))
            self.last_status_ts = ts

        self.buffer.append(normalize_matrix(raw, self.stats))
        self.stamps.append(ts)
        self.frames_seen += 1
        if not self._checked_scaling:
            self._check_scaling(raw)

        if self.frames_seen >= self.T and (self.frames_seen - self.T) % self.stride == 0:
            out.extend(self._predict(ts))
        return out

    def _check_scaling(self, raw: np.ndarray) -> None:
        # raw frames that already sit in [0, 1] while training ranges do not
        # suggest the publisher is sending scaled data
        self._checked_scaling = True
        if np.all((raw >= 0) & (raw <= 1)) and np.any(self.stats.max > 1.5):
            log.warning("frame values all lie in [0, 1]; input may already be normalised")

    def _predict(self, ts: float) -> list[StreamMessage]:
        window = np.stack(self.buffer)
        p = float(self.model.forward(self.graph, window)[0])
        label = int(p >= self.threshold)
        coords = {
            "window_start": self.stamps[0],
            "window_end": ts + 1,
            "horizon_start": ts + 1,
            "horizon_end": ts + 1 + self.T,
        }
        out = [StreamMessage("prediction", ts, {"label": label, "probability": p, **coords})]
        self.n_predictions += 1
        if label:
            self.unsafe += 1
            gap_ok = (
                self.last_alert_ts is None
                or self.min_alert_gap <= 0
                or ts - self.last_alert_ts >= self.min_alert_gap
            )
            if gap_ok:
                out.append(StreamMessage("alert", ts, {"probability": p, **coords}))
                self.last_alert_ts = ts
        else:
            self.safe += 1
        self.since_report += 1
        if self.since_report >= self.report_every:
            out.append(self._daily_report(ts, "periodic"))
            self.since_report = 0
        return out

    def finish(self) -> list[StreamMessage]:
        ts = self.last_ts if self.last_ts is not None else 0
        return [
            self._daily_report(ts, "final"),
            StreamMessage("status", ts, {"state": "inactive", "reason": "source closed"}),
        ]


def _decode(item) -> StreamMessage | None:
    if isinstance(item, StreamMessage):
        return item
    try:
        return StreamMessage.from_line(item)
    except MessageError as exc:
        log.warning("skipping malformed message: %s", exc)
        return None


def serve(
    checkpoint: str | Path | Checkpoint,
    source,
    sink,
    *,
    queue_size: int = 64,
    close_sink: bool = True,
    **stage_options,
) -> InferenceStage:
    """Run until ``source`` is exhausted; returns the final stage state."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    stage = InferenceStage(ckpt, **stage_options)
    inbox: queue.Queue = queue.Queue(queue_size)
    outbox: queue.Queue = queue.Queue(queue_size)
    stop = threading.Event()
    errors: list[BaseException] = []

    def put(q: queue.Queue, item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def read() -> None:
        try:
            for item in source:
                msg = _decode(item)
                if msg is not None and not put(inbox, msg):
                    return
        except BaseException as exc:  # surfaced on the main thread
            errors.append(exc)
        finally:
            put(inbox, _END)

    def write() -> None:
        failed = False
        while True:
            item = outbox.get()
            if item is _END:
                break
            if failed:
                continue
            try:
                sink.send(item)
            except (TransportError, OSError) as exc:
                errors.append(TransportError(f"sink failed: {exc}"))
                failed = True
                stop.set()
        if close_sink:
            try:
                sink.close()
            except OSError:
                pass

    reader = threading.Thread(target=read, name="serve-reader", daemon=True)
    writer = threading.Thread(target=write, name="serve-writer", daemon=True)
    reader.start()
    writer.start()
    try:
        for m in stage.start():
            outbox.put(m)
        while not stop.is_set():
            try:
                item = inbox.get(timeout=0.1)
            except queue.Empty:
                continue
            if item is _END:
                break
            for m in stage.handle(item):
                outbox.put(m)
        for m in stage.finish():
            outbox.put(m)
    finally:
        outbox.put(_END)
        writer.join()
    if errors:
        raise errors[0]
    return stage
