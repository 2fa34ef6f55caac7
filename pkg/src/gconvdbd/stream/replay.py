from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

from ..dataset import FrameTable, get_subset, load_csv
from .messages import frame_message
from .transport import TransportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplaySummary:
    frames_sent: int
    elapsed_s: float
    completed: bool


def replay(
    data: str | Path | FrameTable,
    subset: str,
    speed_factor: float,
    sink,
    *,
    limit: int | None = None,
    close_sink: bool = True,
    clock=time.monotonic,
    sleep=time.sleep,
) -> ReplaySummary:
    """Publish recorded frames as ``frame`` messages, one per simulated second.

    ``speed_factor`` compresses time (10 means ten frames per wall second);
    0 sends as fast as the sink accepts. Message ``ts`` counts seconds from
    the start of the replay; the recording's own timestamp and driver tag ride
    along in the payload. Frames carry raw, unscaled values.
    """
    if speed_factor < 0:
        raise ValueError("speed factor must be >= 0")
    table = data if isinstance(data, FrameTable) else load_csv(data)
    sub = table.select(get_subset(subset, table.channels).channels)
    interval = 0.0 if speed_factor == 0 else 1.0 / speed_factor
    n = len(sub) if limit is None else min(limit, len(sub))

    start = clock()
    sent = 0
    completed = True
    try:
        for k in range(n):
            if interval:
                delay = start + k * interval - clock()
                if delay > 0:
                    sleep(delay)
            row = sub.values[k]
            msg = frame_message(
                k,
                {c: float(v) for c, v in zip(sub.channels, row)},
                driver=sub.driver_tags[k],
                source_ts=int(sub.timestamps[k]),
            )
            try:
                sink.send(msg)
            except (TransportError, OSError) as exc:
                log.error("sink disconnected after %d frames: %s", sent, exc)
                completed = False
                break
            sent += 1
    finally:
        if close_sink:
            try:
                sink.close()
            except OSError:
                pass
    return ReplaySummary(sent, clock() - start, completed)
