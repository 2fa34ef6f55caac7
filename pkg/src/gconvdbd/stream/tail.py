from __future__ import annotations

import logging
import sys
from collections.abc import Iterable

from .messages import MessageError, StreamMessage

log = logging.getLogger(__name__)


def format_message(msg: StreamMessage) -> str:
    p = msg.payload
    if msg.kind == "prediction":
        word = "UNSAFE" if p.get("label") else "safe"
        return (
            f"[{msg.ts:>8}] prediction {word:<6} p={p.get('probability', float('nan')):.4f} "
            f"next [{p.get('horizon_start')}, {p.get('horizon_end')})"
        )
    if msg.kind == "alert":
        return (
            f"[{msg.ts:>8}] ALERT unsafe driving expected in "
            f"[{p.get('horizon_start')}, {p.get('horizon_end')}) p={p.get('probability', float('nan')):.4f}"
        )
    if msg.kind == "daily_report":
        return (
            f"[{msg.ts:>8}] daily {p.get('date')} safe={p.get('safe_count')} "
            f"unsafe={p.get('unsafe_count')} uptime={p.get('uptime_seconds')}s ({p.get('reason')})"
        )
    if msg.kind == "status":
        extra = f" ({p['reason']})" if "reason" in p else ""
        beat = " heartbeat" if p.get("heartbeat") else ""
        return f"[{msg.ts:>8}] status {p.get('state')}{beat}{extra}"
    values = p.get("values", {})
    shown = " ".join(f"{k}={v:g}" for k, v in values.items())
    return f"[{msg.ts:>8}] frame {shown}"


def tail(source: Iterable, kinds: Iterable[str] | None = None, out=None) -> int:
    """Print one line per message whose kind is in ``kinds`` (all when None)."""
    out = out or sys.stdout
    wanted = set(kinds) if kinds else None
    printed = 0
    for item in source:
        if isinstance(item, StreamMessage):
            msg = item
        else:
            try:
                msg = StreamMessage.from_line(item)
            except MessageError as exc:
                log.warning("skipping malformed message: %s", exc)
                continue
        if wanted is None or msg.kind in wanted:
            print(format_message(msg), file=out, flush=True)
            printed += 1
    return printed
