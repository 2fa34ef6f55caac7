"""Line-delimited JSON messages: ``{"kind": ..., "ts": ..., "payload": {...}}``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

KINDS = frozenset({"frame", "prediction", "alert", "daily_report", "status"})


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class StreamMessage:
    kind: str
    ts: float
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise MessageError(f"unknown message kind {self.kind!r}")

    def to_line(self) -> str:
        return json.dumps(
            {"kind": self.kind, "ts": self.ts, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
            allow_nan=False,
        )

    @classmethod
    def from_line(cls, line: str | bytes) -> StreamMessage:
        try:
            obj = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MessageError(f"not JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise MessageError("message must be a JSON object")
        try:
            kind, ts = obj["kind"], obj["ts"]
        except KeyError as exc:
            raise MessageError(f"missing field {exc.args[0]!r}") from None
        payload = obj.get("payload", {})
        if not isinstance(ts, (int, float)) or isinstance(ts, bool):
            raise MessageError("ts must be numeric")
        if not isinstance(payload, dict):
            raise MessageError("payload must be an object")
        return cls(kind, ts, payload)


def frame_message(ts: int, values: dict[str, float], **extra: Any) -> StreamMessage:
    return StreamMessage("frame", ts, {"values": values, **extra})
