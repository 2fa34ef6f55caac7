from .messages import KINDS, MessageError, StreamMessage
from .replay import ReplaySummary, replay
from .serve import InferenceStage, serve
from .tail import format_message, tail
from .transport import MemoryChannel, ListSink, TransportError, open_sink, open_source

__all__ = [
    "KINDS",
    "InferenceStage",
    "ListSink",
    "MemoryChannel",
    "MessageError",
    "ReplaySummary",
    "StreamMessage",
    "TransportError",
    "format_message",
    "open_sink",
    "open_source",
    "replay",
    "serve",
    "tail",
]
