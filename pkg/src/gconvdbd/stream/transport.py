"""Message sources and sinks: in-process queue, NDJSON files/stdio, NDJSON over TCP.

Address syntax used by the CLI::

    tcp:HOST:PORT   source listens and accepts one peer; sink connects
    file:PATH       newline-delimited JSON file
    -               stdin (source) / stdout (sink)

An MQTT binding would only need another source/sink pair with the same
``__iter__`` / ``send`` / ``close`` surface.
"""

from __future__ import annotations

import io
import logging
import queue
import socket
import sys
import time
from collections.abc import Iterator
from pathlib import Path

from .messages import StreamMessage

log = logging.getLogger(__name__)

_CLOSED = object()


class TransportError(OSError):
    pass


class MemoryChannel:
    """Bounded in-process queue usable as both sink and source.

    ``send`` blocks while the queue is full, so a slow consumer throttles the
    producer instead of dropping messages.
    """

    def __init__(self, maxsize: int = 256):
        self._q: queue.Queue = queue.Queue(maxsize)

    def send(self, msg: StreamMessage | str) -> None:
        self._q.put(msg)

    def close(self) -> None:
        self._q.put(_CLOSED)

    def __iter__(self) -> Iterator[StreamMessage | str]:
        while True:
            item = self._q.get()
            if item is _CLOSED:
                return
            yield item


class ListSink:
    def __init__(self) -> None:
        self.messages: list[StreamMessage] = []
        self.closed = False

    def send(self, msg: StreamMessage) -> None:
        self.messages.append(msg)

    def close(self) -> None:
        self.closed = True

    def lines(self) -> list[str]:
        return [m.to_line() for m in self.messages]


class StreamSink:
    """Writes one JSON line per message to a text stream."""

    def __init__(self, fh: io.TextIOBase, owns: bool = True):
        self._fh = fh
        self._owns = owns

    def send(self, msg: StreamMessage) -> None:
        try:
            self._fh.write(msg.to_line() + "\n")
            self._fh.flush()
        except (BrokenPipeError, ConnectionError, ValueError) as exc:
            raise TransportError(f"sink disconnected: {exc}") from exc

    def close(self) -> None:
        if self._owns:
            try:
                self._fh.close()
            except OSError:
                pass


class LineSource:
    """Yields raw lines from a text stream; decoding is left to the consumer."""

    def __init__(self, fh: io.TextIOBase, owns: bool = True):
        self._fh = fh
        self._owns = owns

    def __iter__(self) -> Iterator[str]:
        try:
            for line in self._fh:
                if line.strip():
                    yield line
        except (ConnectionError, OSError) as exc:
            raise TransportError(f"source failed: {exc}") from exc
        finally:
            if self._owns:
                self._fh.close()

    def close(self) -> None:
        if self._owns:
            self._fh.close()


class TcpSource(LineSource):
    """Listens on ``host:port`` and reads NDJSON from the first peer to connect."""

    def __init__(self, host: str, port: int, accept_timeout: float | None = None):
        try:
            self._server = socket.create_server((host, port), reuse_port=False)
        except OSError as exc:
            raise TransportError(f"cannot listen on {host}:{port}: {exc}") from exc
        self._server.settimeout(accept_timeout)
        self.address = self._server.getsockname()
        self._conn: socket.socket | None = None

    def __iter__(self) -> Iterator[str]:
        try:
            self._conn, _ = self._server.accept()
        except OSError as exc:
            raise TransportError(f"no peer connected: {exc}") from exc
        finally:
            self._server.close()
        self._fh = self._conn.makefile("r", encoding="utf-8", newline="\n")
        self._owns = True
        yield from super().__iter__()

    def close(self) -> None:
        self._server.close()
        if self._conn is not None:
            self._conn.close()


class TcpSink(StreamSink):
    """Connects to ``host:port`` (retrying for ``connect_timeout`` seconds)."""

    def __init__(self, host: str, port: int, connect_timeout: float = 10.0):
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                self._sock = socket.create_connection((host, port), timeout=connect_timeout)
                break
            except OSError as exc:
                if time.monotonic() >= deadline:
                    raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
                time.sleep(0.05)
        self._sock.settimeout(None)
        super().__init__(self._sock.makefile("w", encoding="utf-8", newline="\n"))

    def close(self) -> None:
        super().close()
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()


def _parse_tcp(address: str) -> tuple[str, int]:
    try:
        _, host, port = address.split(":", 2)
        return host, int(port)
    except ValueError:
        raise ValueError(f"bad tcp address {address!r}; expected tcp:HOST:PORT") from None


def open_source(address: str):
    if address == "-":
        return LineSource(sys.stdin, owns=False)
    if address.startswith("tcp:"):
        return TcpSource(*_parse_tcp(address))
    if address.startswith("file:"):
        path = Path(address[5:])
        try:
            return LineSource(path.open(encoding="utf-8"))
        except OSError as exc:
            raise TransportError(f"cannot open {path}: {exc}") from exc
    raise ValueError(f"unknown source address {address!r}")


def open_sink(address: str):
    if address == "-":
        return StreamSink(sys.stdout, owns=False)
    if address.startswith("tcp:"):
        return TcpSink(*_parse_tcp(address))
    if address.startswith("file:"):
        path = Path(address[5:])
        try:
            return StreamSink(path.open("w", encoding="utf-8"))
        except OSError as exc:
            raise TransportError(f"cannot open {path}: {exc}") from exc
    raise ValueError(f"unknown sink address {address!r}")
