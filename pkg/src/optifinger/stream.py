"""Frame source emulation: scan scheduling, wire format and a TCP streamer.

Each frame on the wire is 1999 bytes::

    0x50 0x46 | version u8 | frame_id u32 | timestamp_us u64 |
    990 x u16 readings (960 LED-major pairs, then 30 dark slots) | crc32 u32

All integers are little-endian; the CRC covers everything before it.
"""

from __future__ import annotations

import asyncio
import collections
import logging
import struct
import sys
import time
import zlib
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .sensing import N_DIODES, N_FEATURES, N_LEDS, SignalFrame

__all__ = [
    "FRAME_BYTES",
    "WIRE_VERSION",
    "StreamError",
    "BadMagic",
    "Truncated",
    "CrcMismatch",
    "BadVersion",
    "ReadingOverflow",
    "BindFailure",
    "ScanSchedule",
    "encode",
    "decode",
    "iter_decode",
    "StreamServer",
    "serve",
    "dump",
    "replay_source",
    "live_source",
]

log = logging.getLogger(__name__)

MAGIC = b"\x50\x46"
WIRE_VERSION = 1
_HEADER = struct.Struct("<2sBIQ")
HEADER_BYTES = _HEADER.size  # 15
PAYLOAD_BYTES = 2 * N_FEATURES
FRAME_BYTES = HEADER_BYTES + PAYLOAD_BYTES + 4


class StreamError(ValueError):
    pass


class BadMagic(StreamError):
    pass


class BadVersion(StreamError):
    pass


class Truncated(StreamError):
    pass


class CrcMismatch(StreamError):
    pass


class ReadingOverflow(StreamError):
    pass


class BindFailure(OSError):
    pass


@dataclass(frozen=True)
class ScanSchedule:
    """Read-slot order of one frame: every LED lit in turn while each diode
    is sampled, followed by one dark sample per diode."""

    n_leds: int = N_LEDS
    n_diodes: int = N_DIODES
    frame_rate_hz: float = 60.0

    @property
    def slots(self) -> list:
        lit = [(led, d) for led in range(self.n_leds) for d in range(self.n_diodes)]
        dark = [(None, d) for d in range(self.n_diodes)]
        return lit + dark

    def __len__(self) -> int:
        return self.n_leds * self.n_diodes + self.n_diodes

    @property
    def slot_period_us(self) -> float:
        return 1e6 / (self.frame_rate_hz * len(self))

    def active_led(self, slot: int):
        if not 0 <= slot < len(self):
            raise IndexError(slot)
        return slot // self.n_diodes if slot < self.n_leds * self.n_diodes else None

    def assemble(self, slot_readings, frame_id: int = 0, timestamp_us: int = 0) -> SignalFrame:
        r = np.asarray(slot_readings, dtype=np.int64)
        if r.shape != (len(self),):
            raise ValueError(f"expected {len(self)} slot readings")
        k = self.n_leds * self.n_diodes
        return SignalFrame(r[:k], r[k:], frame_id, timestamp_us)


def encode(frame: SignalFrame) -> bytes:
    flat = frame.flat()
    if flat.shape != (N_FEATURES,):
        raise ValueError(f"frame must carry {N_FEATURES} readings")
    if flat.min() < 0 or flat.max() > 0xFFFF:
        raise ReadingOverflow("readings must fit in 16 unsigned bits")
    if not 0 <= frame.frame_id <= 0xFFFFFFFF or not 0 <= frame.timestamp_us < 2**64:
        raise ReadingOverflow("frame_id or timestamp out of range")
    body = _HEADER.pack(MAGIC, WIRE_VERSION, frame.frame_id, frame.timestamp_us) + flat.astype("<u2").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(buf: bytes) -> SignalFrame:
    """Parse the first :data:`FRAME_BYTES` bytes of ``buf``; nothing beyond is read."""
    view = memoryview(buf)
    if len(view) >= 2 and bytes(view[:2]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(view[:2])!r}")
    if len(view) < FRAME_BYTES:
        raise Truncated(f"need {FRAME_BYTES} bytes, have {len(view)}")
    view = view[:FRAME_BYTES]
    magic, version, frame_id, ts = _HEADER.unpack_from(view, 0)
    if version != WIRE_VERSION:
        raise BadVersion(f"unsupported wire version {version}")
    (crc,) = struct.unpack_from("<I", view, FRAME_BYTES - 4)
    if zlib.crc32(view[: FRAME_BYTES - 4]) != crc:
        raise CrcMismatch("frame checksum does not match")
    readings = np.frombuffer(view, dtype="<u2", count=N_FEATURES, offset=HEADER_BYTES).astype(np.int64)
    k = N_LEDS * N_DIODES
    return SignalFrame(readings[:k], readings[k:], frame_id, ts)


def iter_decode(buf: bytes) -> Iterator[SignalFrame]:
    """Decode back-to-back frames; raises :class:`Truncated` on a partial tail."""
    for pos in range(0, len(buf), FRAME_BYTES):
        yield decode(buf[pos : pos + FRAME_BYTES])


# ---------------------------------------------------------------------------
# Frame sources
# ---------------------------------------------------------------------------

def replay_source(features) -> Iterator[SignalFrame]:
    """Frames rebuilt from stored feature rows (one frame per row)."""
    for i, row in enumerate(np.asarray(features)):
        yield SignalFrame.from_features(row, frame_id=i)


def live_source(model, calib, seed: int = 0, press_frames: int = 60, max_depth_mm: float = 2.0) -> Iterator[SignalFrame]:
    """Endless synthetic acquisition: a hemisphere tip pressed and released
    at random places, one press cycle every ``press_frames`` frames."""
    from .geometry import ABPoint, sample_uniform_ab
    from .mechanics import deformation, tip

    rng = np.random.default_rng(seed)
    dims = model.dims
    profile = max_depth_mm * np.sin(np.linspace(0.0, np.pi, press_frames)) - 0.2
    i = 0
    while True:
        a, b = sample_uniform_ab(1, rng, dims)[0]
        field = deformation(ABPoint.at(a, b, dims), max_depth_mm, tip("hemisphere"), dims)
        sweep = model.displacement_sweep(field, profile)
        levels = model.noiseless_levels(sweep, calib)
        for k in range(press_frames):
            yield model.frames_from_levels(levels[:, k], calib, [seed, i], frame_id=i)
            i += 1


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------

class _Client:
    def __init__(self, writer, capacity: int):
        self.writer = writer
        self.buffer = collections.deque()
        self.capacity = capacity
        self.ready = asyncio.Event()
        self.dropped = 0
        self.sent = 0
        self.closed = False

    def push(self, data: bytes | None):
        if data is not None and len(self.buffer) >= self.capacity:
            self.buffer.popleft()
            self.dropped += 1
        self.buffer.append(data)
        self.ready.set()


class StreamServer:
    """Paced broadcaster of encoded frames to any number of TCP clients.

    One producer task ticks at ``rate_hz`` on an absolute schedule; each
    client owns a bounded buffer (oldest frames dropped when full) drained
    by its own writer task. When ``wait_for_client`` is set the clock starts
    at the first connection, so replays reach that client in full.
    """

    def __init__(
        self,
        source: Iterable[SignalFrame],
        host: str = "127.0.0.1",
        port: int = 0,
        rate_hz: float = 60.0,
        buffer_frames: int = 60,
        wait_for_client: bool = True,
        status_interval_s: float = 1.0,
        status_stream=None,
    ):
        if not rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        self.source = iter(source)
        self.host = host
        self.port = port
        self.rate_hz = rate_hz
        self.buffer_frames = buffer_frames
        self.wait_for_client = wait_for_client
        self.status_interval_s = status_interval_s
        self.status_stream = status_stream
        self.clients: list[_Client] = []
        self.frames_emitted = 0
        self.dropped_total = 0
        self._server = None
        self._first_client = None
        self._done = None

    @property
    def dropped(self) -> int:
        return self.dropped_total + sum(c.dropped for c in self.clients)

    def status_line(self) -> str:
        return f"frames={self.frames_emitted} clients={len(self.clients)} dropped={self.dropped}"

    async def start(self):
        self._first_client = asyncio.Event()
        self._done = asyncio.Event()
        try:
            self._server = await asyncio.start_server(self._on_connect, self.host, self.port)
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def _on_connect(self, reader, writer):
        client = _Client(writer, self.buffer_frames)
        self.clients.append(client)
        self._first_client.set()
        try:
            while True:
                await client.ready.wait()
                client.ready.clear()
                while client.buffer:
                    data = client.buffer.popleft()
                    if data is None:
                        return
                    writer.write(data)
                    client.sent += 1
                    await writer.drain()
        except (ConnectionError, asyncio.CancelledError) as exc:
            log.info("client disconnected: %s", exc)
        finally:
            client.closed = True
            self.clients.remove(client)
            self.dropped_total += client.dropped
            try:
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def run(self, max_frames: int | None = None, duration_s: float | None = None):
        """Produce frames until the source ends or a limit is hit, then end
        every client stream cleanly."""
        if self.wait_for_client:
            await self._first_client.wait()
        period = 1.0 / self.rate_hz
        loop = asyncio.get_running_loop()
        start = loop.time()
        next_status = start + self.status_interval_s
        k = 0
        for frame in self.source:
            if max_frames is not None and k >= max_frames:
                break
            due = start + k * period
            if duration_s is not None and due - start >= duration_s:
                break
            delay = due - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            frame = SignalFrame(frame.pair_readings, frame.ambient, k, int(round(k * 1e6 / self.rate_hz)))
            data = encode(frame)
            for c in list(self.clients):
                c.push(data)
            self.frames_emitted += 1
            k += 1
            if self.status_stream is not None and loop.time() >= next_status:
                print(self.status_line(), file=self.status_stream, flush=True)
                next_status += self.status_interval_s
        for c in list(self.clients):
            c.push(None)
        while self.clients:
            await asyncio.sleep(0.01)
        if self.status_stream is not None:
            print(self.status_line(), file=self.status_stream, flush=True)

    async def close(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


def serve(source, host="127.0.0.1", port=0, rate_hz=60.0, max_frames=None, duration_s=None, wait_for_client=True, status_stream=sys.stderr, on_ready=None) -> StreamServer:
    """Blocking convenience wrapper around :class:`StreamServer`."""

    async def main():
        server = StreamServer(source, host, port, rate_hz, wait_for_client=wait_for_client, status_stream=status_stream)
        await server.start()
        if on_ready is not None:
            on_ready(server)
        try:
            await server.run(max_frames=max_frames, duration_s=duration_s)
        finally:
            await server.close()
        return server

    return asyncio.run(main())


async def dump_async(host: str, port: int, n: int | None = None, timeout_s: float | None = None) -> list[SignalFrame]:
    reader, writer = await asyncio.open_connection(host, port)
    frames = []
    deadline = None if timeout_s is None else time.monotonic() + timeout_s
    try:
        while n is None or len(frames) < n:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                break
            try:
                data = await asyncio.wait_for(reader.readexactly(FRAME_BYTES), remaining)
            except asyncio.IncompleteReadError as exc:
                if exc.partial:
                    raise Truncated("stream ended inside a frame") from exc
                break
            except asyncio.TimeoutError:
                break
            frames.append(decode(data))
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass
    return frames


def dump(host: str, port: int, n: int | None = None, out=None, timeout_s: float | None = None) -> list[SignalFrame]:
    """Connect, collect up to ``n`` frames (or until end of stream), optionally
    write them as CSV rows ``frame_id,timestamp_us,v1..v990``."""
    frames = asyncio.run(dump_async(host, port, n, timeout_s))
    if out is not None:
        with open(out, "w", newline="\n") as fh:
            fh.write("frame_id,timestamp_us," + ",".join(f"v{i + 1}" for i in range(N_FEATURES)) + "\n")
            for f in frames:
                fh.write(f"{f.frame_id},{f.timestamp_us}," + ",".join(str(int(v)) for v in f.flat()) + "\n")
    return frames
