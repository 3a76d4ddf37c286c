"""Framed duplex channels, transcripts, round counting and a bandwidth/RTT latency model."""
from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np

MAGIC = b"PQJ1"
HEADER = struct.Struct("<4sBQI")
CLIENT, SERVER = "client", "server"


class FramingError(ValueError):
    pass


class ChannelClosed(ConnectionError):
    pass


class FrameType(IntEnum):
    CT = 0x01
    PLAIN = 0x02
    DRELU = 0x03
    CONTROL = 0x04
    MERGED = 0x05


@dataclass(frozen=True)
class Frame:
    type: int
    seq: int
    payload: bytes

    def encode(self) -> bytes:
        if self.type not in FrameType._value2member_map_:
            raise FramingError(f"unknown frame type {self.type:#x}")
        return HEADER.pack(MAGIC, self.type, self.seq, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, buf: bytes) -> "Frame":
        parser = FrameParser()
        frames = parser.feed(buf)
        if len(frames) != 1 or parser.pending:
            raise FramingError("buffer does not hold exactly one frame")
        return frames[0]


class FrameParser:
    """Incremental parser; bytes may arrive in arbitrary pieces."""

    def __init__(self, max_len: int = 1 << 31):
        self._buf = bytearray()
        self.max_len = max_len

    def _header(self, buf, pos: int) -> int:
        magic, ftype, seq, n = HEADER.unpack_from(buf, pos)
        if magic != MAGIC:
            raise FramingError(f"bad magic {bytes(magic)!r}")
        if ftype not in FrameType._value2member_map_:
            raise FramingError(f"unknown frame type {ftype:#x}")
        if n > self.max_len:
            raise FramingError(f"frame length {n} exceeds limit")
        return n

    def feed(self, data: bytes) -> list[Frame]:
        out = []
        if not self._buf:
            # fast path: parse complete frames straight from ``data``
            view, pos = memoryview(data), 0
            while len(data) - pos >= HEADER.size:
                n = self._header(data, pos)
                if len(data) - pos < HEADER.size + n:
                    break
                _, ftype, seq, _ = HEADER.unpack_from(data, pos)
                start = pos + HEADER.size
                payload = bytes(view[start:start + n])
                out.append(Frame(ftype, seq, payload))
                pos = start + n
            self._buf += view[pos:]
            return out
        self._buf += data
        while len(self._buf) >= HEADER.size:
            n = self._header(self._buf, 0)
            if len(self._buf) < HEADER.size + n:
                break
            _, ftype, seq, _ = HEADER.unpack_from(self._buf)
            payload = bytes(self._buf[HEADER.size:HEADER.size + n])
            del self._buf[:HEADER.size + n]
            out.append(Frame(ftype, seq, payload))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- channels ----------------------------------------------------------------

class Endpoint:
    """One side of a duplex channel. ``send`` numbers frames per direction."""

    def __init__(self):
        self._seq = 0
        self._last_rx = -1

    def send(self, ftype: int, payload: bytes) -> Frame:
        fr = Frame(int(ftype), self._seq, bytes(payload))
        self._seq += 1
        self._write(fr.encode())
        return fr

    def recv(self, timeout: float | None = 30.0) -> Frame:
        fr = self._read(timeout)
        if fr.seq <= self._last_rx:
            raise FramingError(f"sequence went backwards ({fr.seq} after {self._last_rx})")
        self._last_rx = fr.seq
        return fr

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _read(self, timeout) -> Frame:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _MemEndpoint(Endpoint):
    def __init__(self, inbox: deque, outbox: deque, state: dict):
        super().__init__()
        self._in, self._out, self._state = inbox, outbox, state
        self._parser = FrameParser()
        self._ready: deque = deque()

    def _write(self, data: bytes) -> None:
        if self._state["closed"]:
            raise ChannelClosed("channel closed")
        self._out.append(data)

    def _read(self, timeout) -> Frame:
        while not self._ready:
            if not self._in:
                raise ChannelClosed("no frame pending on in-process channel")
            self._ready.extend(self._parser.feed(self._in.popleft()))
        return self._ready.popleft()

    def close(self) -> None:
        self._state["closed"] = True


def memory_pair() -> tuple[Endpoint, Endpoint]:
    a2b, b2a, st = deque(), deque(), {"closed": False}
    return _MemEndpoint(b2a, a2b, st), _MemEndpoint(a2b, b2a, st)


class _TCPEndpoint(Endpoint):
    def __init__(self, sock: socket.socket):
        super().__init__()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._q: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        parser = FrameParser()
        try:
            while True:
                data = self._sock.recv(1 << 20)
                if not data:
                    break
                for fr in parser.feed(data):
                    self._q.put(fr)
        except (OSError, FramingError) as exc:
            self._q.put(exc)
            return
        self._q.put(ChannelClosed("peer closed"))

    def _write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def _read(self, timeout) -> Frame:
        try:
            item = self._q.get(timeout=timeout)
        except queue.Empty:
            raise ChannelClosed("receive timed out") from None
        if isinstance(item, Exception):
            self._q.put(item)
            raise item
        return item

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_pair(host: str = "127.0.0.1") -> tuple[Endpoint, Endpoint]:
    """Two endpoints joined by a loopback TCP connection."""
    srv = socket.create_server((host, 0))
    port = srv.getsockname()[1]
    a = socket.create_connection((host, port))
    b, _ = srv.accept()
    srv.close()
    return _TCPEndpoint(a), _TCPEndpoint(b)


# -- transcript --------------------------------------------------------------

@dataclass
class Entry:
    direction: str          # "C->S" or "S->C"
    type: int
    seq: int
    nbytes: int             # modeled payload bytes on the wire
    category: str           # phase/kind used for round counting
    split: dict             # category -> bytes (sums to nbytes)


@dataclass
class Transcript:
    entries: list[Entry] = field(default_factory=list)
    keep_frames: bool = False
    frames: list[bytes] = field(default_factory=list)

    def add(self, sender: str, fr: Frame, category: str, nbytes: int | None = None,
            split: dict | None = None) -> Entry:
        nb = len(fr.payload) if nbytes is None else int(nbytes)
        split = {category: nb} if split is None else {k: int(v) for k, v in split.items() if v}
        if sum(split.values()) != nb:
            raise ValueError("byte split must partition the frame size")
        e = Entry("C->S" if sender == CLIENT else "S->C", fr.type, fr.seq, nb, category, split)
        self.entries.append(e)
        if self.keep_frames:
            self.frames.append(fr.encode())
        return e

    def bytes(self, category: str | None = None, phase: str | None = None) -> int:
        tot = 0
        for e in self.entries:
            for cat, nb in e.split.items():
                if _match(cat, category, phase):
                    tot += nb
        return tot

    def by_category(self) -> dict:
        out: dict = {}
        for e in self.entries:
            for cat, nb in e.split.items():
                out[cat] = out.get(cat, 0) + nb
        return out

    def rounds(self, category: str | None = None, phase: str | None = None) -> float:
        return rounds(self, category, phase)

    def to_json(self) -> list[dict]:
        return [asdict(e) for e in self.entries]


def _match(cat: str, category: str | None, phase: str | None) -> bool:
    if category is not None:
        if "/" in category:
            if cat != category:
                return False
        elif cat.split("/")[1] != category:
            return False
    return phase is None or cat.split("/")[0] == phase


def rounds(tr: Transcript, category: str | None = None, phase: str | None = None) -> float:
    """Half-rounds: each maximal run of same-direction messages counts 0.5."""
    runs, last = 0, None
    for e in tr.entries:
        if not _match(e.category, category, phase):
            continue
        if e.direction != last:
            runs += 1
            last = e.direction
    return 0.5 * runs


class Link:
    """A client/server endpoint pair plus a shared transcript.

    ``send`` is called on behalf of one party; frames are recorded at send time
    so every channel backend yields the same transcript.
    """

    def __init__(self, client: Endpoint, server: Endpoint, transcript: Transcript | None = None):
        self.ends = {CLIENT: client, SERVER: server}
        self.transcript = transcript if transcript is not None else Transcript()

    @classmethod
    def memory(cls, **kw) -> "Link":
        return cls(*memory_pair(), Transcript(**kw))

    @classmethod
    def tcp(cls, **kw) -> "Link":
        return cls(*tcp_pair(), Transcript(**kw))

    def send(self, sender: str, ftype: int, payload: bytes, category: str,
             nbytes: int | None = None, split: dict | None = None) -> Frame:
        fr = self.ends[sender].send(ftype, payload)
        self.transcript.add(sender, fr, category, nbytes, split)
        return fr

    def recv(self, receiver: str, expect: int | None = None) -> Frame:
        fr = self.ends[receiver].recv()
        if expect is not None and fr.type != expect:
            raise FramingError(f"expected frame type {expect:#x}, got {fr.type:#x}")
        return fr

    def close(self) -> None:
        for e in self.ends.values():
            e.close()


# -- residue payloads --------------------------------------------------------

def pack_residues(v) -> bytes:
    """8 bytes little-endian per residue."""
    return np.ascontiguousarray(np.asarray(v, dtype=np.int64).reshape(-1)).astype("<u8").tobytes()


def unpack_residues(b: bytes, shape=None) -> np.ndarray:
    if len(b) % 8:
        raise FramingError("residue payload is not a multiple of 8 bytes")
    v = np.frombuffer(b, dtype="<u8").astype(np.int64)
    return v.reshape(shape) if shape is not None else v


def pack_parts(parts: Iterable[bytes]) -> bytes:
    parts = list(parts)
    head = struct.pack(f"<I{len(parts)}Q", len(parts), *(len(x) for x in parts))
    return head + b"".join(parts)


def unpack_parts(b: bytes) -> list[bytes]:
    (k,) = struct.unpack_from("<I", b)
    lens = struct.unpack_from(f"<{k}Q", b, 4)
    pos = 4 + 8 * k
    out = []
    for n in lens:
        out.append(b[pos:pos + n])
        pos += n
    if pos != len(b):
        raise FramingError("trailing bytes in multipart payload")
    return out


# -- latency model -----------------------------------------------------------

@dataclass(frozen=True)
class NetProfile:
    name: str
    bandwidth: float   # bits per second
    rtt_ms: float

    def __post_init__(self):
        if self.bandwidth <= 0 or self.rtt_ms < 0:
            raise ValueError("bandwidth must be positive and rtt non-negative")

    @property
    def rtt(self) -> float:
        return self.rtt_ms / 1000.0


PROFILES = {
    "lan": NetProfile("lan", 3e9, 0.8),
    "wan1": NetProfile("wan1", 100e6, 40.0),
    "wan2": NetProfile("wan2", 100e6, 80.0),
    "wan3": NetProfile("wan3", 200e6, 40.0),
    "wan4": NetProfile("wan4", 200e6, 80.0),
}


def get_profile(name: str, bandwidth: float | None = None, rtt_ms: float | None = None) -> NetProfile:
    if name == "custom":
        if bandwidth is None or rtt_ms is None:
            raise ValueError("custom profile needs bandwidth and rtt")
        return NetProfile("custom", bandwidth, rtt_ms)
    try:
        return PROFILES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown network profile {name!r}") from None


def transfer_time(nbytes: int, rounds_: float, profile: NetProfile) -> float:
    return nbytes * 8 / profile.bandwidth + rounds_ * profile.rtt


def model_latency(tr: Transcript, profile: NetProfile, category: str | None = None,
                  phase: str | None = None) -> float:
    """Modeled seconds: serialization time of all bytes plus rounds times RTT."""
    return transfer_time(tr.bytes(category, phase), rounds(tr, category, phase), profile)


# -- record / replay ---------------------------------------------------------

def write_recording(path, header: dict, tr: Transcript) -> None:
    if not tr.keep_frames:
        raise ValueError("transcript was not recording frames")
    meta = dict(header)
    meta["entries"] = tr.to_json()
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for fr in tr.frames:
            fh.write(fr)


def read_recording(path) -> tuple[dict, list[bytes]]:
    with open(path, "rb") as fh:
        data = fh.read()
    (n,) = struct.unpack_from("<I", data)
    header = json.loads(data[4:4 + n])
    parser = FrameParser()
    frames = [f.encode() for f in parser.feed(data[4 + n:])]
    if parser.pending:
        raise FramingError("truncated frame stream in recording")
    return header, frames
