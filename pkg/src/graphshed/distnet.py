"""Communication-free distributed training over framed TCP messages.

One master hands whole partitions to requesting workers; workers train
locally and only ever exchange control messages and the partition bytes
themselves, so there is no mid-training communication to synchronize.

Wire format: every message is a 1-byte type tag, a 4-byte little-endian
payload length, and the payload.  Data points travel either marshaled
(protocol 1, one message per point: d features then the target, all
8-byte little-endian doubles) or entry-wise (protocol 2, one 8-byte
message per value).  Protocol 1 is the default; protocol 2 exists for
the messaging benchmark.
"""

from __future__ import annotations

import heapq
import logging
import os
import selectors
import socket
import struct
import time
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .clubbing import PartitionSet
from .data import Dataset, LabeledPoint
from .training import ClassifierSpec, fit_partition, save_model

log = logging.getLogger(__name__)

_HEADER = struct.Struct("<BI")
_DATA_BEGIN_FMT = struct.Struct("<III")  # partition id, point count, d
_DONE_FMT = struct.Struct("<IB")  # partition id, failure flag
MAX_PAYLOAD = 1 << 26


class ProtocolError(Exception):
    """Malformed frame, unknown tag, or out-of-order event."""


class ConnectionClosed(ProtocolError):
    """Peer went away mid-frame."""


class EventTag(IntEnum):
    CONNECT_REQ = 1
    CONNECT_ACK = 2
    DATA_REQUEST = 3
    DATA_BEGIN = 4
    DATA_POINT = 5
    DATA_ENTRY = 6
    DATA_END = 7
    DONE_TRAINING = 8
    TERM_TRAIN = 9


_VALID_TAGS = {int(t) for t in EventTag}


@dataclass
class Message:
    msg_type: int
    payload: bytes

    @property
    def length(self) -> int:
        return len(self.payload)


def encode_message(tag: int, payload: bytes = b"") -> bytes:
    if int(tag) not in _VALID_TAGS:
        raise ProtocolError(f"unknown message tag {tag}")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds limit")
    return _HEADER.pack(int(tag), len(payload)) + payload


class FrameDecoder:
    """Incremental decoder; feed bytes, collect complete messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while len(self._buf) >= _HEADER.size:
            tag, length = _HEADER.unpack_from(self._buf)
            if tag not in _VALID_TAGS:
                raise ProtocolError(f"unknown message tag {tag}")
            if length > MAX_PAYLOAD:
                raise ProtocolError(f"declared payload of {length} bytes exceeds limit")
            if len(self._buf) < _HEADER.size + length:
                break
            payload = bytes(self._buf[_HEADER.size : _HEADER.size + length])
            del self._buf[: _HEADER.size + length]
            out.append(Message(tag, payload))
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def send_message(sock: socket.socket, tag: int, payload: bytes = b"") -> None:
    sock.sendall(encode_message(tag, payload))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = bytearray()
    while len(chunks) < n:
        got = sock.recv(n - len(chunks))
        if not got:
            raise ConnectionClosed("connection closed mid-frame")
        chunks.extend(got)
    return bytes(chunks)


def recv_message(sock: socket.socket) -> Message:
    header = _recv_exact(sock, _HEADER.size)
    tag, length = _HEADER.unpack(header)
    if tag not in _VALID_TAGS:
        raise ProtocolError(f"unknown message tag {tag}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {length} bytes exceeds limit")
    payload = _recv_exact(sock, length) if length else b""
    return Message(tag, payload)


# ---------------------------------------------------------------------------
# point encoding

def _pack_point(features: np.ndarray, target: float) -> bytes:
    vals = np.empty(len(features) + 1)
    vals[:-1] = features
    vals[-1] = target
    return vals.astype("<f8").tobytes()


def encode_point_p1(point: LabeledPoint) -> Message:
    """Marshaled protocol: one message holding the whole point."""
    return Message(EventTag.DATA_POINT, _pack_point(point.features, point.target))


def decode_point_p1(msg: Message) -> LabeledPoint:
    if msg.msg_type != EventTag.DATA_POINT:
        raise ProtocolError(f"expected DATA_POINT, got tag {msg.msg_type}")
    if msg.length % 8 != 0 or msg.length < 8:
        raise ProtocolError(f"bad DATA_POINT payload of {msg.length} bytes")
    vals = np.frombuffer(msg.payload, dtype="<f8")
    return LabeledPoint(vals[:-1].astype(np.float64), int(vals[-1]))


def encode_point_p2(point: LabeledPoint) -> list[Message]:
    """Single-entry protocol: d+1 messages, features then target."""
    out = [
        Message(EventTag.DATA_ENTRY, struct.pack("<d", float(v))) for v in point.features
    ]
    out.append(Message(EventTag.DATA_ENTRY, struct.pack("<d", float(point.target))))
    return out


def decode_entries(msgs: list[Message]) -> LabeledPoint:
    vals = []
    for m in msgs:
        if m.msg_type != EventTag.DATA_ENTRY or m.length != 8:
            raise ProtocolError("bad DATA_ENTRY message")
        vals.append(struct.unpack("<d", m.payload)[0])
    return LabeledPoint(np.array(vals[:-1]), int(vals[-1]))


def send_points(sock: socket.socket, feats: np.ndarray, targets: np.ndarray, protocol: int = 1) -> int:
    """Stream points under the chosen protocol; returns messages sent."""
    if feats.shape[1] < 1:
        raise ValueError("cannot send points with empty features")
    count = 0
    if protocol == 1:
        for i in range(feats.shape[0]):
            send_message(sock, EventTag.DATA_POINT, _pack_point(feats[i], targets[i]))
            count += 1
    elif protocol == 2:
        for i in range(feats.shape[0]):
            for v in feats[i]:
                send_message(sock, EventTag.DATA_ENTRY, struct.pack("<d", float(v)))
                count += 1
            send_message(sock, EventTag.DATA_ENTRY, struct.pack("<d", float(targets[i])))
            count += 1
    else:
        raise ValueError(f"unknown protocol {protocol}")
    return count


# ---------------------------------------------------------------------------
# worker bookkeeping

def fnv1a64(data: bytes) -> int:
    """Seedless 64-bit FNV-1a; stable across processes unlike hash()."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def worker_key(identity: str) -> int:
    return fnv1a64(identity.encode("utf-8"))


@dataclass
class WorkerEntry:
    key: int
    identity: str
    conn: socket.socket
    state: str = "connected"


class WorkerTable:
    """Fixed-capacity open-addressing table keyed by 64-bit worker keys."""

    def __init__(self, capacity: int = 128):
        self.capacity = capacity
        self._keys: list[int | None] = [None] * capacity
        self._entries: list[WorkerEntry | None] = [None] * capacity
        self._count = 0
        self.connect_seconds: float | None = None

    def _probe(self, key: int) -> int | None:
        start = key % self.capacity
        for off in range(self.capacity):
            slot = (start + off) % self.capacity
            if self._keys[slot] is None or self._keys[slot] == key:
                return slot
        return None

    def insert(self, entry: WorkerEntry) -> bool:
        slot = self._probe(entry.key)
        if slot is None:
            raise OverflowError("worker table full")
        if self._keys[slot] == entry.key:
            return False  # duplicate key
        self._keys[slot] = entry.key
        self._entries[slot] = entry
        self._count += 1
        return True

    def get(self, key: int) -> WorkerEntry | None:
        slot = self._probe(key)
        if slot is None or self._keys[slot] is None:
            return None
        entry = self._entries[slot]
        if entry is None or entry.state == "gone":
            return None
        return entry

    def remove(self, key: int) -> None:
        # lazy removal: keep the slot marked so probe chains stay intact
        slot = self._probe(key)
        if slot is not None and self._keys[slot] == key:
            entry = self._entries[slot]
            if entry is not None and entry.state != "gone":
                self._count -= 1
            if entry is not None:
                entry.state = "gone"

    def entries(self) -> list[WorkerEntry]:
        return [e for e in self._entries if e is not None and e.state != "gone"]

    def __len__(self) -> int:
        return self._count


class RequestQueue:
    """FIFO of data requests; simultaneous arrivals order by (timestamp, key)."""

    def __init__(self):
        self._heap: list[tuple[int, int]] = []

    def push(self, key: int, timestamp_ns: int | None = None) -> None:
        ts = time.monotonic_ns() if timestamp_ns is None else timestamp_ns
        heapq.heappush(self._heap, (ts, key))

    def pop(self) -> int:
        return heapq.heappop(self._heap)[1]

    def remove(self, key: int) -> None:
        self._heap = [(ts, k) for ts, k in self._heap if k != key]
        heapq.heapify(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


# ---------------------------------------------------------------------------
# master side

def connect_phase(
    master_endpoint: tuple[str, int],
    expected_workers: int,
    capacity: int = 128,
    timeout: float = 30.0,
) -> WorkerTable:
    """Accept and acknowledge connection requests from every worker.

    Returns once `expected_workers` distinct workers registered; the
    elapsed time is recorded on the table.  Duplicate identities are
    refused with a non-zero acknowledgment status.
    """
    if capacity < expected_workers:
        raise ValueError("table capacity below expected worker count")
    table = WorkerTable(capacity)
    t0 = time.perf_counter()
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        listener.bind(master_endpoint)
        listener.listen(capacity)
        listener.settimeout(0.2)
        deadline = time.monotonic() + timeout
        while len(table) < expected_workers:
            if time.monotonic() > deadline:
                raise TimeoutError(
                    f"connect phase timed out: {expected_workers - len(table)} of "
                    f"{expected_workers} workers missing "
                    f"(registered: {[e.identity for e in table.entries()]})"
                )
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            conn.settimeout(timeout)
            msg = recv_message(conn)
            if msg.msg_type != EventTag.CONNECT_REQ:
                conn.close()
                raise ProtocolError(f"expected CONNECT_REQ, got tag {msg.msg_type}")
            identity = msg.payload.decode("utf-8")
            entry = WorkerEntry(worker_key(identity), identity, conn)
            if table.insert(entry):
                send_message(conn, EventTag.CONNECT_ACK, b"\x00")
            else:
                send_message(conn, EventTag.CONNECT_ACK, b"\x01")
                conn.close()
    finally:
        listener.close()
    table.connect_seconds = time.perf_counter() - t0
    log.info("connected %d workers in %.1f ms", len(table), 1000 * table.connect_seconds)
    return table


def _send_partition(entry: WorkerEntry, pid: int, feats: np.ndarray, targets: np.ndarray, protocol: int) -> None:
    begin = _DATA_BEGIN_FMT.pack(pid, feats.shape[0], feats.shape[1])
    send_message(entry.conn, EventTag.DATA_BEGIN, begin)
    send_points(entry.conn, feats, targets, protocol)
    send_message(entry.conn, EventTag.DATA_END)


def master_serve(
    parts: PartitionSet,
    table: WorkerTable,
    ds: Dataset,
    protocol: int = 1,
    timeout: float = 600.0,
) -> list[dict]:
    """Serve every partition exactly once and collect all training acks.

    Requests queue round-robin; a worker lost mid-assignment has its
    partition re-queued for the next requester.  When acknowledgments
    cover all partitions, TERM_TRAIN goes out to every worker.
    """
    if not parts.partitions:
        raise ValueError("nothing to serve: empty partition set")
    pending: list[int] = [p.id for p in parts.partitions]
    by_id = {p.id: p for p in parts.partitions}
    in_flight: dict[int, int] = {}  # worker key -> partition id
    queue = RequestQueue()
    acks = 0
    events: list[dict] = []
    sel = selectors.DefaultSelector()
    for entry in table.entries():
        entry.conn.settimeout(timeout)
        sel.register(entry.conn, selectors.EVENT_READ, entry)

    def drop_worker(entry: WorkerEntry, reason: str) -> None:
        nonlocal pending
        log.warning("worker %s dropped: %s", entry.identity, reason)
        pid = in_flight.pop(entry.key, None)
        if pid is not None:
            pending.insert(0, pid)
            events.append({"event": "requeue", "partition": pid, "worker": entry.identity})
        queue.remove(entry.key)
        try:
            sel.unregister(entry.conn)
        except (KeyError, ValueError):
            pass
        entry.conn.close()
        table.remove(entry.key)

    def dispatch() -> None:
        while pending and len(queue):
            key = queue.pop()
            entry = table.get(key)
            if entry is None or entry.state == "gone":
                continue
            pid = pending.pop(0)
            p = by_id[pid]
            try:
                _send_partition(entry, pid, ds.features[p.point_ids], ds.targets[p.point_ids], protocol)
            except OSError as exc:
                pending.insert(0, pid)  # not yet in flight, put it back
                drop_worker(entry, f"send failed: {exc}")
                events.append({"event": "requeue", "partition": pid, "worker": entry.identity})
                continue
            in_flight[key] = pid
            events.append({"event": "data_begin", "partition": pid, "worker": entry.identity})

    deadline = time.monotonic() + timeout
    try:
        while acks < len(parts.partitions):
            if time.monotonic() > deadline:
                raise TimeoutError(
                    f"serve timed out with {acks}/{len(parts.partitions)} partitions acknowledged"
                )
            ready = sel.select(timeout=0.2)
            for selkey, _ in ready:
                entry: WorkerEntry = selkey.data
                try:
                    msg = recv_message(entry.conn)
                except (ProtocolError, OSError) as exc:
                    drop_worker(entry, str(exc))
                    continue
                if msg.msg_type == EventTag.DATA_REQUEST:
                    queue.push(entry.key)
                    events.append({"event": "data_request", "worker": entry.identity})
                elif msg.msg_type == EventTag.DONE_TRAINING:
                    if len(msg.payload) != _DONE_FMT.size:
                        raise ProtocolError("bad DONE_TRAINING payload")
                    pid, failed = _DONE_FMT.unpack(msg.payload)
                    if table.get(entry.key) is None:
                        raise ProtocolError(f"ack from unknown worker {entry.identity}")
                    in_flight.pop(entry.key, None)
                    acks += 1
                    events.append(
                        {
                            "event": "done_training",
                            "partition": int(pid),
                            "worker": entry.identity,
                            "failed": bool(failed),
                        }
                    )
                    if failed:
                        log.warning("worker %s reported failure on partition %d", entry.identity, pid)
                else:
                    raise ProtocolError(f"unexpected tag {msg.msg_type} from {entry.identity}")
            dispatch()
        for entry in table.entries():
            try:
                send_message(entry.conn, EventTag.TERM_TRAIN)
                events.append({"event": "term_train", "worker": entry.identity})
            except OSError:
                pass
    finally:
        sel.close()
        for entry in table.entries():
            entry.conn.close()
    return events


# ---------------------------------------------------------------------------
# worker side

def _recv_partition(sock: socket.socket, begin: Message) -> tuple[int, np.ndarray, np.ndarray]:
    pid, count, d = _DATA_BEGIN_FMT.unpack(begin.payload)
    feats = np.empty((count, d))
    targets = np.empty(count, dtype=np.int64)
    got = 0
    entry_buf: list[Message] = []
    while True:
        msg = recv_message(sock)
        if msg.msg_type == EventTag.DATA_END:
            break
        if msg.msg_type == EventTag.DATA_POINT:
            point = decode_point_p1(msg)
            if point.features.shape[0] != d:
                raise ProtocolError("point dimensionality disagrees with DATA_BEGIN")
            feats[got] = point.features
            targets[got] = point.target
            got += 1
        elif msg.msg_type == EventTag.DATA_ENTRY:
            entry_buf.append(msg)
            if len(entry_buf) == d + 1:
                point = decode_entries(entry_buf)
                feats[got] = point.features
                targets[got] = point.target
                got += 1
                entry_buf = []
        else:
            raise ProtocolError(f"unexpected tag {msg.msg_type} inside a DATA envelope")
    if got != count or entry_buf:
        raise ProtocolError(f"expected {count} points, reassembled {got}")
    return pid, feats, targets


def connect_with_retry(endpoint: tuple[str, int], timeout: float) -> socket.socket:
    """Dial the master, retrying while it is still coming up."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(endpoint, timeout=timeout)
        except ConnectionRefusedError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)


def worker_loop(
    master_endpoint: tuple[str, int],
    spec: ClassifierSpec,
    model_dir,
    timeout: float = 600.0,
) -> list[Path]:
    """Request partitions, train them, persist models, until terminated."""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    sock = connect_with_retry(master_endpoint, timeout)
    sock.settimeout(timeout)
    written: list[Path] = []
    try:
        host, port = sock.getsockname()[:2]
        identity = f"{host}:{port}:{os.getpid()}"
        send_message(sock, EventTag.CONNECT_REQ, identity.encode("utf-8"))
        ack = recv_message(sock)
        if ack.msg_type != EventTag.CONNECT_ACK:
            raise ProtocolError(f"expected CONNECT_ACK, got tag {ack.msg_type}")
        if ack.payload != b"\x00":
            raise ProtocolError("master refused connection (duplicate worker key)")
        while True:
            send_message(sock, EventTag.DATA_REQUEST)
            msg = recv_message(sock)
            if msg.msg_type == EventTag.TERM_TRAIN:
                break
            if msg.msg_type != EventTag.DATA_BEGIN:
                raise ProtocolError(f"expected DATA_BEGIN or TERM_TRAIN, got tag {msg.msg_type}")
            pid, feats, targets = _recv_partition(sock, msg)
            failed = 0
            try:
                model = fit_partition(feats, targets, spec)
                out = model_dir / f"partition_{pid:04d}.model"
                save_model(model, out)
                written.append(out)
            except Exception:
                log.exception("training failed for partition %d", pid)
                failed = 1
            send_message(sock, EventTag.DONE_TRAINING, _DONE_FMT.pack(pid, failed))
    finally:
        sock.close()
    return written
