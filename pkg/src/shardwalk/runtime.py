"""Actor substrate: storage shards, the coordinator, and two transports.

Every storage shard is a single thread draining one mailbox, so the
operations it applies form a total order and each reply reflects one
point in that order. Trainers talk to shards and to the coordinator
through `RpcClient`, which correlates asynchronous responses by request
id; responses from different shards may complete out of order.

Both transports move the same encoded frames and count them at the same
boundaries, so accounting is transport-independent by construction:

  * inproc — frames travel through `queue.Queue` mailboxes directly.
  * tcp    — frames travel over loopback sockets, one connection per
             (client, server) pair, with reader threads feeding the same
             mailboxes.

The barrier protocol: a trainer first drains its own outstanding writes
(every mutating request is acked), then reports arrival. Once all
participants have arrived, the coordinator sends a flush marker to every
shard and releases the round only after all flush acks, so any write
acked before an arrival is visible to every read issued after release.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import frames as fr
from .errors import BarrierAborted, ProtocolError, StoreError, TransportError
from .shardmap import init_shard_rows

log = logging.getLogger("shardwalk.runtime")

DEFAULT_TIMEOUT = 30.0


def configure_logging_from_env() -> None:
    """Map the GS_LOG env var ({error|info|debug}) onto the package logger."""
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("GS_LOG", "error").lower(), logging.ERROR
    )
    logging.getLogger("shardwalk").setLevel(level)


class Counters:
    """Monotonic per-endpoint frame accounting."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_sent = 0
        self.bytes_recv = 0
        self.msgs_sent = 0
        self.msgs_recv = 0

    def count_sent(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_sent += nbytes
            self.msgs_sent += 1

    def count_recv(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_recv += nbytes
            self.msgs_recv += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "bytes_sent": self.bytes_sent,
                "bytes_recv": self.bytes_recv,
                "msgs_sent": self.msgs_sent,
                "msgs_recv": self.msgs_recv,
            }


class _Slot:
    """One outstanding request: an event plus the response payload."""

    __slots__ = ("event", "payload", "failure")

    def __init__(self):
        self.event = threading.Event()
        self.payload: bytes | None = None
        self.failure: Exception | None = None


class RpcClient:
    """Trainer/driver-side requester multiplexing many in-flight frames."""

    def __init__(self, name: str, counters: Counters, timeout: float = DEFAULT_TIMEOUT):
        self.name = name
        self.counters = counters
        self.timeout = timeout
        self._lock = threading.Lock()
        self._pending: dict[int, _Slot] = {}
        self._next_id = 0
        self._senders: dict[str, object] = {}

    # -- wiring -----------------------------------------------------------

    def connect_inproc(self, key: str, server: "_Mailbox") -> None:
        self._senders[key] = _InprocSender(self, server)

    def connect_tcp(self, key: str, addr: tuple[str, int]) -> None:
        self._senders[key] = _TcpSender(self, addr)

    def close(self) -> None:
        for sender in self._senders.values():
            sender.close()
        with self._lock:
            for slot in self._pending.values():
                slot.failure = TransportError("client closed")
                slot.event.set()
            self._pending.clear()

    # -- request plumbing --------------------------------------------------

    def call_async(self, key: str, opcode: int, payload: bytes) -> _Slot:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            slot = _Slot()
            self._pending[rid] = slot
        frame = fr.encode_frame(opcode, rid, payload)
        self._senders[key].send(frame)
        return slot

    def wait(self, slot: _Slot) -> bytes:
        if not slot.event.wait(self.timeout):
            raise TransportError(f"{self.name}: request timed out after {self.timeout}s")
        if slot.failure is not None:
            raise slot.failure
        return self._parse(slot.payload)

    def call(self, key: str, opcode: int, payload: bytes) -> bytes:
        return self.wait(self.call_async(key, opcode, payload))

    def gather(self, slots: list[_Slot]) -> list[bytes]:
        return [self.wait(s) for s in slots]

    def _on_response(self, frame: bytes) -> None:
        self.counters.count_recv(len(frame))
        _, rid, payload = fr.decode_frame(frame)
        with self._lock:
            slot = self._pending.pop(rid, None)
        if slot is not None:
            slot.payload = payload
            slot.event.set()

    def _on_disconnect(self) -> None:
        with self._lock:
            pending, self._pending = self._pending, {}
        for slot in pending.values():
            slot.failure = TransportError(f"{self.name}: connection lost")
            slot.event.set()

    @staticmethod
    def _parse(payload: bytes) -> bytes:
        status = payload[0]
        if status == fr.STATUS_OK:
            return payload[1:]
        r = fr.Reader(payload[1:])
        message = r.text()
        if status == fr.STATUS_ABORT:
            raise BarrierAborted(message)
        if message.startswith("protocol:"):
            raise ProtocolError(message)
        raise StoreError(message)


class _InprocSender:
    def __init__(self, client: RpcClient, server: "_Mailbox"):
        self._client = client
        self._server = server
        self.conn_id = server.register_conn()

    def send(self, frame: bytes) -> None:
        self._client.counters.count_sent(len(frame))
        self._server.deliver(frame, self._respond, self.conn_id)

    def _respond(self, resp: bytes) -> None:
        self._server.counters.count_sent(len(resp))
        self._client._on_response(resp)

    def close(self) -> None:
        self._server.notify_disconnect(self.conn_id)


class _TcpSender:
    def __init__(self, client: RpcClient, addr: tuple[str, int]):
        self._client = client
        self._sock = socket.create_connection(addr)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._wlock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, frame: bytes) -> None:
        self._client.counters.count_sent(len(frame))
        with self._wlock:
            self._sock.sendall(frame)

    def _read_loop(self) -> None:
        try:
            while True:
                frame = fr.recv_frame(self._sock)
                if frame is None:
                    break
                self._client._on_response(frame)
        except OSError:
            pass
        if not self._closed:
            self._client._on_disconnect()

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _Mailbox:
    """Serial frame sink shared by both transports.

    Entries are (frame_bytes, respond_fn, conn_id); a (None, None, conn_id)
    entry signals that the peer connection went away.
    """

    def __init__(self, name: str, counters: Counters):
        self.name = name
        self.counters = counters
        self.queue: queue.Queue = queue.Queue()
        self._conn_counter = 0
        self._lock = threading.Lock()

    def register_conn(self) -> int:
        with self._lock:
            self._conn_counter += 1
            return self._conn_counter

    def deliver(self, frame: bytes, respond, conn_id: int) -> None:
        self.counters.count_recv(len(frame))
        self.queue.put((frame, respond, conn_id))

    def notify_disconnect(self, conn_id: int) -> None:
        self.queue.put((None, None, conn_id))


class _Actor(threading.Thread):
    """Base event loop: drain the mailbox serially until shutdown."""

    def __init__(self, name: str, counters: Counters):
        super().__init__(name=name, daemon=True)
        self.mailbox = _Mailbox(name, counters)
        self.counters = counters
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._conns: list[socket.socket] = []
        self.addr: tuple[str, int] | None = None

    # -- optional TCP front-end -------------------------------------------

    def listen(self, host: str, port: int) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as e:
            raise TransportError(f"{self.name}: cannot bind {host}:{port}: {e}") from e
        self._listener.listen()
        self.addr = self._listener.getsockname()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self.addr

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._conns.append(conn)
            conn_id = self.mailbox.register_conn()
            threading.Thread(
                target=self._conn_loop, args=(conn, conn_id), daemon=True
            ).start()

    def _conn_loop(self, conn: socket.socket, conn_id: int) -> None:
        wlock = threading.Lock()

        def respond(resp: bytes) -> None:
            self.counters.count_sent(len(resp))
            try:
                with wlock:
                    conn.sendall(resp)
            except OSError:
                pass

        try:
            while True:
                frame = fr.recv_frame(conn)
                if frame is None:
                    break
                self.mailbox.deliver(frame, respond, conn_id)
        except OSError:
            pass
        self.mailbox.notify_disconnect(conn_id)

    def stop_listening(self) -> None:
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass

    # -- event loop ---------------------------------------------------------

    def run(self) -> None:
        while True:
            frame, respond, conn_id = self.mailbox.queue.get()
            if frame is None:
                self.on_disconnect(conn_id)
                continue
            opcode, rid, payload = fr.decode_frame(frame)
            if opcode == fr.OP_SHUTDOWN:
                respond(fr.encode_frame(opcode, rid, fr.ok_response()))
                break
            try:
                extra = self.handle(opcode, payload)
                resp = fr.ok_response(extra)
            except BarrierAborted as e:
                resp = fr.abort_response(str(e))
            except _Deferred:
                continue
            except Exception as e:  # noqa: BLE001 - report to the caller, keep serving
                resp = fr.error_response(str(e))
            respond(fr.encode_frame(opcode, rid, resp))
        self.stop_listening()
        self.on_shutdown()

    def handle(self, opcode: int, payload: bytes) -> bytes:
        raise NotImplementedError

    def on_disconnect(self, conn_id: int) -> None:
        pass

    def on_shutdown(self) -> None:
        pass


class _Deferred(Exception):
    """Raised by handlers that will respond later (barrier, allreduce)."""


@dataclass
class _ShardStore:
    rows: np.ndarray
    d: int
    dtype: np.dtype
    scheme: str
    N: int
    num_shards: int
    keys: np.ndarray | None  # sorted global ids, lookup scheme only

    def locate(self, ids: np.ndarray, shard_id: int) -> np.ndarray:
        if self.scheme == "hash":
            if np.any(ids % self.num_shards != shard_id):
                raise StoreError("id routed to wrong shard")
            return ids // self.num_shards
        if self.scheme == "lookup":
            pos = np.searchsorted(self.keys, ids)
            bad = (pos >= len(self.keys)) | (self.keys[np.minimum(pos, len(self.keys) - 1)] != ids)
            if np.any(bad):
                raise StoreError("id not owned by this shard")
            return pos
        start = _range_start(self.N, self.num_shards, shard_id)
        local = ids - start
        if np.any((local < 0) | (local >= len(self.rows))):
            raise StoreError("id routed to wrong shard")
        return local


def _range_start(N: int, num_shards: int, shard_id: int) -> int:
    base, extra = divmod(N, num_shards)
    return shard_id * base + min(shard_id, extra)


class ShardActor(_Actor):
    """One storage shard: owns its rows exclusively, applies ops serially."""

    def __init__(self, shard_id: int, counters: Counters):
        super().__init__(f"shard/{shard_id}", counters)
        self.shard_id = shard_id
        self.stores: dict[str, _ShardStore] = {}

    def handle(self, opcode: int, payload: bytes) -> bytes:
        r = fr.Reader(payload)
        if opcode == fr.OP_CREATE:
            return self._create(r)
        if opcode == fr.OP_GET:
            store = self._store(r.text())
            ids = r.ids()
            local = store.locate(ids, self.shard_id)
            return fr.pack_rows(store.rows[local], store.dtype)
        if opcode in (fr.OP_PUT, fr.OP_ADD):
            store = self._store(r.text())
            ids = r.ids()
            rows = r.rows(len(ids), store.d, store.dtype)
            local = store.locate(ids, self.shard_id)
            if opcode == fr.OP_PUT:
                store.rows[local] = rows
            else:
                store.rows[local] += rows
            return b""
        if opcode == fr.OP_MULT:
            store = self._store(r.text())
            store.rows *= store.dtype.type(r.f64())
            return b""
        if opcode == fr.OP_MULTADD:
            target = self._store(r.text())
            source = self._store(r.text())
            scalar = r.f64()
            if target.rows.shape != source.rows.shape or target.scheme != source.scheme:
                raise StoreError("stores are not aligned on this shard")
            target.rows += target.dtype.type(scalar) * source.rows
            return b""
        if opcode == fr.OP_BARRIER:
            kind = r.u8()
            if kind != fr.BARRIER_FLUSH:
                raise StoreError("protocol: shard only accepts flush barriers")
            return b""  # all prior writes in this mailbox are applied by now
        raise StoreError(f"protocol: unsupported opcode {opcode}")

    def _store(self, name: str) -> _ShardStore:
        try:
            return self.stores[name]
        except KeyError:
            raise StoreError(f"unknown store {name!r}") from None

    def _create(self, r: fr.Reader) -> bytes:
        name = r.text()
        if name in self.stores:
            raise StoreError(f"store {name!r} already exists")
        N, d = r.u64(), r.u32()
        dtype = fr.DTYPE_FROM_CODE[r.u8()]
        scheme = {0: "range", 1: "hash", 2: "lookup"}[r.u8()]
        num_shards = r.u32()
        kind = {0: "zeros", 1: "uniform", 2: "constant"}[r.u8()]
        a, b = r.f64(), r.f64()
        seed = r.u64()
        keys = r.ids() if scheme == "lookup" else None
        if scheme == "hash":
            rows_here = (N - self.shard_id + num_shards - 1) // num_shards
        elif scheme == "lookup":
            rows_here = len(keys)
        else:
            base, extra = divmod(N, num_shards)
            rows_here = base + (1 if self.shard_id < extra else 0)
        init = {"zeros": ("zeros",), "uniform": ("uniform", a, b), "constant": ("constant", a)}[kind]
        self.stores[name] = _ShardStore(
            rows=init_shard_rows(init, seed, self.shard_id, rows_here, d, dtype),
            d=d,
            dtype=np.dtype(dtype),
            scheme=scheme,
            N=N,
            num_shards=num_shards,
            keys=keys,
        )
        return b""


class Coordinator(_Actor):
    """Barrier sequencing and gather-broadcast reduction for the trainers."""

    def __init__(self, counters: Counters, num_trainers: int):
        super().__init__("coordinator", counters)
        self.num_trainers = num_trainers
        self.shard_client: RpcClient | None = None  # wired by the cluster
        self._shard_keys: list[str] = []
        self._round: dict | None = None
        self._reduce: dict | None = None
        self._aborted = False

    def attach_shards(self, client: RpcClient, keys: list[str]) -> None:
        self.shard_client = client
        self._shard_keys = keys

    def handle(self, opcode: int, payload: bytes) -> bytes:
        r = fr.Reader(payload)
        if opcode == fr.OP_BARRIER:
            kind = r.u8()
            if kind != fr.BARRIER_ARRIVE:
                raise StoreError("protocol: coordinator only accepts arrivals")
            self._arrive(r.u64(), r.u32(), r.u32())
            raise _Deferred()
        if opcode == fr.OP_ADD:
            self._reduce_contribute(r)
            raise _Deferred()
        raise StoreError(f"protocol: unsupported opcode {opcode}")

    # Handlers stash respond callbacks; the event loop is re-entered through
    # these wrappers so the callbacks are in scope.
    def run(self) -> None:  # noqa: D102 - same contract as _Actor.run
        while True:
            frame, respond, conn_id = self.mailbox.queue.get()
            if frame is None:
                self.on_disconnect(conn_id)
                continue
            opcode, rid, payload = fr.decode_frame(frame)
            if opcode == fr.OP_SHUTDOWN:
                respond(fr.encode_frame(opcode, rid, fr.ok_response()))
                break
            self._current = (opcode, rid, respond)
            try:
                extra = self.handle(opcode, payload)
                resp = fr.ok_response(extra)
            except _Deferred:
                continue
            except Exception as e:  # noqa: BLE001
                resp = fr.error_response(str(e))
            respond(fr.encode_frame(opcode, rid, resp))
        self.stop_listening()

    def _respond_current(self, body: bytes) -> None:
        opcode, rid, respond = self._current
        respond(fr.encode_frame(opcode, rid, body))

    def _arrive(self, iteration: int, trainer_id: int, participants: int) -> None:
        if self._aborted:
            self._respond_current(fr.abort_response("a participant died"))
            return
        if participants != self.num_trainers:
            self._respond_current(
                fr.error_response(f"protocol: expected {self.num_trainers} participants")
            )
            return
        if self._round is None:
            self._round = {"iteration": iteration, "arrived": {}}
        if iteration != self._round["iteration"]:
            self._respond_current(
                fr.error_response(
                    f"protocol: barrier iteration {iteration} != {self._round['iteration']}"
                )
            )
            return
        if trainer_id in self._round["arrived"]:
            self._respond_current(fr.error_response("protocol: duplicate barrier arrival"))
            return
        opcode, rid, respond = self._current
        self._round["arrived"][trainer_id] = (opcode, rid, respond)
        if len(self._round["arrived"]) < participants:
            return
        arrived, self._round = self._round["arrived"], None
        self._flush_shards(iteration)
        for opcode, rid, respond in arrived.values():
            respond(fr.encode_frame(opcode, rid, fr.ok_response()))

    def _flush_shards(self, iteration: int) -> None:
        if self.shard_client is None:
            return
        payload = bytes([fr.BARRIER_FLUSH]) + struct.pack("<Q", iteration)
        slots = [
            self.shard_client.call_async(k, fr.OP_BARRIER, payload) for k in self._shard_keys
        ]
        self.shard_client.gather(slots)

    def _reduce_contribute(self, r: fr.Reader) -> None:
        round_idx = r.u64()
        trainer_id = r.u32()
        participants = r.u32()
        n, d = r.u64(), r.u32()
        dtype = fr.DTYPE_FROM_CODE[r.u8()]
        mat = r.rows(n, d, dtype)
        if self._reduce is None:
            self._reduce = {"round": round_idx, "parts": {}, "resp": {}}
        if round_idx != self._reduce["round"]:
            self._respond_current(fr.error_response("protocol: allreduce round mismatch"))
            return
        self._reduce["parts"][trainer_id] = mat
        self._reduce["resp"][trainer_id] = self._current
        if len(self._reduce["parts"]) < participants:
            return
        parts, resp = self._reduce["parts"], self._reduce["resp"]
        self._reduce = None
        mean = np.mean(np.stack(list(parts.values())).astype(np.float64), axis=0).astype(dtype)
        body = fr.ok_response(fr.pack_rows(mean, dtype))
        for opcode, rid, respond in resp.values():
            respond(fr.encode_frame(opcode, rid, body))

    def on_disconnect(self, conn_id: int) -> None:
        # A lost trainer connection aborts any in-flight round for the others.
        if self._round is not None:
            arrived, self._round = self._round["arrived"], None
            self._aborted = True
            for opcode, rid, respond in arrived.values():
                respond(fr.encode_frame(opcode, rid, fr.abort_response("a participant died")))


class Cluster:
    """Spawns shards, the coordinator, and wires clients to them."""

    def __init__(
        self,
        num_shards: int,
        num_trainers: int,
        transport: str = "inproc",
        timeout: float = DEFAULT_TIMEOUT,
        listen_addr: str = "127.0.0.1:0",
        shard_addrs: list[str] | None = None,
    ):
        if num_shards < 1 or num_trainers < 1:
            raise ValueError("num_shards and num_trainers must be >= 1")
        if transport not in ("inproc", "tcp"):
            raise ValueError(f"unknown transport {transport!r}")
        self.num_shards = num_shards
        self.num_trainers = num_trainers
        self.transport = transport
        self.timeout = timeout
        self.counters: dict[str, Counters] = {}
        self.shards = [ShardActor(i, self._counters(f"shard/{i}")) for i in range(num_shards)]
        self.coordinator = Coordinator(self._counters("coordinator"), num_trainers)
        self._clients: list[RpcClient] = []
        self._started = False

        if transport == "tcp":
            if shard_addrs is not None and len(shard_addrs) != num_shards:
                raise ValueError("shard_addrs must list one host:port per shard")
            self._shard_bind = [_split_addr(a) for a in shard_addrs] if shard_addrs else [
                ("127.0.0.1", 0)
            ] * num_shards
            self._coord_bind = _split_addr(listen_addr)

    def _counters(self, name: str) -> Counters:
        c = Counters()
        self.counters[name] = c
        return c

    def start(self) -> "Cluster":
        if self._started:
            raise RuntimeError("cluster already started")
        self._started = True
        if self.transport == "tcp":
            for shard, (host, port) in zip(self.shards, self._shard_bind):
                shard.listen(host, port)
            self.coordinator.listen(*self._coord_bind)
        for shard in self.shards:
            shard.start()
        self.coordinator.start()
        coord_client = self._new_client("coordinator-client", shards_only=True)
        self.coordinator.attach_shards(coord_client, [f"shard/{i}" for i in range(self.num_shards)])
        log.info(
            "cluster up: %d shards, %d trainers, %s transport",
            self.num_shards,
            self.num_trainers,
            self.transport,
        )
        return self

    def client(self, name: str) -> RpcClient:
        """A requester wired to every shard and the coordinator."""
        return self._new_client(name, shards_only=False)

    def _new_client(self, name: str, shards_only: bool) -> RpcClient:
        client = RpcClient(name, self._counters(name), timeout=self.timeout)
        for i, shard in enumerate(self.shards):
            if self.transport == "inproc":
                client.connect_inproc(f"shard/{i}", shard.mailbox)
            else:
                client.connect_tcp(f"shard/{i}", shard.addr)
        if not shards_only:
            if self.transport == "inproc":
                client.connect_inproc("coordinator", self.coordinator.mailbox)
            else:
                client.connect_tcp("coordinator", self.coordinator.addr)
        self._clients.append(client)
        return client

    def accounting_snapshot(self) -> dict[str, dict]:
        return {name: c.snapshot() for name, c in sorted(self.counters.items())}

    def shutdown(self) -> None:
        if not self._started:
            return
        closer = RpcClient("closer", Counters(), timeout=self.timeout)
        for i, shard in enumerate(self.shards):
            key = f"shard/{i}"
            if self.transport == "inproc":
                closer.connect_inproc(key, shard.mailbox)
            else:
                closer.connect_tcp(key, shard.addr)
            try:
                closer.call(key, fr.OP_SHUTDOWN, b"")
            except TransportError:
                pass
        if self.transport == "inproc":
            closer.connect_inproc("coordinator", self.coordinator.mailbox)
        else:
            closer.connect_tcp("coordinator", self.coordinator.addr)
        try:
            closer.call("coordinator", fr.OP_SHUTDOWN, b"")
        except TransportError:
            pass
        closer.close()
        for client in self._clients:
            client.close()
        for shard in self.shards:
            shard.join(timeout=5.0)
        self.coordinator.join(timeout=5.0)
        self._started = False

    def __enter__(self) -> "Cluster":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def _split_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)
