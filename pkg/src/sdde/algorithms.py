"""SDDE algorithms over the simulated transport.

Every algorithm takes, per rank, a list of outgoing ``(dest, values)``
messages whose destinations are not known to the receivers, and returns,
per rank, the ``(src, values)`` messages that arrived, sorted by source.
For an :class:`~sdde.core.SddeInstance` the outgoing messages are the
receive requests: rank ``i`` sends the indices it needs to their owner.
"""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CommPattern, CrsRequest, Message, SddeInstance, Topology, ValidationError, canonical
from .transport import ANY_SOURCE, Comm, Trace, spawn

TAG_REQUEST = 1
TAG_INTER = 2
TAG_INTRA = 3

MODES = ("constant", "variable")

ALGORITHMS = (
    "personalized",
    "nonblocking",
    "rma",
    "locality-personalized",
    "locality-nonblocking",
)


class UnsupportedModeError(ValidationError):
    pass


@dataclass(frozen=True)
class AlgorithmId:
    name: str
    mode: str = "variable"

    def __post_init__(self):
        name = self.name.replace("_", "-")
        object.__setattr__(self, "name", name)
        if name not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.name!r}; expected one of {', '.join(ALGORITHMS)}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if name == "rma" and self.mode != "constant":
            raise UnsupportedModeError("rma supports constant mode only")

    def __str__(self):
        return f"{self.name}/{self.mode}"


def applicable(mode: str) -> tuple[str, ...]:
    return ALGORITHMS if mode == "constant" else tuple(a for a in ALGORITHMS if a != "rma")


# aggregated buffers

_HEAD = struct.Struct("<I")
_REC = struct.Struct("<II")


def encode_records(records: Sequence[tuple[int, np.ndarray]], dtype=np.uint64) -> bytes:
    """Pack ``(rank, values)`` records: u32 count, then per record u32 rank, u32 size, values."""
    dt = np.dtype(dtype).newbyteorder("<")
    parts = [_HEAD.pack(len(records))]
    for rank, values in records:
        vals = np.asarray(values, dtype=dt)
        parts.append(_REC.pack(rank, len(vals)))
        parts.append(vals.tobytes())
    return b"".join(parts)


def decode_records(buf: bytes, dtype=np.uint64) -> list[tuple[int, np.ndarray]]:
    dt = np.dtype(dtype).newbyteorder("<")
    (n,) = _HEAD.unpack_from(buf, 0)
    pos = _HEAD.size
    out = []
    for _ in range(n):
        rank, size = _REC.unpack_from(buf, pos)
        pos += _REC.size
        vals = np.frombuffer(buf, dtype=dt, count=size, offset=pos)
        pos += size * dt.itemsize
        out.append((rank, vals.astype(dtype)))
    if pos != len(buf):
        raise ValueError(f"trailing bytes in aggregated buffer: {len(buf) - pos}")
    return out


def _to_bytes(values: np.ndarray, dtype) -> bytes:
    return np.asarray(values, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def _from_bytes(buf: bytes, dtype) -> np.ndarray:
    return np.frombuffer(buf, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)


# per-rank bodies

Outgoing = list[tuple[int, np.ndarray]]


def _split_self(comm: Comm, outgoing: Outgoing, received: list):
    remote = []
    for dest, vals in outgoing:
        if dest == comm.rank:
            received.append((comm.rank, vals))
        else:
            remote.append((dest, vals))
    return remote


def personalized_body(comm: Comm, outgoing: Outgoing, mode: str, dtype, tag: int = TAG_REQUEST):
    """Allreduce the expected message counts (and bytes, variable mode), then probe that many times."""
    n = comm.size
    received: list = []
    remote = _split_self(comm, outgoing, received)
    sizes = [0] * (2 * n if mode == "variable" else n)
    tickets = []
    for dest, vals in remote:
        payload = _to_bytes(vals, dtype)
        sizes[dest] += 1
        if mode == "variable":
            sizes[n + dest] += len(payload)
        tickets.append(comm.isend(dest, tag, payload))
    totals = comm.allreduce_sum(sizes)
    nbytes = 0
    for _ in range(totals[comm.rank]):
        st = comm.probe(ANY_SOURCE, tag)
        buf = comm.recv(st.src, tag, st.size)
        nbytes += len(buf)
        received.append((st.src, _from_bytes(buf, dtype)))
    if mode == "variable" and nbytes != totals[n + comm.rank]:
        raise RuntimeError(f"rank {comm.rank}: received {nbytes} bytes, expected {totals[n + comm.rank]}")
    comm.waitall(tickets)
    return received


def _nbx(comm: Comm, messages: list[tuple[int, bytes]], tag: int, on_recv) -> None:
    tickets = [comm.issend(dest, tag, payload) for dest, payload in messages]

    def drain():
        st = comm.iprobe(ANY_SOURCE, tag)
        if st is not None:
            on_recv(st.src, comm.recv(st.src, tag, st.size))

    while not comm.testall(tickets):
        drain()
    barrier = comm.ibarrier()
    while not comm.test(barrier):
        drain()


def nonblocking_body(comm: Comm, outgoing: Outgoing, mode: str, dtype, tag: int = TAG_REQUEST):
    """Synchronous sends, iprobe until they complete, then iprobe until a non-blocking barrier completes."""
    received: list = []
    remote = _split_self(comm, outgoing, received)
    _nbx(comm, [(d, _to_bytes(v, dtype)) for d, v in remote], tag,
         lambda src, buf: received.append((src, _from_bytes(buf, dtype))))
    return received


SENTINEL_BYTE = 0xFF


def rma_body(comm: Comm, outgoing: Outgoing, sendcount: int, dtype):
    if sendcount < 1:
        raise ValidationError("rma needs sendcount >= 1 to tell present slots from absent ones")
    width = np.dtype(dtype).itemsize
    slot = sendcount * width
    received: list = []
    remote = _split_self(comm, outgoing, received)
    win = comm.win_create(comm.size * slot, fill=SENTINEL_BYTE)
    empty = bytes([SENTINEL_BYTE]) * slot
    for dest, vals in remote:
        payload = _to_bytes(vals, dtype)
        if len(payload) != slot:
            raise ValidationError(f"rank {comm.rank}: message to {dest} has {len(vals)} values, sendcount is {sendcount}")
        if payload == empty:
            raise ValidationError(f"rank {comm.rank}: payload to {dest} equals the all-ones window sentinel")
        comm.put(win, dest, comm.rank * slot, payload)
    comm.fence(win)
    storage = comm.win_read(win)
    for origin in range(comm.size):
        chunk = storage[origin * slot:(origin + 1) * slot]
        if chunk != empty:
            received.append((origin, _from_bytes(chunk, dtype)))
    return received, storage


def locality_body(comm: Comm, topo: Topology, outgoing: Outgoing, mode: str, dtype, inter: str):
    """Aggregate per destination region, exchange between equal local ranks, redistribute inside the region."""
    rank = comm.rank
    my_region = topo.region(rank)
    local_buf: dict[int, list] = defaultdict(list)
    by_region: dict[int, list] = defaultdict(list)
    for dest, vals in outgoing:
        reg = topo.region(dest)
        if reg == my_region:
            local_buf[dest].append((rank, vals))
        else:
            by_region[reg].append((dest, vals))

    def unpack(origin: int, buf: bytes):
        for final, vals in decode_records(buf, dtype):
            local_buf[final].append((origin, vals))

    inter_msgs = [(topo.corresponding_process(rank, reg), encode_records(recs, dtype))
                  for reg, recs in sorted(by_region.items())]
    if inter == "nonblocking":
        _nbx(comm, inter_msgs, TAG_INTER, unpack)
    elif inter == "personalized":
        counts = [0] * comm.size
        tickets = []
        for dest, payload in inter_msgs:
            counts[dest] += 1
            tickets.append(comm.isend(dest, TAG_INTER, payload))
        totals = comm.allreduce_sum(counts)
        for _ in range(totals[rank]):
            st = comm.probe(ANY_SOURCE, TAG_INTER)
            unpack(st.src, comm.recv(st.src, TAG_INTER, st.size))
        comm.waitall(tickets)
    else:
        raise ValidationError(f"unknown inter-region method {inter!r}")

    members = topo.region_members(my_region)
    received = list(local_buf.pop(rank, []))
    counts = [0] * len(members)
    tickets = []
    for final in sorted(local_buf):
        counts[final - members.start] += 1
        tickets.append(comm.isend(final, TAG_INTRA, encode_records(local_buf[final], dtype)))
    totals = comm.allreduce_sum(counts, group=members)
    for _ in range(totals[rank - members.start]):
        st = comm.probe(ANY_SOURCE, TAG_INTRA)
        received.extend(decode_records(comm.recv(st.src, TAG_INTRA, st.size), dtype))
    comm.waitall(tickets)
    return received


# drivers


@dataclass(frozen=True)
class ExchangeResult:
    algorithm: AlgorithmId
    received: tuple[tuple[Message, ...], ...]
    trace: Trace
    recvs: tuple[tuple[Message, ...], ...] = ()
    windows: tuple[bytes, ...] | None = None

    @property
    def pattern(self) -> CommPattern:
        return CommPattern(sends=self.received, recvs=self.recvs)


def _outgoing_from_instance(instance: SddeInstance, dtype) -> list[Outgoing]:
    return [[(src, np.array(idx, dtype=dtype)) for src, idx in spec] for spec in instance.recvs]


def _drop_first(outgoing: list[Outgoing]) -> list[Outgoing]:
    # fault injection for verification tests: lose the first remote message
    out = [list(o) for o in outgoing]
    for rank, msgs in enumerate(out):
        for k, (dest, _) in enumerate(msgs):
            if dest != rank:
                del msgs[k]
                return out
    return out


def exchange(topology: Topology, outgoing: Sequence[Outgoing], algorithm: AlgorithmId | str,
             mode: str | None = None, *, sendcount: int | None = None, dtype=np.uint64,
             backend: str = "det", seed: int = 0, timeout: float = 60.0,
             recvs=(), fault_drop_send: bool = False) -> ExchangeResult:
    """Run one algorithm over per-rank outgoing messages."""
    if isinstance(algorithm, str):
        algorithm = AlgorithmId(algorithm, mode or "variable")
    mode = algorithm.mode
    if len(outgoing) != topology.world_size:
        raise ValidationError(f"expected {topology.world_size} outgoing lists, got {len(outgoing)}")
    if mode == "constant":
        sizes = {len(v) for msgs in outgoing for _, v in msgs}
        if sendcount is None:
            if len(sizes) > 1:
                raise ValidationError(f"constant mode needs uniform message sizes, found {sorted(sizes)}")
            sendcount = sizes.pop() if sizes else 1
        elif sizes - {sendcount}:
            raise ValidationError(f"constant mode: message sizes {sorted(sizes)} differ from sendcount {sendcount}")
    if fault_drop_send:
        outgoing = _drop_first(outgoing)
    name = algorithm.name

    def body(comm: Comm):
        mine = outgoing[comm.rank]
        if name == "personalized":
            return personalized_body(comm, mine, mode, dtype)
        if name == "nonblocking":
            return nonblocking_body(comm, mine, mode, dtype)
        if name == "rma":
            return rma_body(comm, mine, sendcount, dtype)
        return locality_body(comm, topology, mine, mode, dtype, name.split("-", 1)[1])

    run = spawn(topology.world_size, body, backend=backend, seed=seed, timeout=timeout)
    windows = None
    results = run.results
    if name == "rma":
        windows = tuple(w for _, w in results)
        results = [r for r, _ in results]
    return ExchangeResult(algorithm, tuple(canonical(r) for r in results), run.trace,
                          tuple(canonical(s) for s in recvs), windows)


def run_instance(instance: SddeInstance, algorithm: AlgorithmId | str, mode: str = "variable",
                 **kw) -> ExchangeResult:
    """Solve an SDDE instance; the result's pattern is comparable with ``oracle_transpose``."""
    dtype = kw.pop("dtype", np.uint64)
    return exchange(instance.topology, _outgoing_from_instance(instance, dtype), algorithm, mode,
                    dtype=dtype, recvs=instance.recvs, **kw)


def personalized(instance: SddeInstance, mode: str = "variable", **kw) -> ExchangeResult:
    return run_instance(instance, "personalized", mode, **kw)


def nonblocking(instance: SddeInstance, mode: str = "variable", **kw) -> ExchangeResult:
    return run_instance(instance, "nonblocking", mode, **kw)


def rma(instance: SddeInstance, **kw) -> ExchangeResult:
    return run_instance(instance, "rma", "constant", **kw)


def locality_aware(instance: SddeInstance, mode: str = "variable", inter_method: str = "nonblocking",
                   **kw) -> ExchangeResult:
    return run_instance(instance, f"locality-{inter_method}", mode, **kw)


# public sparse all-to-all API


@dataclass(frozen=True)
class CrsResult:
    srcs: tuple[int, ...]
    counts: tuple[int, ...]
    recv_values: tuple[tuple[int, ...], ...]


def _crs(topology: Topology, requests: Sequence[CrsRequest], algorithm: str, mode: str,
         sendcount: int | None, dtype, **kw) -> list[CrsResult]:
    if len(requests) != topology.world_size:
        raise ValidationError(f"expected {topology.world_size} requests, got {len(requests)}")
    for rank, req in enumerate(requests):
        for d in req.dests:
            if not 0 <= d < topology.world_size:
                raise ValidationError(f"rank {rank}: dest {d} out of range")
    outgoing = [[(d, np.array(v, dtype=dtype)) for d, v in zip(r.dests, r.send_values)] for r in requests]
    res = exchange(topology, outgoing, AlgorithmId(algorithm, mode), sendcount=sendcount, dtype=dtype, **kw)
    return [CrsResult(tuple(s for s, _ in recv), tuple(len(v) for _, v in recv), tuple(v for _, v in recv))
            for recv in res.received]


def alltoall_crs(topology: Topology, sendcount: int, dests: Sequence[Sequence[int]],
                 send_values: Sequence[Sequence[Sequence[int]]], algorithm: str = "nonblocking",
                 dtype=np.int64, **kw) -> list[tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]]:
    """Constant-size sparse all-to-all: per rank ``(srcs, recv_values)``."""
    reqs = [CrsRequest(d, v, sendcount=sendcount) for d, v in zip(dests, send_values)]
    return [(r.srcs, r.recv_values) for r in _crs(topology, reqs, algorithm, "constant", sendcount, dtype, **kw)]


def alltoallv_crs(topology: Topology, dests: Sequence[Sequence[int]], counts: Sequence[Sequence[int]],
                  send_values: Sequence[Sequence[Sequence[int]]], algorithm: str = "nonblocking",
                  dtype=np.int64, **kw) -> list[tuple[tuple[int, ...], tuple[int, ...], tuple[tuple[int, ...], ...]]]:
    """Variable-size sparse all-to-all: per rank ``(srcs, counts, recv_values)``."""
    if algorithm == "rma":
        raise UnsupportedModeError("rma supports constant mode only")
    reqs = []
    for rank, (d, c, v) in enumerate(zip(dests, counts, send_values)):
        if len(c) != len(d):
            raise ValidationError(f"rank {rank}: counts length {len(c)} != dests length {len(d)}")
        if any(k < 0 for k in c):
            raise ValidationError(f"rank {rank}: negative count")
        if [len(x) for x in v] != list(c):
            raise ValidationError(f"rank {rank}: send_values lengths do not match counts")
        reqs.append(CrsRequest(d, v))
    return [(r.srcs, r.counts, r.recv_values)
            for r in _crs(topology, reqs, algorithm, "variable", None, dtype, **kw)]
