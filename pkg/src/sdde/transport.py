"""In-process message passing between simulated ranks.

Each rank body runs in its own thread and talks to the others only through a
:class:`Comm`.  Two backends:

``det``
    Seeded baton-passing scheduler.  Exactly one rank runs at a time and every
    transport call is a switch point, so a seed fixes the interleaving and the
    trace.  Quiescence is exact, which gives real deadlock detection.
``threads``
    Free-running threads sharing one lock; blocked ranks wait on a condition
    variable.  Deadlock is reported after a global timeout.

A rank that keeps polling (``iprobe``/``test`` misses) without any change in
global state is parked by the det scheduler until something changes, so busy
loops cost nothing and a livelocked NBX run is reported like a deadlock.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Sequence

log = logging.getLogger(__name__)

ANY_SOURCE = -1
ANY_TAG = -1

BACKENDS = ("det", "threads")


class ProtocolError(RuntimeError):
    """Transport misuse: size mismatch, bad rank, out-of-bounds or conflicting put."""


class DeadlockError(RuntimeError):
    def __init__(self, report: dict[int, str], reason: str = "deadlock"):
        self.report = report
        lines = "; ".join(f"rank {r}: {s}" for r, s in sorted(report.items()))
        super().__init__(f"{reason}: {lines}")


class _Abort(BaseException):
    """Unwinds rank threads after another rank failed or the run deadlocked."""


@dataclass
class Event:
    seq: int
    kind: str
    rank: int
    src: int | None = None
    dest: int | None = None
    tag: int | None = None
    bytes: int | None = None
    queue_depth: int | None = None
    msg: int | None = None
    group: int | None = None
    offset: int | None = None


class Trace:
    """Globally ordered event log of one run."""

    def __init__(self, events: list[Event] | None = None, completed: bool = False):
        self.events: list[Event] = events if events is not None else []
        self.completed = completed

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def of(self, *kinds: str) -> list[Event]:
        return [e for e in self.events if e.kind in kinds]

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), separators=(",", ":")) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str, completed: bool = True) -> "Trace":
        return cls([Event(**json.loads(line)) for line in text.splitlines() if line.strip()], completed)


@dataclass
class Envelope:
    src: int
    dest: int
    tag: int
    payload: bytes
    seq: int
    msg: int
    ticket: "SendTicket"


@dataclass(eq=False)
class SendTicket:
    kind: str  # "standard" | "synchronous"
    msg: int
    dest: int
    state: str = "pending"
    observed: bool = False


@dataclass(eq=False)
class BarrierTicket:
    coll: "_Collective"
    state: str = "pending"
    observed: bool = False


@dataclass(frozen=True)
class Status:
    src: int
    tag: int
    size: int


@dataclass(eq=False)
class Window:
    id: int
    owner: int
    size: int
    epoch: int = 0


@dataclass
class RunResult:
    trace: Trace
    results: list[Any]


class _Collective:
    def __init__(self, size: int):
        self.size = size
        self.entered: list[int] = []
        self.acc: list[int] | None = None
        self.done = False


class _World:
    def __init__(self, size: int, scheduler: "_Scheduler"):
        self.size = size
        self.sched = scheduler
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self.version = 0
        self.events: list[Event] = []
        self.queues: list[list[Envelope]] = [[] for _ in range(size)]
        self.seq = defaultdict(int)
        self.next_msg = 0
        self.collectives: dict[tuple, _Collective] = {}
        self.windows: dict[int, dict[int, bytearray]] = {}
        self.pending_puts: dict[tuple[int, int], list[tuple[int, int, int, bytes]]] = defaultdict(list)

    def emit(self, kind: str, rank: int, **kw) -> Event:
        ev = Event(len(self.events), kind, rank, **kw)
        self.events.append(ev)
        return ev

    def changed(self):
        self.version += 1
        self.cond.notify_all()

    def find(self, dest: int, source: int, tag: int) -> int | None:
        for k, env in enumerate(self.queues[dest]):
            if (source == ANY_SOURCE or env.src == source) and (tag == ANY_TAG or env.tag == tag):
                return k
        return None


class _Scheduler:
    def bind(self, world: _World, bodies: int): ...
    def checkpoint(self, rank: int): ...
    def block(self, rank: int, pred: Callable[[], bool], desc: str): ...
    def miss(self, rank: int, key: tuple, version: int): ...


class _DetScheduler(_Scheduler):
    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def bind(self, world, n):
        self.world = world
        self.n = n
        self.sems = [threading.Semaphore(0) for _ in range(n)]
        self.state = ["ready"] * n
        self.waits: list[tuple[Callable[[], bool], str] | None] = [None] * n
        self.parked_at = [-1] * n
        self.miss_version = [-1] * n
        self.miss_keys: list[set] = [set() for _ in range(n)]
        self.abort: BaseException | None = None
        self.finished = threading.Event()

    def _runnable(self, r: int) -> bool:
        st = self.state[r]
        if st == "ready":
            return True
        if st == "blocked":
            return self.waits[r][0]()
        if st == "parked":
            return self.world.version != self.parked_at[r]
        return False

    def _pick(self) -> int | None:
        cands = [r for r in range(self.n) if self._runnable(r)]
        if not cands:
            return None
        return cands[self.rng.randrange(len(cands))]

    def _report(self) -> dict[int, str]:
        rep = {}
        for r in range(self.n):
            if self.state[r] == "blocked":
                rep[r] = f"blocked in {self.waits[r][1]}"
            elif self.state[r] == "parked":
                rep[r] = "polling with no progress possible"
        return rep

    def _switch(self, rank: int):
        """Hand the baton to a runnable rank (possibly ourselves) and wait for it back."""
        nxt = self._pick()
        if nxt is None:
            self._fail(DeadlockError(self._report()))
        elif nxt != rank:
            self.sems[nxt].release()
            self.sems[rank].acquire()
        if self.abort is not None:
            raise _Abort()
        self.state[rank] = "ready"
        self.waits[rank] = None

    def _fail(self, exc: BaseException):
        if self.abort is None:
            self.abort = exc
        for r in range(self.n):
            if self.state[r] != "done":
                self.sems[r].release()
        self.finished.set()
        raise _Abort()

    def start(self):
        first = self._pick()
        self.sems[first].release()

    def enter(self, rank: int):
        self.sems[rank].acquire()
        if self.abort is not None:
            raise _Abort()

    def exit(self, rank: int, error: BaseException | None = None):
        self.state[rank] = "done"
        if error is not None:
            try:
                self._fail(error)
            except _Abort:
                return
        if all(s == "done" for s in self.state):
            self.finished.set()
            return
        nxt = self._pick()
        if nxt is None:
            try:
                self._fail(DeadlockError(self._report()))
            except _Abort:
                return
        else:
            self.sems[nxt].release()

    def checkpoint(self, rank):
        self._switch(rank)

    def block(self, rank, pred, desc):
        if pred():
            return
        self.state[rank] = "blocked"
        self.waits[rank] = (pred, desc)
        self._switch(rank)

    def miss(self, rank, key, version):
        if self.miss_version[rank] != version:
            self.miss_version[rank] = version
            self.miss_keys[rank] = {key}
            return
        if key not in self.miss_keys[rank]:
            self.miss_keys[rank].add(key)
            return
        self.state[rank] = "parked"
        self.parked_at[rank] = version
        self._switch(rank)


class _ThreadScheduler(_Scheduler):
    def __init__(self, timeout: float):
        self.timeout = timeout

    def bind(self, world, n):
        self.world = world
        self.n = n
        self.deadline = time.monotonic() + self.timeout
        self.abort: BaseException | None = None
        self.waiting: dict[int, str] = {}

    def _check(self):
        if self.abort is not None:
            raise _Abort()
        if time.monotonic() > self.deadline:
            self.fail(DeadlockError(dict(self.waiting), reason=f"timeout after {self.timeout}s"))

    def fail(self, exc):
        with self.world.cond:
            if self.abort is None:
                self.abort = exc
            self.world.cond.notify_all()
        raise _Abort()

    def checkpoint(self, rank):
        self._check()

    def block(self, rank, pred, desc):
        w = self.world
        with w.cond:
            while not pred():
                self.waiting[rank] = desc
                self._check()
                w.cond.wait(0.05)
            self.waiting.pop(rank, None)

    def miss(self, rank, key, version):
        w = self.world
        with w.cond:
            if w.version == version:
                w.cond.wait(0.002)
        self._check()


class Comm:
    """Per-rank handle to the simulated world."""

    def __init__(self, world: _World, rank: int):
        self._w = world
        self.rank = rank
        self.size = world.size
        self._coll_gen: dict[tuple, int] = defaultdict(int)
        self._win_gen = 0

    def _dest_ok(self, dest: int):
        if not 0 <= dest < self.size:
            raise ProtocolError(f"rank {self.rank}: destination {dest} out of range [0, {self.size})")

    # point to point

    def _send(self, dest: int, tag: int, payload: bytes, kind: str) -> SendTicket:
        self._dest_ok(dest)
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            msg = w.next_msg
            w.next_msg += 1
            ticket = SendTicket(kind, msg, dest)
            seq = w.seq[(self.rank, dest, tag)]
            w.seq[(self.rank, dest, tag)] += 1
            w.queues[dest].append(Envelope(self.rank, dest, tag, bytes(payload), seq, msg, ticket))
            w.emit("send-posted", self.rank, src=self.rank, dest=dest, tag=tag, bytes=len(payload), msg=msg)
            if kind == "standard":
                ticket.state = "complete"
            w.changed()
        return ticket

    def isend(self, dest: int, tag: int, payload: bytes) -> SendTicket:
        return self._send(dest, tag, payload, "standard")

    def issend(self, dest: int, tag: int, payload: bytes) -> SendTicket:
        return self._send(dest, tag, payload, "synchronous")

    def iprobe(self, source: int = ANY_SOURCE, tag: int = ANY_TAG) -> Status | None:
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            k = w.find(self.rank, source, tag)
            if k is None:
                w.emit("probe-miss", self.rank, src=None if source == ANY_SOURCE else source,
                       dest=self.rank, tag=None if tag == ANY_TAG else tag)
                version = w.version
            else:
                env = w.queues[self.rank][k]
                w.emit("probe-hit", self.rank, src=env.src, dest=self.rank, tag=env.tag,
                       bytes=len(env.payload), msg=env.msg)
                return Status(env.src, env.tag, len(env.payload))
        w.sched.miss(self.rank, ("iprobe", source, tag), version)
        return None

    def probe(self, source: int = ANY_SOURCE, tag: int = ANY_TAG) -> Status:
        w = self._w
        w.sched.checkpoint(self.rank)
        w.sched.block(self.rank, lambda: w.find(self.rank, source, tag) is not None,
                      f"probe(source={source}, tag={tag})")
        with w.lock:
            env = w.queues[self.rank][w.find(self.rank, source, tag)]
            w.emit("probe-hit", self.rank, src=env.src, dest=self.rank, tag=env.tag,
                   bytes=len(env.payload), msg=env.msg)
            return Status(env.src, env.tag, len(env.payload))

    def recv(self, source: int = ANY_SOURCE, tag: int = ANY_TAG, size: int | None = None) -> bytes:
        return self.recv_status(source, tag, size)[0]

    def recv_status(self, source: int = ANY_SOURCE, tag: int = ANY_TAG,
                    size: int | None = None) -> tuple[bytes, Status]:
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            w.emit("recv-posted", self.rank, src=None if source == ANY_SOURCE else source,
                   dest=self.rank, tag=None if tag == ANY_TAG else tag, bytes=size)
            w.changed()
        w.sched.block(self.rank, lambda: w.find(self.rank, source, tag) is not None,
                      f"recv(source={source}, tag={tag})")
        with w.lock:
            q = w.queues[self.rank]
            k = w.find(self.rank, source, tag)
            env = q[k]
            if size is not None and size != len(env.payload):
                raise ProtocolError(
                    f"rank {self.rank}: recv size {size} != queued message size {len(env.payload)} from {env.src}"
                )
            depth = len(q)
            del q[k]
            env.ticket.state = "complete"
            w.emit("match", self.rank, src=env.src, dest=self.rank, tag=env.tag,
                   bytes=len(env.payload), queue_depth=depth, msg=env.msg)
            w.changed()
            return env.payload, Status(env.src, env.tag, len(env.payload))

    # completion

    @staticmethod
    def _complete(ticket) -> bool:
        if isinstance(ticket, BarrierTicket) and ticket.coll.done:
            ticket.state = "complete"
        return ticket.state == "complete"

    def _observe(self, ticket) -> bool:
        if not self._complete(ticket):
            return False
        if not ticket.observed:
            ticket.observed = True
            if isinstance(ticket, SendTicket) and ticket.kind == "synchronous":
                self._w.emit("send-complete", self.rank, src=self.rank, dest=ticket.dest, msg=ticket.msg)
            elif isinstance(ticket, BarrierTicket):
                self._w.emit("barrier-complete", self.rank, group=ticket.coll.size)
        return True

    def test(self, ticket: SendTicket | BarrierTicket) -> bool:
        return self.testall([ticket])

    def testall(self, tickets: Sequence[SendTicket | BarrierTicket]) -> bool:
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            done = all([self._observe(t) for t in tickets])
            version = w.version
        if not done:
            w.sched.miss(self.rank, ("test",) + tuple(id(t) for t in tickets), version)
        return done

    def wait(self, ticket):
        self.waitall([ticket])

    def waitall(self, tickets: Iterable[SendTicket | BarrierTicket]):
        tickets = list(tickets)
        w = self._w
        w.sched.checkpoint(self.rank)
        w.sched.block(self.rank, lambda: all(self._complete(t) for t in tickets), "wait")
        with w.lock:
            for t in tickets:
                self._observe(t)

    # collectives

    def _group(self, group: Sequence[int] | None) -> tuple[int, ...]:
        if group is None:
            return tuple(range(self.size))
        g = tuple(int(r) for r in group)
        if self.rank not in g:
            raise ProtocolError(f"rank {self.rank} is not a member of group {g}")
        return g

    def _enter(self, kind: str, group: tuple[int, ...]) -> tuple[tuple, _Collective]:
        gen = self._coll_gen[(kind, group)]
        self._coll_gen[(kind, group)] += 1
        key = (kind, group, gen)
        w = self._w
        coll = w.collectives.get(key)
        if coll is None:
            coll = w.collectives[key] = _Collective(len(group))
        coll.entered.append(self.rank)
        return key, coll

    def allreduce_sum(self, contribution: Sequence[int], group: Sequence[int] | None = None) -> list[int]:
        """Element-wise sum over ``group`` (default: all ranks); blocks until all have contributed."""
        g = self._group(group)
        vec = [int(x) for x in contribution]
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            key, coll = self._enter("allreduce", g)
            w.emit("reduce-enter", self.rank, group=len(g), bytes=8 * len(vec))
            if coll.acc is None:
                coll.acc = vec
            elif len(coll.acc) != len(vec):
                raise ProtocolError(
                    f"rank {self.rank}: allreduce length {len(vec)} != {len(coll.acc)} from other ranks"
                )
            else:
                coll.acc = [a + b for a, b in zip(coll.acc, vec)]
            if len(coll.entered) == coll.size:
                coll.done = True
            w.changed()
        w.sched.block(self.rank, lambda: coll.done, f"allreduce(group size {len(g)})")
        with w.lock:
            w.emit("reduce-exit", self.rank, group=len(g))
            return list(coll.acc)

    def ibarrier(self, group: Sequence[int] | None = None) -> BarrierTicket:
        g = self._group(group)
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            key, coll = self._enter("barrier", g)
            ticket = BarrierTicket(coll)
            w.emit("barrier-enter", self.rank, group=len(g))
            if len(coll.entered) == coll.size:
                coll.done = True
            w.changed()
        return ticket

    # one-sided

    def win_create(self, size_bytes: int, fill: int = 0) -> Window:
        """Collective: every rank exposes ``size_bytes`` bytes initialised to ``fill``."""
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            wid = self._win_gen
            self._win_gen += 1
            key, coll = self._enter("win", tuple(range(self.size)))
            w.windows.setdefault(wid, {})[self.rank] = bytearray([fill & 0xFF]) * size_bytes
            w.emit("win-create", self.rank, bytes=size_bytes, group=self.size)
            if len(coll.entered) == coll.size:
                coll.done = True
            w.changed()
        w.sched.block(self.rank, lambda: coll.done, "win_create")
        return Window(wid, self.rank, size_bytes)

    def put(self, win: Window, dest: int, offset: int, payload: bytes):
        self._dest_ok(dest)
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            target = w.windows[win.id][dest]
            if offset < 0 or offset + len(payload) > len(target):
                raise ProtocolError(
                    f"out-of-bounds put: src={self.rank} dest={dest} offset={offset} "
                    f"len={len(payload)} window={len(target)}"
                )
            w.pending_puts[(win.id, win.epoch)].append((self.rank, dest, offset, bytes(payload)))
            w.emit("put", self.rank, src=self.rank, dest=dest, bytes=len(payload), offset=offset)
            w.changed()

    def fence(self, win: Window):
        """Collective epoch boundary; puts from the closing epoch become visible."""
        w = self._w
        w.sched.checkpoint(self.rank)
        with w.lock:
            key, coll = self._enter(f"fence{win.id}", tuple(range(self.size)))
            w.emit("fence", self.rank, group=self.size)
            if len(coll.entered) == coll.size:
                self._apply_puts(win)
                coll.done = True
            w.changed()
        w.sched.block(self.rank, lambda: coll.done, "fence")
        win.epoch += 1

    def _apply_puts(self, win: Window):
        w = self._w
        puts = w.pending_puts.pop((win.id, win.epoch), [])
        spans = defaultdict(list)
        for src, dest, off, data in puts:
            spans[dest].append((off, off + len(data), src))
        for dest, ranges in spans.items():
            ranges.sort()
            for (a0, a1, s0), (b0, b1, s1) in zip(ranges, ranges[1:]):
                if b0 < a1:
                    raise ProtocolError(
                        f"conflicting puts in one epoch at dest={dest}: src {s0} [{a0},{a1}) and src {s1} [{b0},{b1})"
                    )
        for src, dest, off, data in puts:
            w.windows[win.id][dest][off:off + len(data)] = data

    def win_read(self, win: Window) -> bytes:
        with self._w.lock:
            return bytes(self._w.windows[win.id][self.rank])


def spawn(world_size: int, body: Callable[[Comm], Any], *, backend: str = "det",
          seed: int = 0, timeout: float = 60.0) -> RunResult:
    """Run ``body(comm)`` once per rank and collect the trace and per-rank return values.

    Raises :class:`DeadlockError` when no rank can make progress, or re-raises
    the first exception a rank body raised.
    """
    if world_size < 1:
        raise ValueError("world_size must be >= 1")
    if backend == "det":
        sched: _Scheduler = _DetScheduler(seed)
    elif backend == "threads":
        sched = _ThreadScheduler(timeout)
    else:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    world = _World(world_size, sched)
    sched.bind(world, world_size)
    comms = [Comm(world, r) for r in range(world_size)]
    results: list[Any] = [None] * world_size
    errors: list[tuple[int, BaseException]] = []

    def run(rank: int):
        err = None
        try:
            if backend == "det":
                sched.enter(rank)
            results[rank] = body(comms[rank])
        except _Abort:
            return
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            err = exc
            errors.append((rank, exc))
        if backend == "det":
            sched.exit(rank, err)
        elif err is not None:
            try:
                sched.fail(err)
            except _Abort:
                pass

    threads = [threading.Thread(target=run, args=(r,), name=f"rank-{r}", daemon=True)
               for r in range(world_size)]
    for t in threads:
        t.start()
    if backend == "det":
        sched.start()
    for t in threads:
        t.join()

    trace = Trace(world.events, completed=False)
    abort = sched.abort
    if errors:
        rank, exc = errors[0]
        if not hasattr(exc, "rank"):
            try:
                exc.rank = rank
            except AttributeError:
                pass
        raise exc
    if abort is not None:
        abort.trace = trace
        raise abort
    trace.completed = True
    log.debug("run complete: %d ranks, %d events", world_size, len(trace))
    return RunResult(trace, results)
