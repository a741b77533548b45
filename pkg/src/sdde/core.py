"""Problem types shared by every module: topology, SDDE instances, patterns and the oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """Malformed input, raised before any communication happens."""


Message = tuple[int, tuple[int, ...]]  # (peer rank, ordered values)


@dataclass(frozen=True)
class Topology:
    """Ranks laid out sequentially over regions of ``region_size`` ranks.

    The last region may be ragged when ``world_size`` is not a multiple of
    ``region_size``.
    """

    world_size: int
    region_size: int = 1

    def __post_init__(self):
        if self.world_size < 1:
            raise ValidationError(f"world_size must be >= 1, got {self.world_size}")
        if not 1 <= self.region_size <= self.world_size:
            raise ValidationError(
                f"region_size must be in [1, {self.world_size}], got {self.region_size}"
            )

    @property
    def n_regions(self) -> int:
        return -(-self.world_size // self.region_size)

    def _check(self, rank: int):
        if not 0 <= rank < self.world_size:
            raise ValidationError(f"rank {rank} out of range [0, {self.world_size})")

    def region(self, rank: int) -> int:
        self._check(rank)
        return rank // self.region_size

    def local_rank(self, rank: int) -> int:
        self._check(rank)
        return rank % self.region_size

    def map(self, rank: int) -> tuple[int, int]:
        return self.region(rank), self.local_rank(rank)

    def region_members(self, region: int) -> range:
        if not 0 <= region < self.n_regions:
            raise ValidationError(f"region {region} out of range [0, {self.n_regions})")
        start = region * self.region_size
        return range(start, min(start + self.region_size, self.world_size))

    def ranks_in_region(self, region: int) -> int:
        return len(self.region_members(region))

    def corresponding_process(self, rank: int, region: int) -> int:
        """Rank in ``region`` sharing ``rank``'s local rank.

        Ragged regions wrap the local rank around the ranks they actually hold.
        """
        local = self.local_rank(rank)
        members = self.region_members(region)
        if local >= len(members):
            local %= len(members)
        return members.start + local


def topology_map(topology: Topology, rank: int) -> tuple[int, int]:
    return topology.map(rank)


def _as_messages(spec: Iterable, rank: int, world_size: int, field_name: str) -> tuple[Message, ...]:
    out = []
    seen = set()
    for peer, values in spec:
        peer = int(peer)
        if not 0 <= peer < world_size:
            raise ValidationError(
                f"rank {rank}: {field_name} peer {peer} out of range [0, {world_size})"
            )
        if peer in seen:
            raise ValidationError(f"rank {rank}: duplicate {field_name} peer {peer}")
        seen.add(peer)
        vals = tuple(int(v) for v in values)
        if any(v < 0 or v >= 2**64 for v in vals):
            raise ValidationError(f"rank {rank}: {field_name} index outside unsigned 64-bit range")
        out.append((peer, vals))
    return tuple(out)


@dataclass(frozen=True)
class SddeInstance:
    """Per-rank receive requirements.

    ``recvs[i]`` lists ``(src, indices)``: rank ``i`` needs ``indices`` owned
    by ``src``. A rank may list itself as a source.
    """

    topology: Topology
    recvs: tuple[tuple[Message, ...], ...]

    def __post_init__(self):
        n = self.topology.world_size
        if len(self.recvs) != n:
            raise ValidationError(f"expected {n} per-rank receive specs, got {len(self.recvs)}")
        object.__setattr__(
            self,
            "recvs",
            tuple(_as_messages(spec, i, n, "recv_procs") for i, spec in enumerate(self.recvs)),
        )

    @classmethod
    def from_arrays(cls, topology: Topology, per_rank: Sequence[dict]) -> "SddeInstance":
        """Build from per-rank ``recv_procs``/``recv_sizes``/``recv_ptr``/``recv_indices`` arrays."""
        recvs = []
        for rank, arrs in enumerate(per_rank):
            procs = list(arrs.get("recv_procs", []))
            sizes = list(arrs.get("recv_sizes", []))
            ptr = list(arrs.get("recv_ptr", [0]))
            idx = list(arrs.get("recv_indices", []))
            if len(sizes) != len(procs):
                raise ValidationError(f"rank {rank}: recv_sizes length {len(sizes)} != recv_procs length {len(procs)}")
            if len(ptr) != len(procs) + 1 or (ptr and ptr[0] != 0):
                raise ValidationError(f"rank {rank}: recv_ptr must have len(recv_procs)+1 entries starting at 0")
            for k in range(len(procs)):
                if ptr[k + 1] < ptr[k]:
                    raise ValidationError(f"rank {rank}: recv_ptr decreases at position {k}")
                if ptr[k + 1] - ptr[k] != sizes[k]:
                    raise ValidationError(f"rank {rank}: recv_sizes[{k}]={sizes[k]} disagrees with recv_ptr")
            if ptr[-1] != len(idx):
                raise ValidationError(f"rank {rank}: recv_ptr[-1]={ptr[-1]} but {len(idx)} recv_indices")
            recvs.append([(procs[k], idx[ptr[k]:ptr[k + 1]]) for k in range(len(procs))])
        return cls(topology, tuple(recvs))

    @classmethod
    def empty(cls, topology: Topology) -> "SddeInstance":
        return cls(topology, tuple(() for _ in range(topology.world_size)))

    @property
    def world_size(self) -> int:
        return self.topology.world_size

    def arrays(self, rank: int) -> dict:
        spec = self.recvs[rank]
        sizes = [len(v) for _, v in spec]
        return {
            "recv_procs": np.array([p for p, _ in spec], dtype=np.int64),
            "recv_sizes": np.array(sizes, dtype=np.int64),
            "recv_ptr": np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).astype(np.int64),
            "recv_indices": np.array([i for _, v in spec for i in v], dtype=np.uint64),
        }

    def uniform_size(self) -> int | None:
        """Common message size if all messages have one, else None (also None when empty)."""
        sizes = {len(v) for spec in self.recvs for _, v in spec}
        return sizes.pop() if len(sizes) == 1 else None

    def n_messages(self) -> int:
        return sum(len(spec) for spec in self.recvs)

    def with_topology(self, topology: Topology) -> "SddeInstance":
        return SddeInstance(topology, self.recvs)


@dataclass(frozen=True)
class CommPattern:
    """Discovered send side plus the receive side it was generated from.

    Entries are sorted by peer rank in every per-rank tuple.
    """

    sends: tuple[tuple[Message, ...], ...]
    recvs: tuple[tuple[Message, ...], ...] = field(default=())

    def first_difference(self, other: "CommPattern") -> tuple[int, object, object] | None:
        """``(rank, mine, theirs)`` for the first differing send entry, or None."""
        n = max(len(self.sends), len(other.sends))
        for rank in range(n):
            a = self.sends[rank] if rank < len(self.sends) else ()
            b = other.sends[rank] if rank < len(other.sends) else ()
            if a == b:
                continue
            da, db = dict(a), dict(b)
            for peer in sorted(set(da) | set(db)):
                if da.get(peer) != db.get(peer):
                    return rank, (peer, da.get(peer)), (peer, db.get(peer))
        return None


def canonical(messages: Iterable[Message]) -> tuple[Message, ...]:
    return tuple(sorted(((int(p), tuple(int(x) for x in v)) for p, v in messages), key=lambda m: m[0]))


def oracle_transpose(instance: SddeInstance) -> CommPattern:
    """Sequential global inversion of the receive specs."""
    sends: list[list[Message]] = [[] for _ in range(instance.world_size)]
    for rank, spec in enumerate(instance.recvs):
        for src, indices in spec:
            sends[src].append((rank, indices))
    return CommPattern(
        sends=tuple(canonical(s) for s in sends),
        recvs=tuple(canonical(s) for s in instance.recvs),
    )


@dataclass(frozen=True)
class CrsRequest:
    """One rank's sparse all-to-all request: destinations and the values for each."""

    dests: tuple[int, ...]
    send_values: tuple[tuple[int, ...], ...]
    sendcount: int | None = None  # set for constant mode

    def __post_init__(self):
        object.__setattr__(self, "dests", tuple(int(d) for d in self.dests))
        object.__setattr__(self, "send_values", tuple(tuple(int(x) for x in v) for v in self.send_values))
        if len(self.dests) != len(self.send_values):
            raise ValidationError("dests and send_values must have equal length")
        if len(set(self.dests)) != len(self.dests):
            raise ValidationError("dests must be distinct")
        if self.sendcount is not None:
            if self.sendcount < 0:
                raise ValidationError("sendcount must be >= 0")
            for d, v in zip(self.dests, self.send_values):
                if len(v) != self.sendcount:
                    raise ValidationError(f"constant mode: dest {d} carries {len(v)} values, expected {self.sendcount}")

    @property
    def mode(self) -> str:
        return "variable" if self.sendcount is None else "constant"

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.send_values)
