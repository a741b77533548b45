"""Message counts and a postal-model time estimate from event traces."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, replace

from .core import SddeInstance, Topology
from .transport import Trace

COLLECTIVE_KINDS = ("reduce-enter", "barrier-enter", "fence", "win-create")


@dataclass(frozen=True)
class CostParams:
    """Latency (s/message), inverse bandwidth (s/byte), matching cost and collective cost.

    Defaults are representative ratios, not measurements.  A collective over
    ``g`` ranks costs ``sigma_coll * log2(g)``.
    """

    alpha_intra: float = 1e-6
    alpha_inter: float = 5e-6
    beta_intra: float = 5e-10
    beta_inter: float = 2e-9
    gamma_match: float = 1e-8
    sigma_coll: float = 1e-6

    def __post_init__(self):
        for name, val in asdict(self).items():
            if val < 0:
                raise ValueError(f"{name} must be nonnegative, got {val}")
        if self.alpha_inter < self.alpha_intra or self.beta_inter < self.beta_intra:
            warnings.warn("inter-region costs are below intra-region costs", stacklevel=2)

    def collective(self, group: int) -> float:
        return self.sigma_coll * math.log2(group) if group > 1 else 0.0

    def scaled(self, k: float) -> "CostParams":
        return CostParams(**{name: val * k for name, val in asdict(self).items()})

    def override(self, **kw) -> "CostParams":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class MessageCounts:
    standard: tuple[int, ...]
    aggregated: tuple[int, ...]

    @property
    def standard_max(self) -> int:
        return max(self.standard, default=0)

    @property
    def aggregated_max(self) -> int:
        return max(self.aggregated, default=0)

    @property
    def standard_total(self) -> int:
        return sum(self.standard)

    @property
    def aggregated_total(self) -> int:
        return sum(self.aggregated)


def count_messages(instance: SddeInstance, topology: Topology | None = None,
                   side: str = "request") -> MessageCounts:
    """Per-rank inter-region message counts without and with region aggregation.

    ``side="request"`` counts the messages each rank sends during the exchange
    (to the owners of the data it needs); ``side="reply"`` counts the
    transposed pattern (the ranks it will later send data to).
    """
    topo = topology or instance.topology
    n = topo.world_size
    peers: list[set[int]] = [set() for _ in range(n)]
    for rank, spec in enumerate(instance.recvs):
        for src, _ in spec:
            if side == "request":
                peers[rank].add(src)
            elif side == "reply":
                peers[src].add(rank)
            else:
                raise ValueError(f"side must be 'request' or 'reply', got {side!r}")
    standard, aggregated = [], []
    for p in range(n):
        own = topo.region(p)
        remote = {q for q in peers[p] if topo.region(q) != own}
        standard.append(len(remote))
        aggregated.append(len({topo.region(q) for q in remote}))
    return MessageCounts(tuple(standard), tuple(aggregated))


@dataclass
class RankReport:
    rank: int
    sent_intra: int = 0
    sent_inter: int = 0
    bytes_intra: int = 0
    bytes_inter: int = 0
    matches: int = 0
    collectives: int = 0
    modeled_time: float = 0.0


@dataclass
class RunReport:
    algorithm: str
    mode: str
    world_size: int
    region_size: int
    ranks: list[RankReport]
    max_time: float
    total_matches: int
    allreduce_calls: int
    standard_count: int | None = None
    aggregated_count: int | None = None
    standard_max: int | None = None
    aggregated_max: int | None = None

    @property
    def sent_inter(self) -> int:
        return sum(r.sent_inter for r in self.ranks)

    @property
    def sent_intra(self) -> int:
        return sum(r.sent_intra for r in self.ranks)

    @property
    def bytes_total(self) -> int:
        return sum(r.bytes_intra + r.bytes_inter for r in self.ranks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["summary"] = {
            "max_time": self.max_time,
            "sent_inter": self.sent_inter,
            "sent_intra": self.sent_intra,
            "bytes_total": self.bytes_total,
            "total_matches": self.total_matches,
            "allreduce_calls": self.allreduce_calls,
            "standard_count": self.standard_count,
            "aggregated_count": self.aggregated_count,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = ["rank", "sent_intra", "sent_inter", "bytes_intra", "bytes_inter", "matches",
                "collectives", "modeled_time"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.ranks:
            w.writerow([getattr(r, c) for c in cols])
        w.writerow(["summary", self.sent_intra, self.sent_inter,
                    sum(r.bytes_intra for r in self.ranks), sum(r.bytes_inter for r in self.ranks),
                    self.total_matches, self.allreduce_calls, repr(self.max_time)])
        return buf.getvalue()


def model_time(trace: Trace, topology: Topology, params: CostParams | None = None, *,
               algorithm: str = "", mode: str = "", instance: SddeInstance | None = None) -> RunReport:
    """Additive per-rank cost: sends and puts, matching against the queue, and collectives."""
    if not trace.completed:
        raise ValueError("cannot model a trace from an aborted run")
    params = params or CostParams()
    ranks = [RankReport(r) for r in range(topology.world_size)]
    allreduces = [0] * topology.world_size
    for ev in trace:
        if ev.kind in ("send-posted", "put"):
            rep = ranks[ev.rank]
            if topology.region(ev.src) == topology.region(ev.dest):
                rep.sent_intra += 1
                rep.bytes_intra += ev.bytes
                rep.modeled_time += params.alpha_intra + ev.bytes * params.beta_intra
            else:
                rep.sent_inter += 1
                rep.bytes_inter += ev.bytes
                rep.modeled_time += params.alpha_inter + ev.bytes * params.beta_inter
        elif ev.kind == "match":
            ranks[ev.rank].matches += 1
            ranks[ev.rank].modeled_time += params.gamma_match * ev.queue_depth
        elif ev.kind in COLLECTIVE_KINDS:
            ranks[ev.rank].collectives += 1
            ranks[ev.rank].modeled_time += params.collective(ev.group)
            if ev.kind == "reduce-enter":
                allreduces[ev.rank] += 1
    report = RunReport(
        algorithm=algorithm,
        mode=mode,
        world_size=topology.world_size,
        region_size=topology.region_size,
        ranks=ranks,
        max_time=max(r.modeled_time for r in ranks),
        total_matches=sum(r.matches for r in ranks),
        allreduce_calls=max(allreduces),
    )
    if instance is not None:
        counts = count_messages(instance, topology)
        report.standard_count = counts.standard_total
        report.aggregated_count = counts.aggregated_total
        report.standard_max = counts.standard_max
        report.aggregated_max = counts.aggregated_max
    return report
