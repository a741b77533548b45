"""Sparse matrices as a source of SDDE instances."""

from __future__ import annotations

import io
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .core import SddeInstance, Topology, ValidationError


class MatrixMarketError(ValidationError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True, eq=False)
class SparseMatrixCsr:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        if len(self.row_ptr) != self.n_rows + 1 or self.row_ptr[0] != 0:
            raise ValidationError("row_ptr must have n_rows + 1 entries starting at 0")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValidationError("row_ptr must be nondecreasing")
        if self.row_ptr[-1] != len(self.col_idx):
            raise ValidationError("row_ptr[-1] must equal the number of column indices")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols):
            raise ValidationError(f"column index outside [0, {self.n_cols})")
        if self.values is not None and len(self.values) != len(self.col_idx):
            raise ValidationError("values and col_idx lengths differ")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def __eq__(self, other):
        if not isinstance(other, SparseMatrixCsr):
            return NotImplemented
        same_vals = (self.values is None and other.values is None) or (
            self.values is not None and other.values is not None and np.array_equal(self.values, other.values)
        )
        return (self.n_rows, self.n_cols) == (other.n_rows, other.n_cols) and np.array_equal(
            self.row_ptr, other.row_ptr) and np.array_equal(self.col_idx, other.col_idx) and same_vals

    @classmethod
    def from_coo(cls, n_rows: int, n_cols: int, rows, cols, values=None) -> "SparseMatrixCsr":
        """Sort row-major and merge duplicates (values summed)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if len(rows):
            keys = rows * n_cols + cols
            order = np.argsort(keys, kind="stable")
            keys = keys[order]
            uniq, first = np.unique(keys, return_index=True)
            if values is not None:
                values = np.add.reduceat(np.asarray(values)[order], first) if len(first) else np.asarray(values)
            rows, cols = uniq // n_cols, uniq % n_cols
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        return cls(n_rows, n_cols, np.cumsum(row_ptr), cols.astype(np.int64),
                   None if values is None else np.asarray(values))

    def to_matrix_market(self) -> str:
        """General coordinate form (symmetry is not re-folded)."""
        field = "pattern" if self.values is None else (
            "integer" if np.issubdtype(self.values.dtype, np.integer) else "real")
        out = [f"%%MatrixMarket matrix coordinate {field} general", f"{self.n_rows} {self.n_cols} {self.nnz}"]
        for i in range(self.n_rows):
            for k in range(self.row_ptr[i], self.row_ptr[i + 1]):
                entry = f"{i + 1} {self.col_idx[k] + 1}"
                if self.values is not None:
                    entry += f" {float(self.values[k])!r}" if field == "real" else f" {int(self.values[k])}"
                out.append(entry)
        return "\n".join(out) + "\n"


_FIELDS = {"real", "integer", "pattern"}
_SYMMETRIES = {"general", "symmetric", "skew-symmetric", "hermitian"}


def parse_matrix_market(source: str | Path | IO[str]) -> SparseMatrixCsr:
    """Read a coordinate Matrix Market file into 0-based CSR.

    Symmetric (and, for pattern purposes, skew/hermitian) inputs are
    expanded to both triangles. Duplicate entries are summed.
    """
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        with open(source) as fh:
            return parse_matrix_market(fh)
    if isinstance(source, str):
        source = io.StringIO(source)

    lines = enumerate(source, start=1)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MatrixMarketError("empty file", 1) from None
    tok = header.strip().split()
    if len(tok) != 5 or tok[0].lower() != "%%matrixmarket" or tok[1].lower() != "matrix":
        raise MatrixMarketError(f"malformed header {header.strip()!r}", lineno)
    fmt, field, symmetry = (t.lower() for t in tok[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"only coordinate format is supported, got {fmt!r}", lineno)
    if field not in _FIELDS:
        raise MatrixMarketError(f"unsupported field {field!r}", lineno)
    if symmetry not in _SYMMETRIES:
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", lineno)

    size_line = None
    for lineno, line in lines:
        s = line.strip()
        if s and not s.startswith("%"):
            size_line = s
            break
    if size_line is None:
        raise MatrixMarketError("missing size line", lineno)
    try:
        n_rows, n_cols, nnz = (int(x) for x in size_line.split())
    except ValueError:
        raise MatrixMarketError(f"malformed size line {size_line!r}", lineno) from None

    rows, cols, vals = [], [], []
    want = 2 if field == "pattern" else 3
    count = 0
    for lineno, line in lines:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) < want:
            raise MatrixMarketError(f"expected {want} fields, got {len(parts)}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            v = None if field == "pattern" else (int(parts[2]) if field == "integer" else float(parts[2]))
        except ValueError:
            raise MatrixMarketError(f"malformed entry {s!r}", lineno) from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise MatrixMarketError(f"entry ({i}, {j}) outside {n_rows}x{n_cols}", lineno)
        count += 1
        if count > nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", lineno)
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if symmetry != "general" and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(-v if symmetry == "skew-symmetric" and v is not None else v)
    if count < nnz:
        raise MatrixMarketError(f"truncated: {count} of {nnz} declared entries", lineno)
    values = None if field == "pattern" else np.array(vals, dtype=np.int64 if field == "integer" else np.float64)
    return SparseMatrixCsr.from_coo(n_rows, n_cols, rows, cols, values)


@dataclass(frozen=True)
class RowPartition:
    """Contiguous row blocks; the first ``n_rows % n_procs`` ranks hold one extra row."""

    n_rows: int
    n_procs: int

    def __post_init__(self):
        if self.n_rows < 0 or self.n_procs < 1:
            raise ValidationError("need n_rows >= 0 and n_procs >= 1")

    @property
    def _base(self) -> int:
        return self.n_rows // self.n_procs

    @property
    def _extra(self) -> int:
        return self.n_rows % self.n_procs

    def first_row(self, p: int) -> int:
        return p * self._base + min(p, self._extra)

    def rows(self, p: int) -> range:
        return range(self.first_row(p), self.first_row(p + 1))

    def owner(self, row: int) -> int:
        if not 0 <= row < self.n_rows:
            raise ValidationError(f"row {row} out of range [0, {self.n_rows})")
        big = (self._base + 1) * self._extra
        if row < big:
            return row // (self._base + 1)
        return self._extra + (row - big) // self._base


def derive_instance(matrix: SparseMatrixCsr, partition: RowPartition, topology: Topology) -> SddeInstance:
    """Each rank needs the vector entries of its off-process nonzero columns."""
    if matrix.n_rows != matrix.n_cols:
        raise ValidationError(f"matrix must be square, got {matrix.n_rows}x{matrix.n_cols}")
    if partition.n_procs != topology.world_size:
        raise ValidationError("partition and topology disagree on the number of ranks")
    if partition.n_rows != matrix.n_rows:
        raise ValidationError("partition and matrix disagree on the number of rows")
    n = topology.world_size
    firsts = np.array([partition.first_row(p) for p in range(n + 1)])
    recvs = []
    for p in range(n):
        rows = partition.rows(p)
        cols = np.unique(matrix.col_idx[matrix.row_ptr[rows.start]:matrix.row_ptr[rows.stop]])
        owners = np.searchsorted(firsts, cols, side="right") - 1
        spec = []
        for q in np.unique(owners):
            if q != p:
                spec.append((int(q), cols[owners == q].tolist()))
        recvs.append(spec)
    return SddeInstance(topology, tuple(recvs))


def instance_from_matrix(matrix: SparseMatrixCsr, topology: Topology) -> SddeInstance:
    return derive_instance(matrix, RowPartition(matrix.n_rows, topology.world_size), topology)


# synthetic patterns

SYNTHETIC_KINDS = ("ring", "hotspot", "region-dense", "one-remote", "random")


def _block(rank: int, k: int, block: int) -> list[int]:
    return [rank * block + t for t in range(k)]


def generate_synthetic(kind: str, topology: Topology, *, seed: int = 0, avg_degree: int = 3,
                       sendcount: int | None = None, span: str = "next", block: int = 1024) -> SddeInstance:
    """Benchmark patterns. Rank ``q`` owns global indices ``[q*block, (q+1)*block)``.

    ``ring``: each rank needs one index from its predecessor.
    ``hotspot``: rank 0 needs one index from every other rank.
    ``region-dense``: each rank needs one index from every rank of the next
    region (``span="next"``) or of every other region (``span="all"``).
    ``one-remote``: each rank needs one index from one rank of the next
    region, never its corresponding process when avoidable.
    ``random``: ``avg_degree`` distinct non-self sources per rank, sizes
    uniform in [1, 4] or fixed at ``sendcount``.
    """
    n = topology.world_size
    k = 1 if sendcount is None else sendcount
    if k < 0 or k > block:
        raise ValidationError(f"sendcount must be in [0, {block}]")
    recvs: list[list] = [[] for _ in range(n)]
    if kind == "ring":
        if n > 1:
            for p in range(n):
                recvs[p].append(((p - 1) % n, _block((p - 1) % n, k, block)))
    elif kind == "hotspot":
        recvs[0] = [(q, _block(q, k, block)) for q in range(1, n)]
    elif kind == "region-dense":
        if span not in ("next", "all"):
            raise ValidationError("span must be 'next' or 'all'")
        nreg = topology.n_regions
        for p in range(n):
            own = topology.region(p)
            if span == "next":
                targets = [(own + 1) % nreg] if nreg > 1 else []
            else:
                targets = [r for r in range(nreg) if r != own]
            for r in targets:
                recvs[p].extend((q, _block(q, k, block)) for q in topology.region_members(r))
    elif kind == "one-remote":
        nreg = topology.n_regions
        if nreg > 1:
            for p in range(n):
                members = topology.region_members((topology.region(p) + 1) % nreg)
                q = members.start + (topology.local_rank(p) + 1) % len(members)
                recvs[p].append((q, _block(q, k, block)))
    elif kind == "random":
        rng = random.Random(seed)
        for p in range(n):
            others = [q for q in range(n) if q != p]
            deg = min(avg_degree, len(others))
            for q in sorted(rng.sample(others, deg)):
                size = k if sendcount is not None else rng.randint(1, 4)
                recvs[p].append((q, sorted(rng.sample(range(q * block, (q + 1) * block), size))))
    else:
        raise ValidationError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    return SddeInstance(topology, tuple(recvs))


def random_instance(topology: Topology, rng: random.Random, *, constant: bool = False,
                    self_prob: float = 0.1, max_degree: int = 6, max_size: int = 5) -> SddeInstance:
    """Fuzzing instances: random degrees including zero, optional self-dependencies."""
    n = topology.world_size
    sendcount = rng.randint(1, max_size) if constant else None
    recvs = []
    for p in range(n):
        deg = rng.randint(0, min(max_degree, n))
        srcs = sorted(rng.sample(range(n), deg))
        if p in srcs and rng.random() > self_prob:
            srcs.remove(p)
        spec = []
        for q in srcs:
            size = sendcount if constant else rng.randint(0, max_size)
            spec.append((q, sorted(rng.sample(range(q * 64, q * 64 + 64), size))))
        recvs.append(spec)
    return SddeInstance(topology, tuple(recvs))


def iter_entries(matrix: SparseMatrixCsr) -> Iterable[tuple[int, int]]:
    for i in range(matrix.n_rows):
        for j in matrix.row(i):
            yield i, int(j)
