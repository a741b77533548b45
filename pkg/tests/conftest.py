import random
from pathlib import Path

import pytest

from sdde.core import SddeInstance, Topology
from sdde.matrix import iter_entries, random_instance

DATA = Path(__file__).resolve().parent.parent / "data"


def brute_force_sends(instance: SddeInstance):
    """Per-(i, j) membership scan: rank i sends X to j iff j's spec lists (i, X)."""
    n = instance.world_size
    sends = []
    for i in range(n):
        row = []
        for j in range(n):
            for src, idx in instance.recvs[j]:
                if src == i:
                    row.append((j, tuple(idx)))
        sends.append(tuple(row))
    return tuple(sends)


def fig_instance() -> SddeInstance:
    """Receive requirements of the 4x4 example shipped in data/fig_partition.mtx."""
    return SddeInstance(Topology(4, 1), (
        [(1, [1])],
        [(2, [2])],
        [(0, [0]), (3, [3])],
        [(1, [1])],
    ))


def fuzz_instances(count: int, seed: int, worlds=(1, 2, 4, 8, 32, 64), ppns=(1, 4, 8)):
    rng = random.Random(seed)
    for k in range(count):
        world = worlds[k % len(worlds)]
        ppn = min(ppns[(k // len(worlds)) % len(ppns)], world)
        mode = ("constant", "variable")[(k // (len(worlds) * len(ppns))) % 2]
        yield mode, random_instance(Topology(world, ppn), rng, constant=mode == "constant")


def recount(path):
    """Distinct stored positions after symmetric expansion, read straight from the file."""
    lines = [l.split() for l in path.read_text().splitlines() if l.strip() and not l.startswith("%")]
    symmetric = "general" not in path.read_text().splitlines()[0]
    pairs = set()
    for tok in lines[1:]:
        i, j = int(tok[0]) - 1, int(tok[1]) - 1
        pairs.add((i, j))
        if symmetric:
            pairs.add((j, i))
    return len(pairs), int(lines[0][2])


def direct_scan(matrix, n_procs):
    """Owner table from explicit block sizes, then one pass over all nonzeros."""
    n = matrix.n_rows
    sizes = [n // n_procs + (1 if p < n % n_procs else 0) for p in range(n_procs)]
    owner = []
    for p, s in enumerate(sizes):
        owner += [p] * s
    need = [dict() for _ in range(n_procs)]
    for i, j in iter_entries(matrix):
        p, q = owner[i], owner[j]
        if p != q:
            need[p].setdefault(q, set()).add(j)
    return tuple(tuple((q, tuple(sorted(js))) for q, js in sorted(d.items())) for d in need)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def data_dir():
    return DATA
