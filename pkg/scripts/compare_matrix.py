#!/usr/bin/env python3
"""Derive the exchange pattern of a Matrix Market file and check every algorithm against the oracle.

    python scripts/compare_matrix.py data/pattern_ragged.mtx --world 4 --ppn 2
"""

import argparse
import sys

from sdde import (ALGORITHMS, Topology, count_messages, instance_from_matrix, model_time,
                  oracle_transpose, parse_matrix_market, run_instance)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("mtx")
    ap.add_argument("--world", type=int, default=4)
    ap.add_argument("--ppn", type=int, default=1)
    args = ap.parse_args(argv)

    topo = Topology(args.world, args.ppn)
    matrix = parse_matrix_market(args.mtx)
    inst = instance_from_matrix(matrix, topo)
    counts = count_messages(inst)
    print(f"{args.mtx}: {matrix.n_rows}x{matrix.n_cols}, nnz={matrix.nnz}, "
          f"{inst.n_messages()} messages, inter-region standard={counts.standard_total} "
          f"aggregated={counts.aggregated_total}")
    want = oracle_transpose(inst)
    status = 0
    for alg in ALGORITHMS:
        mode = "constant" if alg == "rma" else "variable"
        if alg == "rma" and inst.uniform_size() is None:
            print(f"  {alg:24s} skipped (sizes vary)")
            continue
        res = run_instance(inst, alg, mode)
        ok = res.pattern == want
        status |= not ok
        rep = model_time(res.trace, topo)
        print(f"  {alg:24s} {'ok' if ok else 'MISMATCH'}  matches={rep.total_matches:4d}  "
              f"max_time={rep.max_time:.3e}s")
    return status


if __name__ == "__main__":
    sys.exit(main())
