"""Sparse dynamic data exchange over simulated MPI ranks."""

from .algorithms import (
    ALGORITHMS,
    AlgorithmId,
    ExchangeResult,
    alltoall_crs,
    alltoallv_crs,
    decode_records,
    encode_records,
    exchange,
    locality_aware,
    nonblocking,
    personalized,
    rma,
    run_instance,
)
from .core import CommPattern, CrsRequest, SddeInstance, Topology, ValidationError, oracle_transpose, topology_map
from .matrix import (RowPartition, SparseMatrixCsr, derive_instance, generate_synthetic, instance_from_matrix,
                     parse_matrix_market)
from .metrics import CostParams, RunReport, count_messages, model_time
from .transport import DeadlockError, ProtocolError, Trace, spawn

__all__ = [
    "ALGORITHMS", "AlgorithmId", "CommPattern", "CostParams", "CrsRequest", "DeadlockError",
    "ExchangeResult", "ProtocolError", "RowPartition", "RunReport", "SddeInstance", "SparseMatrixCsr",
    "Topology", "Trace", "ValidationError", "alltoall_crs", "alltoallv_crs", "count_messages",
    "decode_records", "derive_instance", "encode_records", "exchange", "generate_synthetic",
    "instance_from_matrix",    "locality_aware", "model_time", "nonblocking", "oracle_transpose", "parse_matrix_market",
    "personalized", "rma", "run_instance", "spawn", "topology_map",
]
