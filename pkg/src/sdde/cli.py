"""Command line: ``sdde run | compare | verify``.

Exit codes: 0 success, 1 invalid input, 2 protocol error or deadlock,
3 pattern mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .algorithms import ALGORITHMS, MODES, AlgorithmId, applicable, run_instance
from .core import SddeInstance, Topology, ValidationError, oracle_transpose
from .matrix import SYNTHETIC_KINDS, generate_synthetic, instance_from_matrix, parse_matrix_market, random_instance
from .metrics import CostParams, RunReport, model_time
from .transport import BACKENDS, DeadlockError, ProtocolError

log = logging.getLogger("sdde")

EXIT_OK, EXIT_INVALID, EXIT_PROTOCOL, EXIT_MISMATCH = 0, 1, 2, 3


class Mismatch(Exception):
    pass


@dataclass
class RunConfig:
    mtx: str | None = None
    synthetic: str | None = None
    world: int = 4
    ppn: int = 1
    algorithms: list[str] = field(default_factory=lambda: ["nonblocking"])
    mode: str = "variable"
    backend: str = "det"
    seed: int = 0
    cost: dict[str, float] = field(default_factory=dict)
    out: str | None = None
    format: str = "json"
    trace: str | None = None
    fuzz: int = 0
    fault_drop_send: bool = False

    def validate(self):
        if (self.mtx is None) == (self.synthetic is None) and not self.fuzz:
            raise ValidationError("exactly one of --mtx or --synthetic is required")
        if self.mode not in MODES:
            raise ValidationError(f"--mode must be one of {MODES}")
        if self.backend not in BACKENDS:
            raise ValidationError(f"--backend must be one of {BACKENDS}")
        if self.format not in ("json", "csv"):
            raise ValidationError("--format must be json or csv")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("--seed must fit in an unsigned 64-bit integer")
        Topology(self.world, self.ppn)
        for name in self.algorithms:
            AlgorithmId(name, self.mode)
        CostParams().override(**self.cost)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def topology(self) -> Topology:
        return Topology(self.world, self.ppn)

    @property
    def params(self) -> CostParams:
        return CostParams().override(**self.cost)


def parse_synthetic(spec: str, topology: Topology, mode: str, seed: int) -> SddeInstance:
    """``KIND[:ARGS]`` where ARGS are comma-separated ``key=value`` (``seed``, ``deg``, ``count``, ``span``)."""
    kind, _, argstr = spec.partition(":")
    kw: dict = {"seed": seed}
    for item in filter(None, argstr.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            key, val = ("span", key) if key in ("next", "all") else ("seed", key)
        try:
            if key == "seed":
                kw["seed"] = int(val)
            elif key in ("deg", "degree"):
                kw["avg_degree"] = int(val)
            elif key == "count":
                kw["sendcount"] = int(val)
            elif key == "span":
                kw["span"] = val
            else:
                raise ValidationError(f"unknown synthetic argument {key!r}")
        except ValueError:
            raise ValidationError(f"bad value for {key}: {val!r}") from None
    if mode == "constant" and kind == "random":
        kw.setdefault("sendcount", 1)
    if kind not in SYNTHETIC_KINDS:
        raise ValidationError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    return generate_synthetic(kind, topology, **kw)


def load_instance(cfg: RunConfig) -> SddeInstance:
    if cfg.mtx is not None:
        try:
            matrix = parse_matrix_market(Path(cfg.mtx))
        except OSError as exc:
            raise ValidationError(f"cannot read {cfg.mtx}: {exc.strerror}") from None
        return instance_from_matrix(matrix, cfg.topology)
    return parse_synthetic(cfg.synthetic, cfg.topology, cfg.mode, cfg.seed)


def _run_one(cfg: RunConfig, instance: SddeInstance, name: str):
    res = run_instance(instance, name, cfg.mode, backend=cfg.backend, seed=cfg.seed,
                       fault_drop_send=cfg.fault_drop_send)
    report = model_time(res.trace, cfg.topology, cfg.params, algorithm=name, mode=cfg.mode, instance=instance)
    return res, report


def _write(cfg: RunConfig, text: str):
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(cfg: RunConfig) -> int:
    instance = load_instance(cfg)
    res, report = _run_one(cfg, instance, cfg.algorithms[0])
    if log.isEnabledFor(logging.DEBUG):
        for ev in res.trace:
            log.debug("%s", ev)
    if cfg.trace:
        Path(cfg.trace).write_text(res.trace.to_jsonl())
    _write(cfg, report.to_json() if cfg.format == "json" else report.to_csv())
    return EXIT_OK


COMPARE_COLUMNS = ["algorithm", "standard_max", "aggregated_max", "sent_inter", "sent_intra",
                   "bytes_total", "total_matches", "max_time"]


def _compare_row(report: RunReport) -> dict:
    return {
        "algorithm": report.algorithm,
        "standard_max": report.standard_max,
        "aggregated_max": report.aggregated_max,
        "sent_inter": report.sent_inter,
        "sent_intra": report.sent_intra,
        "bytes_total": report.bytes_total,
        "total_matches": report.total_matches,
        "max_time": report.max_time,
    }


def cmd_compare(cfg: RunConfig) -> int:
    if len(cfg.algorithms) < 2:
        raise ValidationError("compare needs at least two algorithms")
    instance = load_instance(cfg)
    reference = oracle_transpose(instance)
    reports = []
    for name in cfg.algorithms:
        res, report = _run_one(cfg, instance, name)
        diff = res.pattern.first_difference(reference)
        if diff is not None:
            rank, got, want = diff
            raise Mismatch(f"{name} diverges at rank {rank}: got {got}, expected {want}")
        reports.append(report)
    rows = [_compare_row(r) for r in reports]
    if cfg.format == "json":
        text = json.dumps({"patterns_equal": True, "rows": rows,
                           "reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"
    else:
        text = ",".join(COMPARE_COLUMNS) + "\n" + "".join(
            ",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in COMPARE_COLUMNS) + "\n"
            for row in rows)
    _write(cfg, text)
    if cfg.out:
        width = max(len(c) for c in COMPARE_COLUMNS)
        for row in rows:
            print("  ".join(f"{str(row[c]):>{width}}" for c in COMPARE_COLUMNS))
    return EXIT_OK


def _verify_instance(cfg: RunConfig, instance: SddeInstance, label: str) -> list[str]:
    reference = oracle_transpose(instance)
    problems = []
    for name in cfg.algorithms:
        res = run_instance(instance, name, cfg.mode, backend=cfg.backend, seed=cfg.seed,
                           fault_drop_send=cfg.fault_drop_send)
        diff = res.pattern.first_difference(reference)
        if diff is not None:
            rank, got, want = diff
            peer = got[0]
            problems.append(f"{label} {name}: rank {rank} send to {peer}: got {got[1]}, expected {want[1]}")
    return problems


def cmd_verify(cfg: RunConfig) -> int:
    problems = []
    if cfg.fuzz:
        rng = random.Random(cfg.seed)
        for k in range(cfg.fuzz):
            inst = random_instance(cfg.topology, rng, constant=cfg.mode == "constant")
            problems += _verify_instance(cfg, inst, f"fuzz[{k}]")
    else:
        problems += _verify_instance(cfg, load_instance(cfg), cfg.mtx or cfg.synthetic)
    if problems:
        for p in problems:
            print(p)
        return EXIT_MISMATCH
    print("OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--mtx", metavar="PATH", help="Matrix Market file, row-partitioned over the ranks")
    src.add_argument("--synthetic", metavar="KIND[:ARGS]",
                     help=f"one of {', '.join(SYNTHETIC_KINDS)}, e.g. random:seed=7,deg=3 or region-dense:all")
    common.add_argument("--world", type=int, help="number of simulated ranks")
    common.add_argument("--ppn", type=int, help="ranks per region")
    common.add_argument("--alg", help=f"comma-separated algorithms or 'all' ({', '.join(ALGORITHMS)})")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--backend", choices=BACKENDS)
    common.add_argument("--seed", type=int)
    common.add_argument("--cost", action="append", default=[], metavar="KEY=VALUE",
                        help="override a cost parameter, e.g. alpha_inter=1e-5")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--trace", metavar="PATH", help="write the event trace as JSON lines")
    common.add_argument("--fuzz", type=int, metavar="N")
    common.add_argument("--config", metavar="PATH", help="load a RunConfig JSON file; flags override it")
    common.add_argument("--save-config", metavar="PATH")
    common.add_argument("--fault-drop-send", action="store_true", help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="sdde", description="Sparse dynamic data exchange laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one algorithm and report")
    sub.add_parser("compare", parents=[common], help="run several algorithms and tabulate")
    sub.add_parser("verify", parents=[common], help="check algorithms against the sequential oracle")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_json(Path(args.config).read_text()) if args.config else RunConfig()
    if args.mtx is not None or args.synthetic is not None:
        cfg.mtx, cfg.synthetic = args.mtx, args.synthetic
    for name in ("world", "ppn", "mode", "backend", "seed", "out", "format", "trace", "fuzz"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    if args.fault_drop_send:
        cfg.fault_drop_send = True
    for item in args.cost:
        key, eq, val = item.partition("=")
        if not eq:
            raise ValidationError(f"--cost expects KEY=VALUE, got {item!r}")
        try:
            cfg.cost[key] = float(val)
        except ValueError:
            raise ValidationError(f"--cost {key}: not a number: {val!r}") from None
    if args.alg:
        names = [a.strip() for a in args.alg.split(",") if a.strip()]
        cfg.algorithms = list(applicable(cfg.mode)) if names == ["all"] else names
    elif args.command in ("compare", "verify") and not args.config:
        cfg.algorithms = list(applicable(cfg.mode))
    try:
        cfg.validate()
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    return cfg


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SDDE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.save_config:
            Path(args.save_config).write_text(cfg.to_json())
        return {"run": cmd_run, "compare": cmd_compare, "verify": cmd_verify}[args.command](cfg)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ProtocolError, DeadlockError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except Mismatch as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
