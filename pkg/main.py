import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import yaml

import analysis
from chief import ChopSpec, EchelonOutput, SingularMatrixError, echelonize, invert, verify
from field import FieldError, parse_field
from jobs import DEFAULT_ECH_THRESHOLD
from matrix import (
    GFMAT_HEADER, FormatError, IndexSet, Matrix, MatrixError, format_field_line, format_matrix,
    parse_field_line, parse_matrix,
    random_matrix, read_matrix, well_conditioned_matrix, write_matrix,
)
from monitor import Monitor
from scheduler import TaskFailure

logger = logging.getLogger(__name__)

COMMANDS = ("ech", "verify", "rank", "bench", "analyze", "invert")
GFTRANS_HEADER = "GFTRANS v1"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_TASK_FAILED = 3


def load_config(path="config.yaml"):
    if not Path(path).exists():
        return {}
    with open(path, "r") as f:
        return yaml.safe_load(f) or {}


@dataclass
class RunConfig:
    command: str
    input: str = None
    out_r: str = None
    out_t: str = None
    out_selects: str = None
    block: int = 256
    threads: tuple = (1,)
    with_transform: bool = True
    seed: int = 1
    trace: str = None
    ech_threshold: int = DEFAULT_ECH_THRESHOLD
    field_name: str = "2"
    modulus: str = None
    size: int = 512
    a: int = 4
    b: int = None
    alpha: int = 100
    mode: str = "well_conditioned"
    shrink_ends: bool = False
    well_conditioned: bool = False
    log_level: str = "INFO"
    log_file: str = None
    monitor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command '{self.command}'")
        if self.block < 1:
            raise ValueError(f"block must be >= 1, got {self.block}")
        if not self.threads or min(self.threads) < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.ech_threshold < 1:
            raise ValueError(f"ech threshold must be >= 1, got {self.ech_threshold}")
        if self.command != "bench" and len(self.threads) > 1:
            raise ValueError(f"Command {self.command} takes a single thread count, got {self.threads}")
        if self.command == "ech" and self.out_t and not self.with_transform:
            raise ValueError("--out-t cannot be written by a run without transformation")


def _threads(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(x) for x in value)
    return tuple(int(x) for x in str(value).split(","))


def _pick(*values):
    for v in values:
        if v is not None:
            return v
    return None


def build_run_config(args, config) -> RunConfig:
    run = config.get('run', {}) or {}
    fld = config.get('field', {}) or {}
    bench = config.get('bench', {}) or {}
    analyze = config.get('analyze', {}) or {}
    mon = dict(config.get('monitor', {}) or {})

    yaml_field = None
    if fld.get('p'):
        yaml_field = f"{fld['p']}^{fld.get('k', 1)}"
    yaml_modulus = fld.get('modulus')
    if isinstance(yaml_modulus, (list, tuple)):
        yaml_modulus = ",".join(str(c) for c in yaml_modulus)

    if args.command == "bench":
        threads = _pick(args.threads, bench.get('threads'), run.get('threads'), 1)
    else:
        threads = _pick(args.threads, run.get('threads'), 1)

    with_transform = run.get('with_transform', True)
    if args.no_transform:
        with_transform = False

    log_level = _pick(args.log_level, mon.get('log_level'), "INFO")
    mon['log_level'] = log_level
    mon['trace'] = _pick(args.trace, mon.get('trace'))

    return RunConfig(
        command=args.command,
        input=args.input,
        out_r=args.out_r,
        out_t=args.out_t,
        out_selects=args.out_selects,
        block=int(_pick(args.block, run.get('block'), 256)),
        threads=_threads(threads),
        with_transform=bool(with_transform),
        seed=int(_pick(args.seed, run.get('seed'), 1)),
        trace=mon['trace'],
        ech_threshold=int(_pick(args.ech_threshold, run.get('ech_threshold'), DEFAULT_ECH_THRESHOLD)),
        field_name=str(_pick(args.field, bench.get('field'), yaml_field, "2")),
        modulus=_pick(args.modulus, yaml_modulus),
        size=int(_pick(args.size, bench.get('size'), 512)),
        a=int(_pick(args.a, analyze.get('a'), 4)),
        b=_pick(args.b, analyze.get('b')),
        alpha=int(_pick(args.alpha, analyze.get('alpha'), 100)),
        mode=str(_pick(args.mode, analyze.get('mode'), "well_conditioned")),
        shrink_ends=bool(args.shrink_ends or run.get('shrink_ends', False)),
        well_conditioned=bool(args.well_conditioned or bench.get('well_conditioned', False)),
        log_level=log_level,
        log_file=mon.get('log_file'),
        monitor=mon,
    )


# --- transformation and selects files ---

def _block_lines(tag: str, coords: str, m: Matrix) -> list:
    lines = [f"{tag} {coords} rows={m.n_rows} cols={m.n_cols}"]
    lines.extend(" ".join(str(x) for x in row) for row in m.data.tolist())
    return lines


def format_transform(out: EchelonOutput) -> str:
    lines = [GFTRANS_HEADER, format_field_line(out.spec), f"grid a={out.chop.a} b={out.chop.b}"]
    for (j, h), m in sorted(out.T_M_blocks.items()):
        lines.extend(_block_lines("M", f"j={j} h={h}", m))
    for (i, h), m in sorted(out.T_K_blocks.items()):
        lines.extend(_block_lines("K", f"i={i} h={h}", m))
    return "\n".join(lines) + "\n"


def parse_transform(text: str):
    """Returns (spec, M blocks, K blocks) of a GFTRANS v1 document."""
    lines = [ln.strip() for ln in text.splitlines()]
    if len(lines) < 3 or lines[0] != GFTRANS_HEADER:
        raise FormatError(f"Missing '{GFTRANS_HEADER}' header")
    spec = parse_field_line(lines[1])
    blocks = {"M": {}, "K": {}}
    pos = 3
    while pos < len(lines):
        if not lines[pos]:
            pos += 1
            continue
        parts = lines[pos].split()
        try:
            tag = parts[0]
            keys = dict(p.split("=", 1) for p in parts[1:])
            first, second = int(keys.get("j", keys.get("i"))), int(keys["h"])
            n_rows, n_cols = int(keys["rows"]), int(keys["cols"])
        except (IndexError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Bad block header '{lines[pos]}'") from e
        if tag not in blocks:
            raise FormatError(f"Unknown block tag '{tag}'")
        body = lines[pos + 1:pos + 1 + n_rows]
        if len(body) < n_rows and n_cols == 0:
            body += [""] * (n_rows - len(body))
        doc = "\n".join([GFMAT_HEADER, lines[1], f"rows={n_rows} cols={n_cols}", *body]) + "\n"
        blocks[tag][(first, second)] = parse_matrix(doc)
        pos += 1 + n_rows
    return spec, blocks["M"], blocks["K"]


def selects_document(out: EchelonOutput) -> dict:
    return {
        'rank': out.rank,
        'rows': out.shape[0],
        'cols': out.shape[1],
        'row_cuts': list(out.chop.row_cuts),
        'col_cuts': list(out.chop.col_cuts),
        'varrho_blocks': [list(s.members) for s in out.varrho_blocks],
        'upsilon_blocks': [list(s.members) for s in out.upsilon_blocks],
        'varrho': list(out.varrho.members),
        'upsilon': list(out.upsilon.members),
    }


def load_output(R: Matrix, selects: dict, transform=None) -> EchelonOutput:
    """Rebuild an EchelonOutput from the R file, the selects file and optionally the T file."""
    try:
        chop_spec = ChopSpec(tuple(selects['row_cuts']), tuple(selects['col_cuts']))
        varrho_blocks = [IndexSet(c, tuple(s)) for c, s in zip(chop_spec.row_cuts, selects['varrho_blocks'])]
        upsilon_blocks = [IndexSet(c, tuple(s)) for c, s in zip(chop_spec.col_cuts, selects['upsilon_blocks'])]
        shape = (int(selects['rows']), int(selects['cols']))
        rank = int(selects['rank'])
    except (KeyError, TypeError) as e:
        raise FormatError(f"Malformed selects document: {e}") from e
    if len(varrho_blocks) != len(chop_spec.row_cuts) or len(upsilon_blocks) != len(chop_spec.col_cuts):
        raise FormatError("Selects document has one index set per block row and block column")

    R_blocks = {}
    widths = [c - len(u) for c, u in zip(chop_spec.col_cuts, upsilon_blocks)]
    heights = [len(u) for u in upsilon_blocks]
    if R.shape != (sum(heights), sum(widths)):
        raise FormatError(f"R has shape {R.shape}, selects imply {(sum(heights), sum(widths))}")
    row0 = 0
    for j, hgt in enumerate(heights):
        col0 = sum(widths[:j])
        for l in range(j, len(widths)):
            R_blocks[(j, l)] = Matrix(R.spec, R.data[row0:row0 + hgt, col0:col0 + widths[l]])
            col0 += widths[l]
        row0 += hgt

    T_M = T_K = None
    if transform is not None:
        _, T_M, T_K = transform
    out = EchelonOutput(R.spec, shape, chop_spec, R_blocks, T_M, T_K,
                        varrho_blocks, upsilon_blocks, rank)
    for key, derived in (("varrho", out.varrho), ("upsilon", out.upsilon)):
        if key in selects and list(selects[key]) != list(derived.members):
            raise FormatError(f"Selects entry '{key}' disagrees with its per-block sets")
    return out


# --- commands ---

def _require(cfg: RunConfig, *names):
    flags = {"input": "--in", "out_r": "--out-r", "out_selects": "--out-selects"}
    missing = [flags[n] for n in names if not getattr(cfg, n)]
    if missing:
        raise ValueError(f"Command {cfg.command} needs {', '.join(missing)}")


def cmd_ech(cfg: RunConfig, monitor: Monitor) -> int:
    _require(cfg, "input")
    C = read_matrix(cfg.input)
    out = echelonize(C, cfg.block, cfg.threads[0], cfg.with_transform,
                     cfg.ech_threshold, cfg.shrink_ends)
    if cfg.out_r:
        write_matrix(cfg.out_r, out.dense_R())
    if cfg.out_t:
        Path(cfg.out_t).write_text(format_transform(out))
    if cfg.out_selects:
        with open(cfg.out_selects, "w") as f:
            yaml.safe_dump(selects_document(out), f, sort_keys=False)
    monitor.write_trace(out.report.trace)
    monitor.send_summary(out)
    print(f"rank {out.rank}")
    return EXIT_OK


def cmd_rank(cfg: RunConfig, monitor: Monitor) -> int:
    _require(cfg, "input")
    C = read_matrix(cfg.input)
    out = echelonize(C, cfg.block, cfg.threads[0], False, cfg.ech_threshold, cfg.shrink_ends)
    monitor.write_trace(out.report.trace)
    print(out.rank)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, monitor: Monitor) -> int:
    _require(cfg, "input", "out_r", "out_selects")
    C = read_matrix(cfg.input)
    R = read_matrix(cfg.out_r)
    with open(cfg.out_selects) as f:
        selects = yaml.safe_load(f)
    transform = parse_transform(Path(cfg.out_t).read_text()) if cfg.out_t else None
    if R.spec != C.spec or (transform is not None and transform[0] != C.spec):
        raise FormatError(f"Field headers disagree: matrix over {C.spec}, outputs over {R.spec}")
    result = verify(C, load_output(R, selects, transform))
    print("ok" if result else f"FAILED: {result.message}")
    return EXIT_OK if result else EXIT_VERIFY_FAILED


def cmd_bench(cfg: RunConfig, monitor: Monitor) -> int:
    spec = parse_field(cfg.field_name, cfg.modulus)
    n = cfg.size
    if cfg.well_conditioned:
        C = well_conditioned_matrix(spec, n, cfg.seed)
    else:
        C = random_matrix(spec, n, n, cfg.seed)
    rows = []
    base = None
    for threads in cfg.threads:
        start = time.perf_counter()
        out = echelonize(C, cfg.block, threads, cfg.with_transform, cfg.ech_threshold, cfg.shrink_ends)
        wall = time.perf_counter() - start
        base = base or wall
        rows.append({
            'size': n, 'field': str(spec), 'block': cfg.block, 'threads': threads,
            'rank': out.rank, 'wall_s': round(wall, 4),
            'speedup': round(base / wall, 3) if wall else 1.0,
            'peak_live_bytes': out.report.peak_live_bytes,
        })
        monitor.send_summary(out, label=f"bench t={threads}")
    monitor.write_trace(out.report.trace)
    print(pd.DataFrame(rows).to_string(index=False))
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, monitor: Monitor) -> int:
    b = int(cfg.b) if cfg.b is not None else cfg.a
    table = analysis.report(cfg.a, b, cfg.alpha, cfg.mode)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_invert(cfg: RunConfig, monitor: Monitor) -> int:
    _require(cfg, "input")
    C = read_matrix(cfg.input)
    try:
        inv = invert(C, cfg.block, cfg.threads[0], threshold=cfg.ech_threshold, shrink_ends=cfg.shrink_ends)
    except SingularMatrixError as e:
        print(f"singular: {e}")
        return EXIT_VERIFY_FAILED
    if cfg.out_r:
        write_matrix(cfg.out_r, inv)
    else:
        print(format_matrix(inv), end="")
    return EXIT_OK


HANDLERS = {
    "ech": cmd_ech,
    "verify": cmd_verify,
    "rank": cmd_rank,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
    "invert": cmd_invert,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Blocked parallel echelonisation over finite fields")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--in", dest="input")
    parser.add_argument("--out-r")
    parser.add_argument("--out-t")
    parser.add_argument("--out-selects")
    parser.add_argument("--block", type=int)
    parser.add_argument("--threads")
    parser.add_argument("--no-transform", action="store_true")
    parser.add_argument("--trace")
    parser.add_argument("--ech-threshold", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--size", type=int)
    parser.add_argument("--field")
    parser.add_argument("--modulus")
    parser.add_argument("--a", type=int)
    parser.add_argument("--b", type=int)
    parser.add_argument("--alpha", type=int)
    parser.add_argument("--mode", choices=analysis.MODES[:2])
    parser.add_argument("--config", default="config.yaml")
    parser.add_argument("--shrink-ends", action="store_true")
    parser.add_argument("--well-conditioned", action="store_true")
    parser.add_argument("--log-level")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        cfg = build_run_config(args, config)
    except (ValueError, yaml.YAMLError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    monitor = Monitor(cfg.monitor)
    logger.info(f"Command {cfg.command} with block {cfg.block}, threads {cfg.threads}")

    try:
        return HANDLERS[cfg.command](cfg, monitor)
    except TaskFailure as e:
        logger.error(f"Run aborted: {e}")
        return EXIT_TASK_FAILED
    except (FormatError, FieldError, MatrixError, OSError, ValueError) as e:
        logger.error(f"Bad input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
