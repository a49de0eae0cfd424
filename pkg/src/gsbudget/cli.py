"""Command-line entry point: ``gsbudget {synth,compress,decompress,inspect,rd-sweep}``.

Exit codes: 0 success, 1 usage error, 2 best-effort (budget missed),
3 infeasible, 4 input/output error, 5 corrupt container.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys

import numpy as np

from . import codec
from .errors import (CorruptContainerError, InfeasibleError, InvalidInputError, MalformedInputError,
                     SchemaError)
from .model import format_schema, load_model, resolve_schema, save_model
from .search import DEFAULT_TAU_GRID, SearchConfig, emit_trace, run_search

EXIT_OK, EXIT_USAGE, EXIT_BEST_EFFORT, EXIT_INFEASIBLE, EXIT_IO, EXIT_CORRUPT = 0, 1, 2, 3, 4, 5

_UNITS = {"": 1, "B": 1, "KB": 10**3, "MB": 10**6, "GB": 10**9}
_BUDGET_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([KMG]?B?)\s*$", re.IGNORECASE)

log = logging.getLogger("gsbudget")


class UsageError(Exception):
    pass


def parse_budget(text) -> int:
    """``"30MB"`` -> 30_000_000; suffixes are decimal (KB = 1000 bytes)."""
    m = _BUDGET_RE.match(str(text))
    if not m:
        raise UsageError(f"cannot parse budget {text!r} (examples: 250000, 500KB, 1.5MB)")
    value = float(m.group(1)) * _UNITS[m.group(2).upper()]
    if value < 1:
        raise UsageError(f"budget must be at least one byte, got {text!r}")
    return int(round(value))


def parse_tau_grid(text) -> tuple:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise UsageError(f"cannot parse tau grid {text!r}") from None


def default_threads() -> int:
    env = os.environ.get("SIZEGS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _apply_threads(n: int):
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys are long flag names."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# parser ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _search_flags(p):
    p.add_argument("--schema", help="schema descriptor file, inline text or preset "
                   "(3dgs, 3dgs:<sh>, scaffold, 4dgs); default: <input>.schema")
    p.add_argument("--tau-grid", default=",".join(str(t) for t in DEFAULT_TAU_GRID),
                   help="comma-separated reserve ratios (default %(default)s)")
    p.add_argument("--blocks", type=int, default=30, help="blocks per channel (default %(default)s)")
    p.add_argument("--q-max", type=int, default=16, help="largest bit-width (default %(default)s)")
    p.add_argument("--norm", choices=["l1", "l2", "linf"], default="l2", help="group loss norm (default %(default)s)")
    p.add_argument("--tolerance", type=float, default=0.05, help="relative size tolerance (default %(default)s)")
    p.add_argument("--max-iters", type=int, default=8, help="inner iterations per tau (default %(default)s)")
    p.add_argument("--time-limit", type=float, default=50.0, help="solver seconds per call (default %(default)s)")
    p.add_argument("--coord-bits", type=int, default=16, help="coordinate grid bits per axis (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsbudget", description="Compress Gaussian splat models to a target file size.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (default: $SIZEGS_THREADS or all cores)")
    parser.add_argument("--config", help="key = value file supplying defaults for the subcommand's flags")
    parser.add_argument("-v", "--verbose", action="store_true", help="log search progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a seeded synthetic model (PLY + schema sidecar)")
    p.add_argument("output", help="output .ply path")
    p.add_argument("--points", type=int, default=10000, help="point count (default %(default)s)")
    p.add_argument("--channels", type=int, default=10, help="attribute channels (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default %(default)s)")
    p.add_argument("--clusters", type=int, default=12, help="position clusters (default %(default)s)")

    p = sub.add_parser("compress", help="search for a container that meets the size budget")
    p.add_argument("input", help="input .ply model")
    p.add_argument("-o", "--output", help="output container path (required)")
    p.add_argument("--budget", help="target size, e.g. 2MB, 750KB or plain bytes (required)")
    p.add_argument("--trace", help="trace CSV path (default <output>.trace.csv)")
    _search_flags(p)

    p = sub.add_parser("decompress", help="decode a container back to PLY")
    p.add_argument("input", help="container path")
    p.add_argument("-o", "--output", help="output .ply path (required)")
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")

    p = sub.add_parser("inspect", help="print header, section sizes and bit-width histograms")
    p.add_argument("input", help="container path")

    p = sub.add_parser("rd-sweep", help="run the search at several budgets and write a CSV report")
    p.add_argument("input", help="input .ply model")
    p.add_argument("-o", "--output", help="output CSV path (required)")
    p.add_argument("--budgets", help="comma-separated budgets, e.g. 1MB,2MB,4MB (required)")
    _search_flags(p)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions} | {"threads", "verbose"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        # config supplies defaults; flags given on the command line still win
        typed = {}
        for a in sub._actions + parser._actions:
            if a.dest in cfg:
                v = cfg[a.dest]
                if a.dest == "verbose":
                    v = v.lower() in ("1", "true", "yes", "on")
                elif a.type is not None:
                    try:
                        v = a.type(v)
                    except ValueError:
                        raise UsageError(f"config {a.dest}: invalid value {v!r}") from None
                if a.choices is not None and v not in a.choices:
                    raise UsageError(f"config {a.dest}: {v!r} not in {sorted(a.choices)}")
                typed[a.dest] = v
        sub.set_defaults(**{k: v for k, v in typed.items() if k not in ("threads", "verbose")})
        parser.set_defaults(**{k: v for k, v in typed.items() if k in ("threads", "verbose")})
        args = parser.parse_args(argv)
    return args


# commands -------------------------------------------------------------------------

def _out(msg=""):
    print(msg, file=sys.stdout)


def _check_input(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input not found: {path}")


def _check_output_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise FileNotFoundError(f"output directory does not exist: {d}")


def _load_input(args):
    _check_input(args.input)
    spec = args.schema
    if spec is None:
        side = os.path.splitext(args.input)[0] + ".schema"
        if not os.path.isfile(side):
            raise UsageError(f"no --schema given and no sidecar {side}")
        spec = side
    return load_model(args.input, resolve_schema(spec))


def _config(args, budget) -> SearchConfig:
    return SearchConfig(
        budget=budget,
        tau_grid=parse_tau_grid(args.tau_grid),
        tolerance=args.tolerance,
        max_inner_iters=args.max_iters,
        norm=args.norm,
        blocks=args.blocks,
        q_max=args.q_max,
        coord_bits=args.coord_bits,
        time_limit=args.time_limit,
        threads=args.threads,
    )


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"{args.command}: --{name} is required")


def cmd_synth(args) -> int:
    from .synth import synthetic_model

    _check_output_dir(args.output)
    model = synthetic_model(args.points, args.channels, args.seed, args.clusters)
    save_model(model, args.output)
    side = os.path.splitext(args.output)[0] + ".schema"
    with open(side, "w", encoding="utf-8") as fh:
        fh.write(format_schema(model.schema))
    _out(f"wrote {args.output} ({model.n_points} points, {model.n_channels} channels) and {side}")
    return EXIT_OK


def _channel_names(schema):
    names = []
    for g in schema:
        names.extend(g.columns())
    return names


def cmd_compress(args) -> int:
    _require(args, "output", "budget")
    budget = parse_budget(args.budget)
    _check_output_dir(args.output)
    trace_path = args.trace or args.output + ".trace.csv"
    _check_output_dir(trace_path)
    model = _load_input(args)
    cfg = _config(args, budget)
    outcome = run_search(model, cfg)
    with open(args.output, "wb") as fh:
        fh.write(outcome.container)
    emit_trace(outcome, trace_path)

    rel = outcome.relative_error(budget)
    _out(f"target      {budget} bytes")
    _out(f"achieved    {outcome.achieved_size} bytes (relative error {rel:.4f})")
    _out(f"tau*        {outcome.tau_star:g} ({outcome.n_kept} of {model.n_points} points kept)")
    _out(f"loss        {outcome.total_loss:.6g} total, {outcome.per_point_loss:.6g} per point ({cfg.norm})")
    _out(f"solver      {outcome.status.value}, {len(outcome.trace)} inner iterations")
    _out("mean bits per channel:")
    mean_bits = outcome.assignment.mean(axis=1)
    for name, b in zip(_channel_names(model.schema), mean_bits):
        _out(f"  {name:<12} {b:5.2f}")
    _out(f"wrote {args.output} and {trace_path}")
    if outcome.best_effort:
        _out(f"best effort: no tau met the {cfg.tolerance:g} tolerance")
        return EXIT_BEST_EFFORT
    return EXIT_OK


def cmd_decompress(args) -> int:
    _require(args, "output")
    _check_input(args.input)
    _check_output_dir(args.output)
    model, bits, diag = codec.decode_container(args.input)
    save_model(model, args.output, text=args.ascii)
    _out(f"wrote {args.output} ({model.n_points} points, {model.n_channels} channels)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _check_input(args.input)
    model, bits, diag = codec.decode_container(args.input)
    h = diag.header
    _out(f"file        {args.input} ({diag.file_size} bytes)")
    _out(f"version     {h.version}")
    _out(f"points      {h.point_count}")
    _out(f"groups      {h.channels} channels x {h.blocks} blocks")
    _out(f"coord bits  {h.coord_bits}")
    _out(f"norm        {h.norm.value}")
    _out(f"schema      {h.schema_digest.hex()}")
    _out("sections:")
    _out(f"  {'header':<12} {codec.HEADER_SIZE}")
    for name, size in diag.section_sizes.items():
        _out(f"  {name:<12} {size}")
    _out(f"  {'total':<12} {codec.HEADER_SIZE + sum(diag.section_sizes.values())}")
    q_hi = max(16, int(bits.max()))
    _out("bit-width histogram per channel (columns 1..%d):" % q_hi)
    for name, row in zip(_channel_names(model.schema), bits):
        hist = np.bincount(row, minlength=q_hi + 1)[1:]
        _out(f"  {name:<12} " + " ".join(f"{c:3d}" for c in hist))
    n_groups = bits.size
    _out("group metadata:")
    _out(f"  constant groups  {int(diag.constant.sum())} of {n_groups}")
    _out(f"  stored packed    {int(diag.stored_packed.sum())} of {n_groups}")
    s = diag.scales[~diag.constant]
    if s.size:
        _out(f"  scale range      {s.min():.4g} .. {s.max():.4g}")
    payload = int((diag.group_symbols * bits).sum())
    _out(f"  payload bits     {payload} ({-(-payload // 8)} bytes packed, {int(diag.group_bytes.sum())} coded)")
    return EXIT_OK


RD_FIELDS = ("budget", "achieved_size", "relative_error", "tau", "best_effort", "norm",
             "loss_l1", "loss_l2", "loss_linf", "mse")


def cmd_rd_sweep(args) -> int:
    _require(args, "output", "budgets")
    budgets = [parse_budget(b) for b in str(args.budgets).split(",") if b.strip()]
    if not budgets:
        raise UsageError("--budgets is empty")
    _check_output_dir(args.output)
    model = _load_input(args)
    worst = EXIT_OK
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RD_FIELDS)
        fh.flush()
        for budget in budgets:
            try:
                out = run_search(model, _config(args, budget))
            except InfeasibleError as exc:
                log.error("budget %d: %s", budget, exc)
                w.writerow([budget, "", "", "", "", args.norm, "", "", "", ""])
                fh.flush()
                worst = max(worst, EXIT_INFEASIBLE)
                continue
            m = out.prepared.metrics(out.assignment)
            w.writerow([budget, out.achieved_size, f"{out.relative_error(budget):.6f}", out.tau_star,
                        int(out.best_effort), args.norm, repr(m["l1"]), repr(m["l2"]), repr(m["linf"]),
                        repr(m["mse"])])
            fh.flush()
            _out(f"budget {budget}: achieved {out.achieved_size}, tau* {out.tau_star:g}, mse {m['mse']:.6g}")
            if out.best_effort:
                worst = max(worst, EXIT_BEST_EFFORT)
    _out(f"wrote {args.output}")
    return worst


COMMANDS = {
    "synth": cmd_synth,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "inspect": cmd_inspect,
    "rd-sweep": cmd_rd_sweep,
}

STAGES = {
    "synth": "synthesis",
    "compress": "search",
    "decompress": "decoding",
    "inspect": "decoding",
    "rd-sweep": "search",
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    _apply_threads(args.threads)
    stage = STAGES[args.command]
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible ({stage}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CorruptContainerError as exc:
        print(f"corrupt container ({stage}): {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (MalformedInputError, SchemaError) as exc:
        print(f"input error (loading): {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error ({stage}): {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidInputError as exc:
        print(f"error ({stage}): {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
