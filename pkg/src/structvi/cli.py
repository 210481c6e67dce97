"""Command-line entry point: generate, exact, fit, benchmark, plot.

Exit codes: 0 success, 1 usage error, 2 data error. Every written output
gets a ``<output>.manifest.json`` with the argv, tool version and input and
output digests, which is enough to regenerate the output byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .model import StructuralError

log = logging.getLogger("structvi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(path, argv, args, inputs=(), outputs=()) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    data = {
        "tool": "structvi",
        "version": __version__,
        "model_format": _format_version(),
        "subcommand": args.command,
        "argv": list(argv),
        "flags": flags,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": {str(p): _digest(p) for p in outputs},
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, default=str)
        fh.write("\n")


def _format_version() -> int:
    from .io import MODEL_FORMAT_VERSION
    return MODEL_FORMAT_VERSION


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _int_list(text: str) -> list[int]:
    """``"2..7"`` or ``"3,4"`` (or a mix: ``"2..4,7"``)."""
    out = []
    try:
        for part in filter(None, text.split(",")):
            if ".." in part:
                a, b = part.split("..")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _methods(text: str) -> list[tuple[str, int]]:
    """``"mixture:1,vertical:2"``."""
    from .bench import METHODS
    out = []
    for part in filter(None, text.split(",")):
        name, _, variant = part.partition(":")
        if name not in METHODS or not variant.isdigit() or int(variant) < 1:
            raise argparse.ArgumentTypeError(f"bad method {part!r} (want e.g. vertical:2)")
        out.append((name, int(variant)))
    return out


def _load(args):
    from .io import load_model, parse_evidence
    model, ev = load_model(args.model)
    if args.evidence is not None:
        ev = parse_evidence(args.evidence, model)
    return model, ev


# -- subcommands ------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    from .bench import DbnConfig, generate_dbn
    from .io import save_model
    model, ev = generate_dbn(DbnConfig(args.slices, args.vars, args.seed))
    save_model(model, ev, args.out)
    _manifest(f"{args.out}.manifest.json", argv, args, outputs=[args.out])
    return 0


def cmd_exact(args, argv) -> int:
    from .exact import log_evidence, marginal
    model, ev = _load(args)
    print(f"log_evidence {_g17(log_evidence(model, ev))}")
    for name in args.marginal or []:
        try:
            v = model.id_of(name)
        except KeyError:
            raise StructuralError(f"unknown variable {name!r}") from None
        m = marginal(model, [v], ev)
        print(f"marginal {name} " + " ".join(_g17(x) for x in m.values))
    return 0


def cmd_fit(args, argv) -> int:
    from .bn import fit
    from .cg import fit_cg
    from .hidden import fit_hidden, mixture_mean_field
    from .io import load_structure, result_to_dict, save_json
    from .structure import OptimizerOptions, Structure
    if args.mixture is not None and args.method != "hidden":
        raise UsageError("fit: --mixture requires --method hidden")
    if args.mixture is not None and args.q_structure is not None:
        raise UsageError("fit: --mixture and --q-structure are exclusive")
    if args.method == "hidden" and args.mixture is None and args.q_structure is None:
        raise UsageError("fit: --method hidden needs --q-structure or --mixture")
    if args.method == "cg" and args.q_structure is None:
        raise UsageError("fit: --method cg needs --q-structure")
    model, ev = _load(args)
    try:
        opts = OptimizerOptions(max_sweeps=args.sweeps, restarts=args.restarts, tol=args.tol,
                                seed=args.seed, damping=args.damping, extrapolate=args.extrapolate)
    except ValueError as e:
        raise UsageError(f"fit: {e}") from None
    inputs = [args.model]
    if args.q_structure is not None:
        structure = load_structure(args.q_structure, model, ev)
        inputs.append(args.q_structure)
    elif args.mixture is not None:
        structure = mixture_mean_field(model.unobserved(ev), args.mixture)
    else:
        structure = Structure.mean_field(model.unobserved(ev))
    run = {"bn": fit, "cg": fit_cg, "hidden": fit_hidden}[args.method]
    res = run(model, ev, structure, opts)
    for f in res.flags:
        log.warning("%s", f)
    out = result_to_dict(args.method, res, model)
    if args.out is None:
        json.dump(out, sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        save_json(out, args.out)
        _manifest(f"{args.out}.manifest.json", argv, args, inputs, [args.out])
    return 0


def cmd_benchmark(args, argv) -> int:
    from .bench import DEFAULT_METHODS, BenchmarkConfig, run_benchmark, write_csv
    from .structure import OptimizerOptions
    try:
        bc = BenchmarkConfig(
            slices=tuple(args.slices), vars_per_slice=tuple(args.vars),
            methods=tuple(args.methods or DEFAULT_METHODS), nets_per_cell=args.nets,
            opts=OptimizerOptions(max_sweeps=args.sweeps, restarts=args.restarts, tol=args.tol,
                                  trace="sweep"),
            seed=args.seed, timing=args.timing)
    except ValueError as e:
        raise UsageError(f"benchmark: {e}") from None
    records = run_benchmark(bc, jobs=args.jobs)
    write_csv(records, args.out)
    _manifest(f"{args.out}.manifest.json", argv, args, outputs=[args.out])
    return 0


def cmd_plot(args, argv) -> int:
    from .bench import plot_summary, read_csv, summarize
    try:
        records = read_csv(args.results)
    except (KeyError, ValueError) as e:
        raise StructuralError(f"{args.results}: malformed results file ({e})") from None
    if not records:
        raise StructuralError(f"{args.results}: no records")
    paths = plot_summary(summarize(records), args.out)
    _manifest(Path(args.out) / "plot.manifest.json", argv, args, [args.results], paths)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="structvi", description="Structured variational approximation toolkit.")
    p.add_argument("--version", action="version",
                   version=f"structvi {__version__} (model format {_format_version()})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic DBN model file")
    g.add_argument("--slices", type=int, required=True)
    g.add_argument("--vars", type=int, default=3, help="chain variables per slice")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("exact", help="exact log-evidence and marginals")
    e.add_argument("--model", required=True)
    e.add_argument("--evidence", help="NAME=STATE,... (overrides the file's evidence)")
    e.add_argument("--marginal", action="append", metavar="NAME")
    e.set_defaults(func=cmd_exact)

    f = sub.add_parser("fit", help="fit a variational approximation")
    f.add_argument("--model", required=True)
    f.add_argument("--evidence")
    f.add_argument("--q-structure", dest="q_structure")
    f.add_argument("--method", choices=("bn", "cg", "hidden"), default="bn")
    f.add_argument("--mixture", type=int, metavar="K")
    f.add_argument("--sweeps", type=int, default=10)
    f.add_argument("--restarts", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--damping", type=float, default=1.0)
    f.add_argument("--extrapolate", type=int, default=5, metavar="SWEEPS",
                   help="sweeps between joint extrapolation steps for cg (0 disables)")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("benchmark", help="run the synthetic DBN comparison")
    b.add_argument("--slices", type=_int_list, default=list(range(2, 8)))
    b.add_argument("--vars", type=_int_list, default=[3, 4])
    b.add_argument("--methods", type=_methods)
    b.add_argument("--nets", type=int, default=20)
    b.add_argument("--restarts", type=int, default=10)
    b.add_argument("--sweeps", type=int, default=10)
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--timing", action="store_true", help="fill wall_ms (makes output run-dependent)")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)

    pl = sub.add_parser("plot", help="plot benchmark results as SVG")
    pl.add_argument("--results", required=True)
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    from .io import DataError
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (DataError, StructuralError, OSError, ValueError) as e:
        print(f"structvi: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
