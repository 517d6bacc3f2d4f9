"""Command-line entry point: ``faultbands <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import __version__


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; keep that, but print the full usage
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _split_ids(values: list[str]) -> list[str]:
    out = []
    for v in values:
        out += [x for x in v.replace(",", " ").split() if x]
    return out


def cmd_simulate(args) -> int:
    from .cli_io import parse_config, resolve_output_dir, write_outputs
    from .metrics import compute_history
    from .solver import run_simulation

    rc = parse_config(args.config)
    out = resolve_output_dir(args.out, rc)
    t0 = time.time()

    def progress(k, step, diag):
        if args.verbose:
            print(f"step {step.name:>8}  iterations {diag.iterations:2d}  slip {diag.n_slip:5d}  open {diag.n_open:3d}", file=sys.stderr)

    result = run_simulation(rc.simulation, progress=progress)
    hist = compute_history(result)
    manifest = write_outputs(result, out, history=hist, run_config=rc)
    print(f"scenario {rc.simulation.name} ({rc.simulation.fluid.value}): {len(result.records)} steps in {time.time() - t0:.1f} s")
    for f, rows in hist.table.items():
        act = hist.first_activation[f]
        print(
            f"  {f}: chi_max {max(m.chi_max for m in rows):.3f}  delta_max {rows[-1].delta_max * 100:.3f} cm  "
            f"first activation {'-' if act is None else f'{act:g}'}"
        )
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    return 0


def cmd_scenarios_list(args) -> int:
    from .scenarios import catalog

    for s in catalog():
        print(f"{s.id:<4} stage {s.stage}  {s.description}")
    return 0


def cmd_scenarios_run(args) -> int:
    from .cli_io import parse_config, resolve_output_dir
    from .scenarios import catalog_ids, get_spec, run_batch, write_batch
    from .solver import SimulationConfig

    ids = _split_ids(args.ids)
    if ids == ["all"]:
        ids = catalog_ids()
    ids = [get_spec(i).id for i in ids]
    fluids = [f.upper() for f in _split_ids(args.fluid)]
    base = parse_config(args.config).simulation if args.config else SimulationConfig()
    out = resolve_output_dir(args.out)
    batch = run_batch(ids, fluids, parallelism=args.jobs, base=base, out_dir=out)
    written = write_batch(batch, out, base.resolution)
    for r in batch.runs:
        print(f"{r.scenario:<4} {r.fluid:<4} {'ok' if r.error is None else 'FAILED: ' + r.error}")
    print(f"wrote {len(written)} batch files to {out}")
    return 1 if batch.failures else 0


def cmd_rank(args) -> int:
    from .scenarios import merge_pair, rank, ranking_csv, read_records_csv

    path = os.path.join(args.batch_dir, "ranking_records.csv")
    try:
        with open(path, encoding="utf-8") as fh:
            records = read_records_csv(fh.read())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from None
    fault = args.fault.upper()
    recs = [r for r in records if r.fault == fault and (args.fluid is None or r.fluid == args.fluid.upper())]
    if not recs:
        raise ValueError(f"no records for fault {fault} in {path}")
    if not args.no_merge:
        recs = merge_pair(recs)
    text = ranking_csv(rank(recs))
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return 0


def cmd_bandwidth(args) -> int:
    from .bandwidth import advice_csv, advise, parse_input

    with open(args.input, encoding="utf-8") as fh:
        inp = parse_input(fh.read())
    advice = advise(inp)
    sys.stdout.write(advice.report())
    sys.stdout.write("\n" + advice_csv(advice))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(advice_csv(advice))
    return 0


def cmd_mesh_info(args) -> int:
    from .cli_io import parse_config
    from .solver import prepare

    rc = parse_config(args.config)
    mesh, _, schedule = prepare(rc.simulation)
    s = mesh.summary()
    print(f"nodes {s['nodes']}")
    print(f"hexahedra {s['hexahedra']}")
    print(f"interface elements {s['interface_elements']}")
    for f, n in s["per_fault"].items():
        print(f"  {f}: {n}")
    print("grid cells {} x {} x {}".format(*s["grid_cells"]))
    print(f"loading steps {len(schedule)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="faultbands", description="Fault reactivation screening for depleted-reservoir gas storage.")
    p.add_argument("--version", action="version", version=f"faultbands {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one configuration and write its outputs")
    s.add_argument("config", help="run configuration file")
    s.add_argument("--out", help="output directory (default: config output_dir, $FAULTBANDS_OUT, ./faultbands_out)")
    s.add_argument("-v", "--verbose", action="store_true", help="print per-step solver progress")
    s.set_defaults(func=cmd_simulate)

    sc = sub.add_parser("scenarios", help="list or run catalog scenarios")
    scs = sc.add_subparsers(dest="action", parser_class=_Parser)
    l = scs.add_parser("list", help="print the scenario catalog")
    l.set_defaults(func=cmd_scenarios_list)
    r = scs.add_parser("run", help="run scenarios and write a batch directory")
    r.add_argument("ids", nargs="+", help="scenario ids (space or comma separated) or 'all'")
    r.add_argument("--fluid", nargs="+", default=["CH4"], help="fluid kinds: CH4 CO2 N2 H2")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs")
    r.add_argument("--config", help="base configuration (mesh, solver, materials)")
    r.add_argument("--out", help="batch directory")
    r.set_defaults(func=cmd_scenarios_run)

    k = sub.add_parser("rank", help="rank the runs of a batch directory for one fault")
    k.add_argument("batch_dir")
    k.add_argument("--fault", required=True, help="F1..F5")
    k.add_argument("--fluid", help="restrict to one fluid")
    k.add_argument("--no-merge", action="store_true", help="keep 2a and 2b as separate rows")
    k.add_argument("--out", help="also write the ranking CSV here")
    k.set_defaults(func=cmd_rank)

    b = sub.add_parser("bandwidth", help="recommend a storage pressure bandwidth")
    b.add_argument("input", help="bandwidth input file (pressures in MPa)")
    b.add_argument("--csv", help="also write the CSV row here")
    b.set_defaults(func=cmd_bandwidth)

    m = sub.add_parser("mesh-info", help="print mesh statistics for a configuration")
    m.add_argument("config")
    m.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "func"):
        target = parser
        if args.command == "scenarios":
            target = parser._subparsers._group_actions[0].choices["scenarios"]
        target.print_usage(sys.stderr)
        print(f"{target.prog}: error: a subcommand is required", file=sys.stderr)
        return 2
    if getattr(args, "jobs", 1) < 1:
        print("faultbands: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"faultbands: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
