"""Command-line front end.

Subcommands: generate (mesh + coefficient files), partition (export the
hierarchy), solve (single run), sweep (parameter sweeps), analyze
(per-subdomain GEVP spectra), oracle (dense brute-force verification).
Exit status is nonzero whenever an invariant check fails or a run
errors out.
"""

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import MlsddError


def _add_common(p):
    p.add_argument("-c", "--config", default=None,
                   help="config file (key = value sections)")
    p.add_argument("-s", "--set", dest="overrides", action="append",
                   default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("-o", "--outdir", default=".",
                   help="directory for output files")


def _load(args):
    return harness.load_config(args.config, args.overrides)


def _outdir(args):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args):
    from .harness import build_problem
    from .mesh import save_cellwise_coefficients
    cfg = _load(args)
    out = _outdir(args)
    mesh, field = build_problem(cfg)
    coef_path = out / "coefficients.txt"
    save_cellwise_coefficients(field, coef_path)
    meta = mesh.metadata()
    meta["problem"] = cfg.problem
    meta["contrast"] = cfg.contrast
    with open(out / "mesh.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    harness.save_config(cfg, out / "config.ini")
    print(f"wrote {coef_path}, {out / 'mesh.json'}, {out / 'config.ini'}")
    return 0


def cmd_partition(args):
    from .harness import build_problem
    from .hierarchy import (build_hierarchy, export_fine_partition,
                            export_index_sets, export_summary)
    cfg = _load(args)
    out = _outdir(args)
    mesh, _ = build_problem(cfg)
    layers = cfg.overlap_layers(mesh)
    hier = build_hierarchy(mesh, list(cfg.subdomains), layers,
                           scheme=cfg.scheme)
    hier.validate()
    nl = hier.num_levels
    export_fine_partition(out / f"partition_level{nl}.txt", mesh,
                          hier.levels[nl].elem_sets)
    for l in range(nl - 1, 0, -1):
        export_index_sets(out / f"indexsets_level{l}.txt",
                          hier.levels[l].index_sets)
    export_summary(out / "hierarchy.json", hier)
    print(json.dumps(hier.summary(), indent=2, default=int))
    return 0


def cmd_solve(args):
    cfg = _load(args)
    out = _outdir(args)
    result = harness.run_experiment(cfg, keep_objects=True)
    row = result.row
    print(harness.format_table([row]))
    harness.rows_to_csv([row], out / "run.csv")
    harness.report_to_json(row, result.report, out / "run.json")
    if args.residuals:
        harness.residuals_to_csv(result.report, out / "residuals.csv")
    return 0 if row.converged else 1


def cmd_sweep(args):
    cfg = _load(args)
    out = _outdir(args)
    axes = []
    for text in args.axis:
        if "=" not in text:
            raise MlsddError(f"axis {text!r} is not name=v1,v2,...")
        name, raw = text.split("=", 1)
        name = name.strip()
        values = []
        for tok in raw.split(","):
            values.append(harness._convert(name, tok))
        axes.append((name, values))
    rows = harness.sweep(cfg, axes, paired=args.paired)
    print(harness.format_table(rows))
    harness.rows_to_csv(rows, out / "sweep.csv")
    return 0 if all(not r.error for r in rows) else 1


def cmd_analyze(args):
    cfg = _load(args)
    out = _outdir(args)
    reports = harness.analyze_spectrum(cfg, subdomain=args.subdomain)
    harness.spectrum_to_csv(reports, out / "spectrum.csv",
                            level=len(cfg.subdomains))
    for rep in reports:
        head = rep["eigenvalues"][:8]
        print(f"subdomain {rep['subdomain']:3d}: n={rep['n_dofs']} "
              f"selected={rep['selected']} kernel={rep['kernel_dim']} "
              f"below-gap={rep['count_below_gap']} "
              f"gap-ratio={rep['gap_ratio']:.3g}")
        print("   lambda:", " ".join(f"{v:.3e}" for v in head),
              "..." if len(rep["eigenvalues"]) > 8 else "")
    print(f"wrote {out / 'spectrum.csv'}")
    return 0


def cmd_oracle(args):
    cfg = _load(args)
    ok, msgs = harness.run_oracle(cfg)
    for m in msgs:
        print(m)
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mlsdd",
        description="Multilevel spectral domain decomposition solver toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write mesh metadata and "
                       "coefficient files for a problem")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="build and export the multilevel "
                       "decomposition")
    _add_common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("solve", help="run one preconditioned solve")
    _add_common(p)
    p.add_argument("--residuals", action="store_true",
                   help="also write the residual history CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common(p)
    p.add_argument("-a", "--axis", action="append", default=[],
                   metavar="NAME=V1,V2,...",
                   help="sweep axis over a config field (repeatable)")
    p.add_argument("--paired", action="store_true",
                   help="zip the axes instead of the Cartesian product")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="dump per-subdomain GEVP spectra")
    _add_common(p)
    p.add_argument("--subdomain", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="dense brute-force verification "
                       "of a small configuration")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MlsddError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
