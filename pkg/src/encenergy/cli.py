"""Command line interface.

Exit codes: 0 success, 1 usage, 2 data error, 3 tool or meter unavailable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import attribution, evaluation, plotting, report
from .collect import load_plan, run_collect
from .dataset import SynthSpec, load_dataset, save_dataset, save_truth, synth_dataset
from .errors import CommandFailed, DataError, UnavailableError
from .meter import DEFAULT_DOMAIN, RaplDomain, calibrate_idle, measure_workload
from .model import (
    MODES, PRESETS, correlation_table, estimate_posterior, estimate_prior, estimate_record,
    fit_all, load_models, save_models, select_model,
)
from .profile import load_profile, merge_profiles

log = logging.getLogger("encenergy")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNAVAILABLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_globals(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--dataset", default=d(None), help="dataset CSV (sidecar <csv>.meta.json)")
    g.add_argument("--model", action="append", default=d(None),
                   help="model file; repeatable where several are read")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--confidence", type=float, default=d(0.95), choices=sorted(evaluation.Z_SCORES))
    g.add_argument("--output-format", choices=("csv", "table"), default=d("table"))
    g.add_argument("-o", "--output", default=d(None), help="write the delimited output here")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in _csv_list(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="encenergy", description=__doc__.splitlines()[0] if __doc__ else None)
    _add_globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def verb(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = verb("calibrate-idle", "measure average idle power")
    p.add_argument("--window", type=float, default=60.0, help="seconds (default 60)")
    p.add_argument("--domain", default=DEFAULT_DOMAIN)

    p = verb("measure", "measure the encoding energy of a command")
    p.add_argument("--p-idle", type=float, required=True, help="idle power in watts")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--max-repeats", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--domain", default=DEFAULT_DOMAIN)
    p.add_argument("cmd", nargs=argparse.REMAINDER, help="-- command [args...]")

    p = verb("collect", "run encodes, profiles and measurements from a plan")
    p.add_argument("--plan", required=True, help="JSON run plan")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--p-idle", type=float, help="skip idle calibration and use this power")
    p.add_argument("--no-energy", action="store_true", help="profile-only collection")

    p = verb("synth", "write a synthetic dataset")
    p.add_argument("--presets", type=_csv_list, default=list(PRESETS))
    p.add_argument("--sequences", type=int, default=10)
    p.add_argument("--crfs", type=_int_list, default=[18, 23, 28, 33])
    p.add_argument("--noise", type=float, default=0.0, help="relative noise scale")
    p.add_argument("--truth", help="also write the true coefficients (JSON)")
    p.add_argument("--overwrite", action="store_true")

    p = verb("fit", "fit one model per preset and write a model file")
    p.add_argument("--mode", choices=MODES, default="posterior")
    p.add_argument("--mask", type=_csv_list, help="comma-separated feature subset")
    p.add_argument("--presets", type=_csv_list)

    p = verb("evaluate", "k-fold cross-validated MAPE per preset")
    p.add_argument("--mode", choices=MODES, default="posterior")
    p.add_argument("--mask", type=_csv_list)
    p.add_argument("-k", "--folds", type=int, default=10)
    p.add_argument("--figure", help="figure path (default: next to --output)")

    p = verb("estimate", "estimate encoding energy")
    p.add_argument("--profile", nargs="+", help="profile file(s) of one encode; merged")
    p.add_argument("--preset", choices=PRESETS, help="target preset (with --profile)")
    p.add_argument("--mode", choices=("posterior", "prior_uf"), default="posterior")

    verb("correlate", "Pearson correlation of each event with energy")

    p = verb("attribute", "split estimated energy across encoder sub-processes")
    p.add_argument("--profile", nargs="+", required=True)
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--categories", help="category map file (default: shipped x265 map)")
    p.add_argument("--figure")

    p = verb("report", "per-preset energy per N pixels, measured vs estimated")
    p.add_argument("--crf", type=int)
    p.add_argument("--normalizer", type=int, default=report.DEFAULT_NORMALIZER)
    p.add_argument("--figure")
    return parser


# --------------------------------------------------------------------------

def _emit(args, header, rows, csv_text=None) -> None:
    if args.output_format == "csv":
        if csv_text is None:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
            csv_text = buf.getvalue()
        text = csv_text
    else:
        text = evaluation.format_table(header, rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _figure_target(args):
    if getattr(args, "figure", None):
        return args.figure
    if args.output:
        return plotting.figure_path_for(args.output)
    return None


def _need(args, name):
    value = getattr(args, name)
    if not value:
        raise UsageError(f"--{name} is required for {args.command}")
    return value


def _dataset(args):
    return load_dataset(_need(args, "dataset"))


def _models(args):
    models = []
    for path in _need(args, "model"):
        models.extend(load_models(path))
    return models


def cmd_calibrate_idle(args):
    watts = calibrate_idle(args.window, RaplDomain(args.domain))
    _emit(args, ["domain", "window_s", "p_idle_w"], [[args.domain, args.window, repr(watts)]])


def cmd_measure(args):
    cmd = args.cmd[1:] if args.cmd[:1] == ["--"] else args.cmd
    if not cmd:
        raise UsageError("measure needs a command after --")
    m = measure_workload(cmd, args.p_idle, args.repeats, args.confidence, args.threshold,
                         meter=RaplDomain(args.domain), max_repeats=args.max_repeats)
    header = ["e_enc_j", "e_total_j", "e_idle_j", "duration_s", "repeats", "significant",
              "ci_halfwidth_rel"]
    _emit(args, header, [[repr(m.e_enc), repr(m.e_total), repr(m.e_idle), repr(m.duration_t),
                          m.repeats, m.significant, f"{m.ci_halfwidth_rel:.4g}"]])


def cmd_collect(args):
    plan = load_plan(args.plan)
    ds = run_collect(plan, output=_need(args, "dataset"), overwrite=args.overwrite,
                     measure_energy=not args.no_energy, p_idle=args.p_idle)
    print(f"wrote {len(ds)} records ({len(ds.gaps)} gaps) to {args.dataset}", file=sys.stderr)


def cmd_synth(args):
    out = _need(args, "dataset")
    spec = SynthSpec(presets=args.presets, n_sequences=args.sequences, crfs=args.crfs,
                     noise_rel=args.noise, seed=args.seed)
    ds, truth = synth_dataset(spec)
    save_dataset(ds, out, overwrite=args.overwrite)
    if args.truth:
        save_truth(truth, args.truth)
    print(f"wrote {len(ds)} synthetic records to {out}", file=sys.stderr)


def cmd_fit(args):
    ds = _dataset(args)
    out = _need(args, "model")[0]
    models = fit_all(ds.records, args.mode, args.mask, args.presets)
    save_models(models.values(), out)
    features = list(next(iter(models.values())).feature_mask)
    rows = [[m.preset, m.fit_meta.training_record_count, f"{m.fit_meta.objective_value:.4g}"]
            + [f"{m.coefficients[f]:.6g}" for f in features] for m in models.values()]
    _emit(args, ["preset", "n", "objective"] + features, rows)


def cmd_evaluate(args):
    ds = _dataset(args)
    cv = evaluation.cross_validate(ds.records, args.folds, args.mode, args.mask,
                                   args.confidence, args.seed)
    _emit(args, evaluation.COLUMNS, evaluation.result_rows(cv), evaluation.to_csv(cv))
    target = _figure_target(args)
    if target:
        plotting.plot_cross_validation(cv, target)


def cmd_estimate(args):
    models = _models(args)
    if args.profile:
        if not args.preset:
            raise UsageError("--preset is required with --profile")
        profile = merge_profiles(load_profile(p) for p in args.profile)
        model = select_model(models, args.preset, args.mode)
        fn = estimate_posterior if args.mode == "posterior" else estimate_prior
        _emit(args, ["preset", "mode", "energy_j"],
              [[args.preset, args.mode, repr(fn(model, profile.totals))]])
        return
    ds = _dataset(args)
    rows = []
    for r in ds.records:
        row = [r.sequence_id, r.preset, r.crf, "" if r.energy_j is None else repr(r.energy_j)]
        for mode in ("posterior", "prior_uf", "time_baseline"):
            try:
                row.append(repr(estimate_record(select_model(models, r.preset, mode), r)))
            except (KeyError, DataError):
                row.append("")
        rows.append(row)
    _emit(args, ["sequence_id", "preset", "crf", "measured_j", "posterior_j", "prior_uf_j",
                 "time_baseline_j"], rows)


def cmd_correlate(args):
    ds = _dataset(args)
    table = correlation_table(ds.records)
    _emit(args, ["event", "pcc"], [[e, f"{r:.4f}"] for e, r in table.items()])


def cmd_attribute(args):
    model = select_model(_models(args), args.preset, "posterior")
    profile = merge_profiles(load_profile(p) for p in args.profile)
    if args.categories:
        cmap = attribution.load_category_map(Path(args.categories).read_text())
    else:
        cmap = attribution.default_x265_map()
    rep = attribution.attribute(profile.functions, model, cmap)
    _emit(args, list(attribution.REPORT_COLUMNS), attribution.report_rows(rep),
          attribution.report_csv(rep))
    print(f"coverage: {rep.coverage:.1%}", file=sys.stderr)
    target = _figure_target(args)
    if target:
        plotting.plot_attribution({args.preset: rep}, target)


def cmd_report(args):
    ds = _dataset(args)
    rows = report.report_energy_per_pixels(ds, _models(args), args.normalizer, args.crf)
    _emit(args, report.report_header(rows), report.report_body(rows), report.report_csv(rows))
    target = _figure_target(args)
    if target:
        plotting.plot_energy_per_pixels(rows, target, args.normalizer)


COMMANDS = {
    "calibrate-idle": cmd_calibrate_idle,
    "measure": cmd_measure,
    "collect": cmd_collect,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "estimate": cmd_estimate,
    "correlate": cmd_correlate,
    "attribute": cmd_attribute,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"encenergy: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnavailableError as exc:
        print(f"encenergy: unavailable: {exc}", file=sys.stderr)
        return EXIT_UNAVAILABLE
    except (DataError, CommandFailed, KeyError, FileNotFoundError, FileExistsError,
            json.JSONDecodeError) as exc:
        print(f"encenergy: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"encenergy: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        logging.captureWarnings(False)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
