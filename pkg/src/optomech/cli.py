"""Command-line front end.

    optomech predict [--config run.yaml]
    optomech synth --seed 7 --out spectrum.csv
    optomech analyze spectrum.csv --out report.json
    optomech sweep --format csv
    optomech repro fig3 --out fig3.csv
    optomech modal --format csv --out mode.csv

Machine-readable output goes to ``--out`` (or stdout); human summaries go to
stderr.  Exit codes: 0 ok, 1 input error, 2 unstable dynamics, 3 analysis
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .errors import (
    CalibrationError, ConvergenceError, FloorModelError, InstabilityError, ParameterError, SpectrumFormatError,
)
from .pipeline import (
    SWEEP_COLUMNS, analyze_summary, predict_summary, run_analyze, run_modal, run_predict, run_repro,
    run_sweep, run_synth,
)
from .spectral import read_spectrum_csv, write_spectrum_csv

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNSTABLE = 2
EXIT_ANALYSIS = 3

# ---------------------------------------------------------------------------
# serialization


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps_structured(obj) -> str:
    # repr-exact floats, sorted keys: identical input gives identical bytes
    return json.dumps(obj, sort_keys=True, indent=2, default=_plain) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_to_csv(rows, columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else SWEEP_COLUMNS))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _parse_cell(s):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def table_from_csv(text) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    columns = next(reader)
    return [dict(zip(columns, map(_parse_cell, row))) for row in reader]


def flatten(obj, prefix="") -> list[tuple[str, object]]:
    items = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            items += flatten(obj[k], f"{prefix}{k}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            items += flatten(v, f"{prefix}{i}.")
    else:
        items.append((prefix[:-1], obj))
    return items


def report_to_csv(report) -> str:
    return table_to_csv([{"key": k, "value": v} for k, v in flatten(report)], ["key", "value"])


def emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_predict(args, cfg):
    report, stable = run_predict(cfg)
    print(predict_summary(report), file=sys.stderr)
    fmt = args.format or "structured"
    emit(report_to_csv(report) if fmt == "csv" else dumps_structured(report), args.out)
    if not stable:
        print(f"unstable: eigenvalue margin {report['stability']['margin_per_s']:.6g} 1/s", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_synth(args, cfg):
    spec = run_synth(cfg, args.seed)
    if (args.format or "csv") == "csv":
        emit(write_spectrum_csv(spec), args.out)
    else:
        emit(dumps_structured({"unit": spec.unit, "freq_hz": spec.freqs.tolist(),
                               "psd": spec.values.tolist(), "psd_sigma": spec.sigma.tolist()}), args.out)
    print(f"synthesized {len(spec)} bins, unit {spec.unit}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args, cfg):
    spec = read_spectrum_csv(args.spectrum)
    result = run_analyze(spec, cfg)
    print(analyze_summary(result), file=sys.stderr)
    emit(report_to_csv(result) if args.format == "csv" else dumps_structured(result), args.out)
    return EXIT_OK


def cmd_sweep(args, cfg):
    rows = run_sweep(cfg)
    if (args.format or "csv") == "csv":
        emit(table_to_csv(rows, SWEEP_COLUMNS), args.out)
    else:
        emit(dumps_structured({"rows": rows}), args.out)
    print(f"{len(rows)} rows, {sum(not r['stable'] for r in rows)} unstable", file=sys.stderr)
    return EXIT_OK


def cmd_repro(args, cfg):
    rows, summary = run_repro(cfg, args.target)
    if (args.format or "csv") == "csv":
        emit(table_to_csv(rows), args.out)
    else:
        emit(dumps_structured({"rows": rows, "summary": summary}), args.out)
    print(json.dumps(summary, sort_keys=True, indent=2), file=sys.stderr)
    return EXIT_OK


def cmd_modal(args, cfg):
    report, shape = run_modal(cfg)
    if args.format == "csv":
        emit(shape.to_csv(), args.out)
    else:
        emit(dumps_structured(report), args.out)
    print(f"m_eff ideal {report['ideal_shape']['m_eff_kg'] * 1e12:.2f} ng, "
          f"loaded {report['loaded_shape']['m_eff_kg'] * 1e12:.2f} ng", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "predict": cmd_predict, "synth": cmd_synth, "analyze": cmd_analyze,
    "sweep": cmd_sweep, "repro": cmd_repro, "modal": cmd_modal,
}


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration (default: bundled nominal)")
    common.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    common.add_argument("--seed", type=_seed, default=None, help="noise seed, overrides synthesis.seed")
    common.add_argument("--format", choices=("csv", "structured"), default=None)
    common.add_argument("-v", "--verbose", action="store_true", help="log intermediate results to stderr")

    p = argparse.ArgumentParser(prog="optomech", description="Cryogenic optomechanical cooling model and analysis")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("predict", parents=[common], help="derived rates, stability and cooling prediction")
    sub.add_parser("synth", parents=[common], help="seeded synthetic displacement spectrum")
    a = sub.add_parser("analyze", parents=[common], help="thermometry on a spectrum CSV")
    a.add_argument("spectrum", type=Path)
    sub.add_parser("sweep", parents=[common], help="detuning x power grid from the config")
    r = sub.add_parser("repro", parents=[common], help="tables for the detuning and power-law figures")
    r.add_argument("target", choices=("fig2b", "fig3"))
    sub.add_parser("modal", parents=[common], help="mass budget and effective mass of the beam mode")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("optomech").setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INPUT
    except (SpectrumFormatError, ParameterError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InstabilityError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (CalibrationError, FloorModelError, ConvergenceError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
