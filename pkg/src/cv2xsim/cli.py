"""Command-line front end.

Values come from the shipped default config, then ``--config``, then flags;
later sources win.

Exit codes: 0 success, 1 configuration error, 2 runtime diagnostic.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import config as config_io
from .core import ConfigError
from .engine import ScenarioConfig, reports_to_csv, run, run_sweep
from .scheduler import SchedulerError
from .sensing import MODES

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise argparse.ArgumentTypeError(f"unknown mode {m!r}")
    return modes


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI scenario file")
    common.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
    common.add_argument("--duration-s", type=float)
    common.add_argument("--d-list", type=_floats, help="comma-separated distances in m")
    common.add_argument("--aoi-th-list", type=_ints, help="comma-separated AoI thresholds in ms")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cv2xsim", description="C-V2X mode 4 SPS simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("run", "single scenario"), ("trace", "single scenario with scheduler trace")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--n", type=int, help="number of vehicles")
        if name == "run":
            p.add_argument("--trace", type=Path, help="also write selection trace (JSON lines)")
        else:
            p.add_argument("--trace", type=Path, help="trace output (default: stderr)")

    p = sub.add_parser("sweep", parents=[common], help="grid over seeds, modes and vehicle counts")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, 0..N-1")
    p.add_argument("--seed", type=int, default=0, help="first seed of the range")
    p.add_argument("--modes", type=_modes, default=list(MODES))
    p.add_argument("--mode", type=_modes, dest="modes", help=argparse.SUPPRESS)
    p.add_argument("--n", type=_ints, default=[25, 50, 75], help="comma-separated vehicle counts")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--plot-dir", type=Path, help="write column-oriented plot data here")

    sub.add_parser("validate", parents=[common], help="check a config file and exit")
    return parser


def _scenario(args) -> ScenarioConfig:
    cfg = config_io.load(args.config) if args.config else config_io.load(config_io.default_config_path())
    changes = {}
    if args.duration_s is not None:
        changes["duration_s"] = args.duration_s
    if args.d_list is not None:
        changes["d_list"] = tuple(args.d_list)
    if args.aoi_th_list is not None:
        changes["aoi_th_list"] = tuple(args.aoi_th_list)
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("n", "n_vehicles")):
        value = getattr(args, flag, None)
        if value is not None and not isinstance(value, list):
            changes[key] = value
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def plot_data(reports) -> dict[str, str]:
    """Seed-averaged curves: PDR against d per (mode, n) and AoIS against aoi_th per (mode, n, d)."""
    pdr = defaultdict(list)
    aois = defaultdict(list)
    d_list, th_list = None, None
    for r in reports:
        if r.metrics is None:
            continue
        m, c = r.metrics, r.config
        d_list, th_list = m.d_list, m.aoi_th_list
        for d in m.d_list:
            pdr[(c.mode, c.n_vehicles, d)].append(m.pdr[d])
            for th in m.aoi_th_list:
                aois[(c.mode, c.n_vehicles, d, th)].append(m.aois[(d, th)])
    if d_list is None:
        return {}

    def mean(values):
        vals = [v for v in values if v is not None]
        return f"{np.mean(vals):.4f}" if vals else "nan"

    series = sorted({(k[0], k[1]) for k in pdr})
    lines = ["# d " + " ".join(f"pdr_{mode}_n{n}" for mode, n in series)]
    for d in d_list:
        lines.append(f"{d:g} " + " ".join(mean(pdr[(mode, n, d)]) for mode, n in series))
    files = {"pdr_vs_d.dat": "\n".join(lines) + "\n"}

    cols = [(mode, n, d) for mode, n in series for d in d_list]
    lines = ["# aoi_th " + " ".join(f"aois_{mode}_n{n}_d{d:g}" for mode, n, d in cols)]
    for th in th_list:
        lines.append(f"{th} " + " ".join(mean(aois[(mode, n, d, th)]) for mode, n, d in cols))
    files["aois_vs_aoi_th.dat"] = "\n".join(lines) + "\n"
    return files


def _single(args, trace: bool) -> int:
    cfg = _scenario(args)
    trace_path = getattr(args, "trace", None)
    report = run(cfg, trace=trace or trace_path is not None)
    if trace or trace_path is not None:
        text = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in report.diagnostics.pop("trace"))
        if trace_path is not None:
            trace_path.write_text(text)
        else:
            sys.stderr.write(text)
    _emit(reports_to_csv([report]), args.out)
    logging.getLogger(__name__).info("run %s: %s", report.run_id, report.diagnostics)
    return EXIT_OK


def _sweep(args) -> int:
    cfg = _scenario(args)
    if args.seeds < 1 or args.jobs < 1 or not args.n or not args.modes:
        raise ConfigError("--seeds, --jobs, --n and --modes must be non-empty and positive")
    seeds = list(range(args.seed, args.seed + args.seeds))
    reports = run_sweep(cfg, seeds, args.modes, args.n, jobs=args.jobs)
    _emit(reports_to_csv(reports), args.out)
    if args.plot_dir is not None:
        args.plot_dir.mkdir(parents=True, exist_ok=True)
        for name, text in plot_data(reports).items():
            (args.plot_dir / name).write_text(text)
    failed = [r for r in reports if not r.ok]
    for r in failed:
        sys.stderr.write(f"error: {r.error}\n")
    return EXIT_RUNTIME if failed else EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        sys.stderr.write(f"cv2xsim: {exc}\n")
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            _scenario(args)
            return EXIT_OK
        if args.command == "sweep":
            return _sweep(args)
        return _single(args, trace=args.command == "trace")
    except ConfigError as exc:
        sys.stderr.write(f"cv2xsim: config error: {exc}\n")
        return EXIT_CONFIG
    except (SchedulerError, RuntimeError, ValueError) as exc:
        sys.stderr.write(f"cv2xsim: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
