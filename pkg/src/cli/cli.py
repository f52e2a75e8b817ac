"""
cli.py
------
Command-line front end: ``simulate``, ``analyze``, ``model``, ``sweep`` and
``coherence``. Every command is deterministic given its config and seed and
writes a ``<output>.manifest.json`` next to each output.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 analysis,
1 anything unexpected.
"""

import argparse
import os
import sys

import numpy as np
from dotenv import load_dotenv

import logger.logger as log
from analysis import (
    AccidentalMethod,
    summarize,
    write_correlation,
    write_histogram,
    write_summary,
)
from ensemble import (
    coherence_trace,
    echo_amplitude,
    rephasing_efficiency_bound,
    sample_ions,
    write_coherence_trace,
)
from errors import AfcDlczError, AnalysisError, DomainError, UsageError
from model import ModelParams, compare_model_to_analysis, g_model, model_curve
from protocol import ProtocolConfig, load_config, sweepable_fields
from protocol.config import format_value, parse_value
from source import PhotonSource, RecordWriter, read_records, resolved_beta, run_trials, write_records
from threadpool.threadpool import ThreadPoolManager, default_workers

from .manifest import RunManifest, find_manifest, manifest_path

logger = log.get_logger(__name__)

MAX_SEED = 2**64 - 1
SWEEP_COLUMNS = (
    "beta",
    "g_model",
    "g_central",
    "g_central_err",
    "r",
    "r_lower",
    "r_upper",
    "eta_r",
    "eta_r_err",
    "peak_tau_us",
    "tau_c_fit_us",
)


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="key = value configuration file")
    parent.add_argument("--seed", type=int, default=0, help="root RNG seed (u64)")
    parent.add_argument("--out", help="output path or prefix")
    parent.add_argument("--format", choices=("binary", "text"), help="record file format")
    parent.add_argument("--bin-ns", type=float, help="histogram bin width in ns")
    parent.add_argument("--trials", type=int, help="number of trials")
    parent.add_argument("--threads", type=int, help="worker threads (default: $AFC_DLCZ_THREADS or CPU count)")
    parent.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="afc-dlcz",
        description="AFC-DLCZ multimode photon-pair simulator and analysis toolkit",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="simulate a record stream")
    simulate.add_argument("--truth", action="store_true", help="also write the source truth sidecar")
    simulate.set_defaults(handler=cmd_simulate)

    analyze = commands.add_parser("analyze", parents=[common], help="analyze a record stream")
    analyze.add_argument("records", help="record file (binary or text)")
    analyze.add_argument(
        "--method",
        choices=[m.value for m in AccidentalMethod],
        default=AccidentalMethod.INTER_TRIAL.value,
        help="accidental estimator",
    )
    analyze.set_defaults(handler=cmd_analyze)

    model = commands.add_parser("model", parents=[common], help="evaluate the g_SaS model curve")
    model.add_argument("--grid", required=True, help="p_S grid, start:stop:num or a comma list")
    model.set_defaults(handler=cmd_model)

    sweep = commands.add_parser("sweep", parents=[common], help="simulate and analyze over a parameter axis")
    sweep.add_argument("--axis", required=True, help="field=v1,v2,... or field=start:stop:num")
    sweep.add_argument(
        "--method",
        choices=[m.value for m in AccidentalMethod],
        default=AccidentalMethod.INTER_TRIAL.value,
    )
    sweep.set_defaults(handler=cmd_sweep)

    coherence = commands.add_parser("coherence", parents=[common], help="collective coherence trace of a sampled comb")
    coherence.add_argument("--ions", type=int, help="number of ions (default: n_ions)")
    coherence.add_argument("--t-max", type=float, help="trace end in us (default: 3/Delta)")
    coherence.add_argument("--step", type=float, default=0.01, help="trace step in us")
    coherence.set_defaults(handler=cmd_coherence)
    return parser


def _check_seed(seed: int):
    if not 0 <= seed <= MAX_SEED:
        raise UsageError("--seed must be an unsigned 64-bit integer")


def _require_out(args) -> str:
    if not args.out:
        raise UsageError("--out is required for %s" % args.command)
    return args.out


def _resolve_config(args, fallback: ProtocolConfig | None = None) -> ProtocolConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = fallback or ProtocolConfig()
    if args.bin_ns is not None:
        if not args.bin_ns > 0:
            raise UsageError("--bin-ns must be > 0")
        config = config.replace(bin_width_ns=float(args.bin_ns))
    return config


def _pool(args) -> ThreadPoolManager:
    workers = args.threads if args.threads else default_workers()
    if workers < 1:
        raise UsageError("--threads must be >= 1")
    return ThreadPoolManager(max_workers=workers)


def _arguments(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _print_block(values: dict):
    for key, value in values.items():
        print("%s = %s" % (key, "undefined" if value is None else format_value(value)))


def cmd_simulate(args) -> int:
    if args.trials is None or args.trials < 1:
        raise UsageError("--trials must be >= 1")
    _check_seed(args.seed)
    out = _require_out(args)
    config = _resolve_config(args)
    fmt = args.format or "binary"
    manifest = RunManifest.start("simulate", config, args.seed, _arguments(args), args.trials)

    with _pool(args) as pool:
        source = PhotonSource(config, args.seed, threadpool=pool, with_truth=args.truth)
        if fmt == "binary":
            with RecordWriter(out) as writer:

                @source.on("block")
                def on_block(index, records):
                    writer.write(records)

                result = source.generate(args.trials)
        else:
            result = source.generate(args.trials)
            write_records(out, result.records, "text")

    manifest.add_output(out)
    if result.truth is not None:
        truth_path = out + ".truth.npz"
        result.truth.save(truth_path)
        manifest.add_output(truth_path)
    manifest.write(manifest_path(out))

    channel = result.records["channel"]
    _print_block(
        {
            "trials": args.trials,
            "stokes_records": int(np.count_nonzero(channel == 0)),
            "anti_stokes_records": int(np.count_nonzero(channel == 1)),
            "expected_peak_tau_us": config.tau_peak_us,
            "output": out,
        }
    )
    return 0


def cmd_analyze(args) -> int:
    source_manifest = find_manifest(args.records)
    fallback = source_manifest.resolved_config() if source_manifest else None
    config = _resolve_config(args, fallback)
    n_trials = args.trials
    if n_trials is None and source_manifest is not None:
        n_trials = source_manifest.n_trials
    if n_trials is not None and n_trials < 1:
        raise UsageError("--trials must be >= 1")

    records = read_records(args.records, args.format)
    if records.size == 0:
        raise AnalysisError("record file %s is empty" % args.records)

    prefix = args.out or os.path.splitext(args.records)[0]
    manifest = RunManifest.start(
        "analyze",
        config,
        source_manifest.seed if source_manifest else None,
        _arguments(args),
        n_trials,
    )
    manifest.add_input(args.records)

    with _pool(args) as pool:
        report = summarize(records, config, n_trials, args.method, threadpool=pool)

    outputs = {
        "histogram": prefix + ".histogram.tsv",
        "correlation": prefix + ".correlation.tsv",
        "summary": prefix + ".summary.txt",
    }
    write_histogram(outputs["histogram"], report.histogram, report.accidentals)
    write_correlation(outputs["correlation"], report.correlation)
    write_summary(outputs["summary"], report.summary)
    manifest.n_trials = report.histogram.n_trials
    for path in outputs.values():
        manifest.add_output(path)
    manifest.write(manifest_path(prefix))
    _print_block(report.summary)
    return 0


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:num`` (inclusive linspace) or a comma separated list."""
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError(text)
            start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
            if num < 1:
                raise ValueError(text)
            grid = np.linspace(start, stop, num)
        else:
            grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError("invalid grid %r, expected start:stop:num or v1,v2,..." % text)
    if grid.size == 0:
        raise UsageError("grid %r is empty" % text)
    return grid


def cmd_model(args) -> int:
    out = _require_out(args)
    config = _resolve_config(args)
    grid = parse_grid(args.grid)
    if not np.all(np.isfinite(grid)) or np.any((grid <= 0) | (grid > 1)):
        raise UsageError("p_S grid values must lie in (0, 1]")

    beta = resolved_beta(config)
    provenance = {
        "beta_source": "configured" if config.beta is not None else "computed",
        "t_spin_ms": format_value(config.t_spin_us * 1e-3),
        "t1_ms": format_value(config.t1_optical_ms),
        "gamma_es": format_value(config.gamma_es),
        "gamma_eg": format_value(config.gamma_eg),
        "eta_t": format_value(config.read_transfer),
    }
    curve = model_curve(
        grid, config.eta_r_per_bin, beta, config.p_n_per_bin, config.bin_width_ns, provenance
    )
    curve.write(out)
    manifest = RunManifest.start("model", config, None, _arguments(args))
    manifest.add_output(out)
    manifest.write(manifest_path(out))
    _print_block({"beta": beta, "points": int(grid.size), "output": out})
    return 0


def parse_axis(text: str) -> tuple[str, list]:
    """``field=v1,v2`` or ``field=start:stop:num`` over a sweepable config field."""
    if "=" not in text:
        raise UsageError("axis %r must look like field=v1,v2" % text)
    name, values = (part.strip() for part in text.split("=", 1))
    fields = sweepable_fields()
    if name not in fields:
        raise UsageError("unknown sweep field %r; sweepable fields: %s" % (name, ", ".join(fields)))
    if ":" in values:
        grid = parse_grid(values)
        texts = ["%d" % round(v) if float(v).is_integer() else repr(float(v)) for v in grid]
    else:
        texts = [v for v in values.split(",") if v.strip()]
    try:
        points = [parse_value(name, v) for v in texts]
    except AfcDlczError as e:
        raise UsageError("invalid axis values: %s" % e)
    if not points:
        raise UsageError("axis %r has no values" % text)
    return name, points


def _model_value(config: ProtocolConfig, beta: float):
    try:
        return g_model(
            ModelParams(config.p_s, config.eta_r_per_bin, beta, config.p_n_per_bin, config.bin_width_ns)
        )
    except DomainError:
        return None


def cmd_sweep(args) -> int:
    if args.trials is None or args.trials < 1:
        raise UsageError("--trials must be >= 1")
    _check_seed(args.seed)
    out = _require_out(args)
    config = _resolve_config(args)
    name, points = parse_axis(args.axis)

    rows = []
    with _pool(args) as pool:
        for stream, value in enumerate(points):
            point = config.replace(**{name: value})
            logger.info("Sweep point %d/%d: %s = %s" % (stream + 1, len(points), name, value))
            result = run_trials(point, args.trials, args.seed, stream=stream, threadpool=pool)
            summary = summarize(result.records, point, args.trials, args.method, threadpool=pool).summary
            beta = resolved_beta(point)
            row = {name: value, "beta": beta, "g_model": _model_value(point, beta)}
            row.update({key: summary.get(key) for key in SWEEP_COLUMNS if key not in row})
            rows.append(row)

    header = [
        "# axis = %s" % name,
        "# seed = %d" % args.seed,
        "# trials_per_point = %d" % args.trials,
        "# method = %s" % args.method,
    ]
    measured = [
        (r["p_s"], r["g_central"], r["g_central_err"])
        for r in rows
        if name == "p_s" and r["g_central"] is not None and r["g_central_err"]
    ]
    if measured:
        beta = resolved_beta(config)
        curve = model_curve(
            [m[0] for m in measured], config.eta_r_per_bin, beta, config.p_n_per_bin, config.bin_width_ns
        )
        comparison = compare_model_to_analysis(curve, measured)
        header.append("# chi_square = %r" % comparison.chi_square)
        header.append("# dof = %d" % comparison.dof)

    columns = [name] + list(SWEEP_COLUMNS)
    with open(out, "w", encoding="utf-8") as f:
        f.write("\n".join(header) + "\n")
        f.write("\t".join(columns) + "\n")
        for row in rows:
            f.write("\t".join(format_value(row[c]) if row[c] is not None else "undefined" for c in columns) + "\n")

    manifest = RunManifest.start("sweep", config, args.seed, _arguments(args), args.trials)
    manifest.add_output(out)
    manifest.write(manifest_path(out))
    _print_block({"axis": name, "points": len(rows), "output": out})
    return 0


def cmd_coherence(args) -> int:
    _check_seed(args.seed)
    out = _require_out(args)
    config = _resolve_config(args)
    comb = config.comb_spec()
    n_ions = args.ions if args.ions is not None else config.n_ions
    t_max = args.t_max if args.t_max is not None else 3.0 * comb.period_inv_delta
    if not args.step > 0 or not t_max > 0:
        raise UsageError("--step and --t-max must be > 0")

    ions = sample_ions(comb, config.spin_fwhm_khz, n_ions, args.seed)
    times = np.arange(0.0, t_max + args.step / 2.0, args.step)
    write_coherence_trace(out, times, coherence_trace(ions, times))
    echo = echo_amplitude(ions, 0.0, args.step)

    manifest = RunManifest.start("coherence", config, args.seed, _arguments(args))
    manifest.add_output(out)
    manifest.write(manifest_path(out))
    _print_block(
        {
            "echo_time_us": echo.time_us,
            "echo_magnitude_squared": echo.value,
            "rephasing_bound": rephasing_efficiency_bound(comb),
            "output": out,
        }
    )
    return 0


def main(argv=None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = args.log_level or os.getenv(log.LEVEL_ENV)
    if level:
        log.set_level(level)

    try:
        return args.handler(args)
    except AfcDlczError as e:
        logger.error("%s failed: %s" % (args.command, e))
        return e.exit_code
    except OSError as e:
        logger.error("%s failed: %s" % (args.command, e))
        return UsageError.exit_code
    except Exception:
        logger.exception("%s failed with an unexpected error" % args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
