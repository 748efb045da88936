"""Command line experiment harness.

Subcommands: gen (synthetic traces), hh, hc, scalable, networkwide
(detection pipelines with metrics output), merge (combine serialized
sketches), pisa-sim (pipeline-update recirculation accounting), bench
(update throughput), metrics (score a report file against an oracle
table). All commands exit 0 on success and nonzero with a diagnostic on
any error.
"""

from __future__ import annotations

import sys

import click

from . import oracle, pisa
from .detection import HeavyReport, read_key_estimate_csv, write_report_csv
from .distributed import merge as merge_sketches
from .experiments import (
    ExperimentSpec,
    bench_update,
    run_experiment,
    write_bench,
)
from .metrics import compute_metrics
from .sketch import Sketch
from .traffic import concat, gen_zipf, write_trace


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def sketch_options(f):
    f = click.option("--rows", default=4, show_default=True, help="sketch rows")(f)
    f = click.option("--cols", type=int, default=None, help="sketch columns")(f)
    f = click.option(
        "--memory-bytes",
        "memory_bytes",
        multiple=True,
        type=int,
        help="memory budget per sketch; repeat for a sweep (overrides --cols)",
    )(f)
    f = click.option("--seed", default=1, show_default=True, help="sketch hash seed")(f)
    return f


def threshold_options(f):
    f = click.option("--phi", type=float, default=None, help="fractional threshold")(f)
    f = click.option(
        "--threshold", type=float, default=None, help="absolute threshold"
    )(f)
    f = click.option(
        "--target-heavy",
        type=int,
        default=None,
        help="tune the threshold to about this many true heavy flows [default: 80]",
    )(f)
    return f


def output_options(f):
    f = click.option(
        "--out", "out_dir", type=click.Path(file_okay=False), default=None,
        help="output directory for report and metrics files",
    )(f)
    f = click.option(
        "--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
        show_default=True, help="metrics file format",
    )(f)
    return f


@click.group()
def main() -> None:
    """Heavy-flow detection experiments on the majority-vote sketch."""


@main.command()
@click.option("--flows", default=100_000, show_default=True, help="distinct flows per epoch")
@click.option("--packets", default=1_000_000, show_default=True, help="packets per epoch")
@click.option("--skew", default=1.1, show_default=True, help="rank-frequency skew")
@click.option(
    "--value-model", type=click.Choice(["unit", "sizes"]), default="unit",
    show_default=True, help="unit values (packet counting) or packet sizes",
)
@click.option("--epochs", default=1, show_default=True)
@click.option("--key-bytes", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def gen(flows, packets, skew, value_model, epochs, key_bytes, seed, out_path):
    """Generate a synthetic Zipf trace (gzip if the path ends in .gz)."""
    try:
        parts = [
            gen_zipf(flows, packets, skew, value_model, seed, epoch=e, key_bytes=key_bytes)[0]
            for e in range(epochs)
        ]
        trace = concat(parts)
        write_trace(trace, out_path)
    except (ValueError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"wrote {len(trace)} packets over {epochs} epoch(s) to {out_path}")


def _run_and_echo(spec: ExperimentSpec) -> None:
    try:
        result = run_experiment(spec)
    except (ValueError, OSError, OverflowError) as exc:
        raise _fail(exc)
    for row in result.rows:
        if spec.task == "pisa":
            click.echo(
                f"mode={row['mode']} epoch={row['epoch']} packets={row['packets']} "
                f"recirculated={row['recirculated']} ratio={row['ratio']:.6f}"
            )
        else:
            click.echo(
                f"epoch={row['epoch']} cols={row['cols']} threshold={row['threshold']} "
                f"precision={row['precision']:.4f} recall={row['recall']:.4f} "
                f"f1={row['f1']:.4f} rel_err={row['relative_error']:.6f}"
            )
    for path in result.files:
        click.echo(f"wrote {path}", err=True)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@sketch_options
@threshold_options
@output_options
@click.option("--dump-sketches", is_flag=True, help="also write per-epoch sketch files")
def hh(trace_path, rows, cols, memory_bytes, seed, phi, threshold, target_heavy, out_dir, fmt, dump_sketches):
    """Heavy-hitter detection per epoch of a trace."""
    spec = ExperimentSpec(
        task="hh", trace_path=trace_path, rows=rows, cols=cols,
        memory_bytes=tuple(memory_bytes), sketch_seed=seed, phi=phi,
        threshold=threshold, target_heavy=target_heavy, out_dir=out_dir, fmt=fmt,
        dump_sketches=dump_sketches,
    )
    _run_and_echo(spec)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@sketch_options
@threshold_options
@output_options
@click.option("--dump-sketches", is_flag=True, help="also write per-epoch sketch files")
def hc(trace_path, rows, cols, memory_bytes, seed, phi, threshold, target_heavy, out_dir, fmt, dump_sketches):
    """Heavy-changer detection on consecutive epoch pairs of a trace."""
    spec = ExperimentSpec(
        task="hc", trace_path=trace_path, rows=rows, cols=cols,
        memory_bytes=tuple(memory_bytes), sketch_seed=seed, phi=phi,
        threshold=threshold, target_heavy=target_heavy, out_dir=out_dir, fmt=fmt,
        dump_sketches=dump_sketches,
    )
    _run_and_echo(spec)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--detect", type=click.Choice(["hh", "hc"]), default="hh", show_default=True)
@click.option("--q", default=5, show_default=True, help="number of detectors")
@click.option("--d", default=3, show_default=True, help="detectors per flow")
@click.option("--selection-seed", default=0, show_default=True)
@sketch_options
@threshold_options
@output_options
def scalable(trace_path, detect, q, d, selection_seed, rows, cols, memory_bytes, seed, phi, threshold, target_heavy, out_dir, fmt):
    """Scalable detection: flows split over d of q detectors, candidate
    estimates summed at the controller."""
    spec = ExperimentSpec(
        task=f"scalable-{detect}", trace_path=trace_path, rows=rows, cols=cols,
        memory_bytes=tuple(memory_bytes), sketch_seed=seed, phi=phi,
        threshold=threshold, target_heavy=target_heavy, q=q, d=d,
        selection_seed=selection_seed, out_dir=out_dir, fmt=fmt,
    )
    _run_and_echo(spec)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--detect", type=click.Choice(["hh", "hc"]), default="hh", show_default=True)
@click.option("--q", default=6, show_default=True, help="number of detectors")
@click.option("--selection-seed", default=0, show_default=True, help="partition seed")
@click.option("--per-flow", is_flag=True, help="pin each flow to one detector")
@sketch_options
@threshold_options
@output_options
def networkwide(trace_path, detect, q, selection_seed, per_flow, rows, cols, memory_bytes, seed, phi, threshold, target_heavy, out_dir, fmt):
    """Network-wide detection: disjoint sub-streams sketched separately,
    merged at the controller, detection on the merged sketch."""
    spec = ExperimentSpec(
        task=f"networkwide-{detect}", trace_path=trace_path, rows=rows, cols=cols,
        memory_bytes=tuple(memory_bytes), sketch_seed=seed, phi=phi,
        threshold=threshold, target_heavy=target_heavy, q=q,
        selection_seed=selection_seed, per_flow=per_flow, out_dir=out_dir, fmt=fmt,
    )
    _run_and_echo(spec)


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="also run heavy-hitter detection on the merged sketch")
@click.option("--threshold", type=float, default=None, help="threshold for --report")
def merge(inputs, out_path, report_path, threshold):
    """Merge serialized same-config sketches into one sketch file."""
    try:
        sketches = [Sketch.load(p) for p in inputs]
        merged = merge_sketches(sketches)
        merged.save(out_path)
        if report_path is not None:
            if threshold is None:
                raise ValueError("--report needs --threshold")
            from .detection import detect_heavy_hitters

            write_report_csv(detect_heavy_hitters(merged, threshold), report_path)
    except (ValueError, OSError, OverflowError) as exc:
        raise _fail(exc)
    click.echo(f"merged {len(inputs)} sketches (total={merged.total}) into {out_path}")


@main.command("pisa-sim")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(list(pisa.MODES)), default=pisa.SIZE_32, show_default=True)
@click.option("--cols", default=2048, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--delay", default=0, show_default=True,
              help="recirculation delay in packets (0 = immediate)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def pisa_sim(trace_path, mode, cols, seed, delay, out_dir):
    """Pipeline-update simulation with per-epoch recirculation ratios."""
    spec = ExperimentSpec(
        task="pisa", trace_path=trace_path, pisa_mode=mode, pisa_cols=cols,
        sketch_seed=seed, pisa_delay=delay, out_dir=out_dir, cols=1,
    )
    _run_and_echo(spec)


@main.command()
@click.option("--packets", default=10_000_000, show_default=True)
@click.option("--rows", default=4, show_default=True)
@click.option("--cols", type=int, default=None)
@click.option("--memory-bytes", default=65536, show_default=True)
@click.option("--key-bytes", "key_bytes", multiple=True, type=int,
              help="key widths to sweep [default: 4 8 13]")
@click.option("--runs", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
def bench(packets, rows, cols, memory_bytes, key_bytes, runs, seed, out_path, fmt):
    """Update throughput over a preloaded in-memory stream."""
    sweep = tuple(key_bytes) if key_bytes else (4, 8, 13)
    try:
        results = bench_update(
            packets=packets, rows=rows, memory_bytes=memory_bytes, cols=cols,
            key_bytes_sweep=sweep, runs=runs, seed=seed,
        )
        if out_path is not None:
            write_bench(results, out_path, fmt)
    except (ValueError, OSError) as exc:
        raise _fail(exc)
    for r in results:
        click.echo(
            f"key_bytes={r.key_bytes} rows={r.rows} cols={r.cols} "
            f"mean={r.mean_rate/1e6:.2f}M updates/s "
            f"(min={min(r.rates)/1e6:.2f}M max={max(r.rates)/1e6:.2f}M over {len(r.rates)} runs)"
        )
    if out_path is not None:
        click.echo(f"wrote {out_path}", err=True)


@main.command("metrics")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="oracle table csv (key_hex,sum)")
@threshold_options
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def metrics_cmd(report_path, truth_path, phi, threshold, target_heavy, out_path):
    """Score a report file against an exact oracle table."""
    try:
        table = oracle.read_table_csv(truth_path)
        if threshold is not None:
            thr = threshold
        elif phi is not None:
            thr = phi * table.total
        else:
            thr = oracle.threshold_for_target(table, target_heavy if target_heavy else 80)
        entries = read_key_estimate_csv(report_path)
        report = HeavyReport(entries=tuple(entries), threshold=thr)
        truth = oracle.heavy_at(table, thr)
        m = compute_metrics(report, truth, table.as_dict())
    except (ValueError, OSError) as exc:
        raise _fail(exc)
    line = (
        f"threshold={thr} true={m.true_count} reported={m.reported_count} "
        f"correct={m.correct_count} precision={m.precision:.4f} recall={m.recall:.4f} "
        f"f1={m.f1:.4f} rel_err={m.relative_error:.6f}"
    )
    click.echo(line)
    if out_path is not None:
        with open(out_path, "w", encoding="ascii", newline="") as fh:
            fh.write(line + "\n")


if __name__ == "__main__":
    sys.exit(main())
