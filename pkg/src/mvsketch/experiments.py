"""End-to-end experiment pipelines and the update throughput benchmark.

Each task runs per epoch (or per consecutive epoch pair for change
detection), per memory point: build sketches from the trace, resolve the
detection threshold against the oracle, detect, score. All outputs are
pure functions of (spec, trace bytes), so report files are byte
reproducible across runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import oracle, pisa
from .detection import HeavyReport, detect_heavy_changers, detect_heavy_hitters, write_report_csv
from .distributed import (
    ScalableConfig,
    controller_aggregate,
    detector_candidates_hc,
    detector_candidates_hh,
    merge,
)
from .metrics import MetricsReport, compute_metrics
from .sketch import Sketch, SketchConfig, cols_for_memory
from .traffic import NetworkWidePolicy, Trace, gen_zipf, parse_trace, partition, split_epochs

TASKS = (
    "hh",
    "hc",
    "scalable-hh",
    "scalable-hc",
    "networkwide-hh",
    "networkwide-hc",
    "pisa",
)

DEFAULT_TARGET_HEAVY = 80


@dataclass
class ExperimentSpec:
    task: str
    trace_path: Optional[Union[str, Path]] = None
    rows: int = 4
    cols: Optional[int] = None
    memory_bytes: tuple[int, ...] = ()
    sketch_seed: int = 1
    phi: Optional[float] = None
    threshold: Optional[float] = None
    target_heavy: Optional[int] = None
    q: int = 5
    d: int = 3
    selection_seed: int = 0
    per_flow: bool = False
    pisa_mode: str = pisa.SIZE_32
    pisa_cols: int = 2048
    pisa_delay: int = 0
    out_dir: Optional[Union[str, Path]] = None
    fmt: str = "csv"
    dump_sketches: bool = False

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.fmt not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.task != "pisa" and self.cols is None and not self.memory_bytes:
            raise ValueError("need cols or at least one memory size")
        given = [x is not None for x in (self.phi, self.threshold, self.target_heavy)]
        if sum(given) > 1:
            raise ValueError("phi, threshold and target_heavy are mutually exclusive")


@dataclass
class ExperimentResult:
    rows: list[dict]
    files: list[Path] = field(default_factory=list)


def _resolve_threshold(spec: ExperimentSpec, table) -> float:
    """Absolute detection threshold from the spec's phi / threshold /
    target-heavy setting, against oracle totals."""
    if spec.threshold is not None:
        if spec.threshold <= 0:
            raise ValueError("threshold must be > 0")
        return spec.threshold
    if spec.phi is not None:
        if not 0 < spec.phi < 1:
            raise ValueError("phi must be in (0, 1)")
        return spec.phi * table.total
    target = spec.target_heavy if spec.target_heavy is not None else DEFAULT_TARGET_HEAVY
    return oracle.threshold_for_target(table, target)


def _sketch_points(spec: ExperimentSpec, key_bytes: int) -> list[tuple[Optional[int], SketchConfig]]:
    points = []
    if spec.cols is not None:
        cfg = SketchConfig(spec.rows, spec.cols, key_bytes, spec.sketch_seed)
        points.append((None, cfg))
    for mem in spec.memory_bytes:
        cols = cols_for_memory(mem, spec.rows, key_bytes)
        points.append((mem, SketchConfig(spec.rows, cols, key_bytes, spec.sketch_seed)))
    return points


def _build(config: SketchConfig, tr: Trace) -> Sketch:
    s = Sketch(config)
    s.update_batch(tr.key_lo, tr.key_hi, tr.value)
    return s


def _metrics_row(
    spec: ExperimentSpec,
    epoch_label: str,
    mem: Optional[int],
    config: SketchConfig,
    threshold: float,
    m: MetricsReport,
) -> dict:
    return {
        "task": spec.task,
        "epoch": epoch_label,
        "rows": config.rows,
        "cols": config.cols,
        "memory_bytes": mem if mem is not None else config.memory_bytes,
        "threshold": threshold,
        "true_count": m.true_count,
        "reported_count": m.reported_count,
        "correct_count": m.correct_count,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "relative_error": m.relative_error,
    }


def _single_report(
    spec: ExperimentSpec, config: SketchConfig, epochs, pair_mode: bool, q_merge: bool
):
    """Yield (label, report, truth, values, threshold, sketches) per
    epoch or epoch pair, for the plain and network-wide pipelines."""
    policy = NetworkWidePolicy(spec.q, spec.selection_seed, spec.per_flow) if q_merge else None

    def sketch_of(tr: Trace) -> Sketch:
        if not q_merge:
            return _build(config, tr)
        parts = partition(tr, policy)
        return merge([_build(config, p) for p in parts])

    if not pair_mode:
        for epoch, tr in epochs:
            table = oracle.exact_counts(tr)
            threshold = _resolve_threshold(spec, table)
            sk = sketch_of(tr)
            report = detect_heavy_hitters(sk, threshold)
            truth = oracle.heavy_at(table, threshold)
            yield (str(epoch), report, truth, table.as_dict(), threshold, {f"epoch{epoch}": sk})
    else:
        for (e1, tr1), (e2, tr2) in zip(epochs, epochs[1:]):
            changes = oracle.exact_changes(oracle.exact_counts(tr1), oracle.exact_counts(tr2))
            threshold = _resolve_threshold(spec, changes)
            sk1 = sketch_of(tr1)
            sk2 = sketch_of(tr2)
            report = detect_heavy_changers(sk1, sk2, threshold)
            truth = oracle.heavy_at(changes, threshold)
            yield (
                f"{e1}-{e2}",
                report,
                truth,
                changes.as_dict(),
                threshold,
                {f"epoch{e1}": sk1, f"epoch{e2}": sk2},
            )


def _scalable_report(spec: ExperimentSpec, config: SketchConfig, epochs, pair_mode: bool):
    scfg = ScalableConfig(spec.q, spec.d, spec.selection_seed)

    def detectors_of(tr: Trace) -> list[Sketch]:
        return [_build(config, p) for p in partition(tr, scfg)]

    if not pair_mode:
        for epoch, tr in epochs:
            table = oracle.exact_counts(tr)
            threshold = _resolve_threshold(spec, table)
            local = threshold / spec.d
            cands = [detector_candidates_hh(s, local) for s in detectors_of(tr)]
            report = controller_aggregate(cands, threshold)
            truth = oracle.heavy_at(table, threshold)
            yield (str(epoch), report, truth, table.as_dict(), threshold, {})
    else:
        for (e1, tr1), (e2, tr2) in zip(epochs, epochs[1:]):
            changes = oracle.exact_changes(oracle.exact_counts(tr1), oracle.exact_counts(tr2))
            threshold = _resolve_threshold(spec, changes)
            local = threshold / spec.d
            det1 = detectors_of(tr1)
            det2 = detectors_of(tr2)
            cands = [
                detector_candidates_hc(s1, s2, local) for s1, s2 in zip(det1, det2)
            ]
            report = controller_aggregate(cands, threshold)
            truth = oracle.heavy_at(changes, threshold)
            yield (f"{e1}-{e2}", report, truth, changes.as_dict(), threshold, {})


def run_experiment(spec: ExperimentSpec, trace: Optional[Trace] = None) -> ExperimentResult:
    if trace is None:
        if spec.trace_path is None:
            raise ValueError("experiment needs a trace or trace path")
        trace = parse_trace(spec.trace_path)

    out_dir = Path(spec.out_dir) if spec.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    if spec.task == "pisa":
        policy = (
            pisa.RecircPolicy.delayed(spec.pisa_delay) if spec.pisa_delay else pisa.IMMEDIATE
        )
        rows = pisa.simulate_recirc(trace, spec.pisa_mode, spec.pisa_cols, spec.sketch_seed, policy)
        if out_dir is not None:
            path = out_dir / "recirculation.csv"
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write("mode,epoch,packets,recirculated,ratio\n")
                for r in rows:
                    fh.write(
                        f"{r['mode']},{r['epoch']},{r['packets']},"
                        f"{r['recirculated']},{r['ratio']!r}\n"
                    )
            files.append(path)
        return ExperimentResult(rows=rows, files=files)

    epochs = split_epochs(trace)
    pair_mode = spec.task.endswith("hc")
    if pair_mode and len(epochs) < 2:
        raise ValueError("change detection needs at least two epochs")

    rows: list[dict] = []
    for mem, config in _sketch_points(spec, trace.key_bytes):
        if spec.task in ("hh", "hc"):
            gen = _single_report(spec, config, epochs, pair_mode, q_merge=False)
        elif spec.task in ("networkwide-hh", "networkwide-hc"):
            gen = _single_report(spec, config, epochs, pair_mode, q_merge=True)
        else:
            gen = _scalable_report(spec, config, epochs, pair_mode)
        dumped: set[str] = set()
        for label, report, truth, values, threshold, sketches in gen:
            m = compute_metrics(report, truth, values)
            rows.append(_metrics_row(spec, label, mem, config, threshold, m))
            if out_dir is not None:
                path = out_dir / f"report_{spec.task}_cols{config.cols}_epoch{label}.csv"
                write_report_csv(report, path)
                files.append(path)
                if spec.dump_sketches:
                    for name, sk in sketches.items():
                        if name in dumped:
                            continue
                        spath = out_dir / f"sketch_{spec.task}_cols{config.cols}_{name}.mvsk"
                        sk.save(spath)
                        files.append(spath)
                        dumped.add(name)

    if out_dir is not None:
        files.append(_write_metrics(rows, out_dir, spec.fmt))
    return ExperimentResult(rows=rows, files=files)


_METRIC_COLUMNS = (
    "task",
    "epoch",
    "rows",
    "cols",
    "memory_bytes",
    "threshold",
    "true_count",
    "reported_count",
    "correct_count",
    "precision",
    "recall",
    "f1",
    "relative_error",
)


def _write_metrics(rows: list[dict], out_dir: Path, fmt: str) -> Path:
    if fmt == "json":
        path = out_dir / "metrics.json"
        with open(path, "w", encoding="ascii", newline="") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path
    path = out_dir / "metrics.csv"
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(_METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in _METRIC_COLUMNS) + "\n")
    return path


# -- throughput benchmark ------------------------------------------------------


@dataclass
class BenchResult:
    key_bytes: int
    rows: int
    cols: int
    packets: int
    rates: list[float]
    mean_rate: float


def bench_update(
    packets: int = 10_000_000,
    rows: int = 4,
    memory_bytes: int = 65536,
    cols: Optional[int] = None,
    key_bytes_sweep: Sequence[int] = (4, 8, 13),
    runs: int = 10,
    seed: int = 0,
    n_flows: int = 100_000,
    skew: float = 1.1,
) -> list[BenchResult]:
    """Measure batch update throughput on a preloaded synthetic stream.

    One result per key width; each is the mean over ``runs`` cold-sketch
    passes over the same in-memory stream. Detection thresholds play no
    part in updates, so throughput is threshold independent by
    construction.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    results = []
    for kb in key_bytes_sweep:
        w = cols if cols is not None else cols_for_memory(memory_bytes, rows, kb)
        config = SketchConfig(rows=rows, cols=w, key_bytes=kb, seed=1)
        trace, _ = gen_zipf(
            min(n_flows, 1 << min(8 * kb, 62)), packets, skew, "unit", seed, key_bytes=kb
        )
        # warm the compiled kernel and the cache before timing
        warm = Sketch(config)
        warm.update_batch(trace.key_lo[:1000], trace.key_hi[:1000], trace.value[:1000])
        rates = []
        for _ in range(runs):
            s = Sketch(config)
            t0 = time.perf_counter()
            s.update_batch(trace.key_lo, trace.key_hi, trace.value)
            t1 = time.perf_counter()
            rates.append(packets / (t1 - t0))
        results.append(
            BenchResult(
                key_bytes=kb,
                rows=rows,
                cols=w,
                packets=packets,
                rates=rates,
                mean_rate=float(np.mean(rates)),
            )
        )
    return results


def write_bench(results: list[BenchResult], path: Union[str, Path], fmt: str = "csv") -> None:
    if fmt == "json":
        payload = [
            {
                "key_bytes": r.key_bytes,
                "rows": r.rows,
                "cols": r.cols,
                "packets": r.packets,
                "rates": r.rates,
                "mean_rate": r.mean_rate,
            }
            for r in results
        ]
        with open(path, "w", encoding="ascii", newline="") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("key_bytes,rows,cols,packets,run,updates_per_sec\n")
        for r in results:
            for i, rate in enumerate(r.rates):
                fh.write(f"{r.key_bytes},{r.rows},{r.cols},{r.packets},{i},{rate!r}\n")
        fh.write("# mean rates\n")
        for r in results:
            fh.write(f"{r.key_bytes},{r.rows},{r.cols},{r.packets},mean,{r.mean_rate!r}\n")
