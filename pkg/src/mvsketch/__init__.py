"""Invertible majority-vote sketch for heavy-flow detection.

Library layout:

* ``sketch``: the core data structure (update, query, bounds,
  serialization).
* ``detection``: heavy-hitter and heavy-changer recovery from sketches.
* ``distributed``: scalable detector/controller candidate aggregation
  and network-wide sketch merging.
* ``pisa``: switch-pipeline update variants with recirculation
  accounting.
* ``traffic``: trace files, synthetic Zipf generation, epoch splitting
  and stream partitioning.
* ``oracle``: exact brute-force ground truth for tests and experiment
  scoring.
* ``experiments`` / ``cli``: the experiment harness and its command line
  front end.
"""

from .detection import (
    ChangeEstimate,
    HeavyReport,
    detect_heavy_changers,
    detect_heavy_hitters,
    estimated_max_change,
)
from .distributed import (
    CandidateTuple,
    ScalableConfig,
    controller_aggregate,
    detector_candidates_hc,
    detector_candidates_hh,
    merge,
)
from .metrics import MetricsReport, compute_metrics
from .oracle import (
    ChangeTable,
    FlowTable,
    bucket_majority,
    exact_changes,
    exact_counts,
    true_heavy,
)
from .sketch import (
    Bucket,
    FlowEstimate,
    MAX_TOTAL,
    Sketch,
    SketchConfig,
    SketchFormatError,
    cols_for_memory,
    params_from_error,
)
from .traffic import (
    NetworkWidePolicy,
    PacketRecord,
    Trace,
    TraceFormatError,
    TraceMeta,
    gen_zipf,
    parse_trace,
    partition,
    split_epochs,
    write_trace,
)

__all__ = [
    "Bucket",
    "CandidateTuple",
    "ChangeEstimate",
    "ChangeTable",
    "FlowEstimate",
    "FlowTable",
    "HeavyReport",
    "MAX_TOTAL",
    "MetricsReport",
    "NetworkWidePolicy",
    "PacketRecord",
    "ScalableConfig",
    "Sketch",
    "SketchConfig",
    "SketchFormatError",
    "Trace",
    "TraceFormatError",
    "TraceMeta",
    "bucket_majority",
    "cols_for_memory",
    "compute_metrics",
    "controller_aggregate",
    "detect_heavy_changers",
    "detect_heavy_hitters",
    "detector_candidates_hc",
    "detector_candidates_hh",
    "estimated_max_change",
    "exact_changes",
    "exact_counts",
    "gen_zipf",
    "merge",
    "params_from_error",
    "parse_trace",
    "partition",
    "split_epochs",
    "true_heavy",
    "write_trace",
]

__version__ = "0.1.0"
