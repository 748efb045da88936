"""Packet traces: parsing, synthetic generation, epoch splitting and
stream partitioning.

A trace is stored column-wise (epoch, key lanes, value arrays) so that
million-packet streams stay cheap to generate, hash and feed to the
sketch in one shot. ``PacketRecord`` is the record-level view for small
scale work and round-tripping.

Trace file format (CSV, optionally gzip by file extension):

    #mvsketch-trace v1 key_bytes=<k>
    epoch,key_hex,value

with ``key_hex`` the lowercase zero-padded hex of exactly 2*key_bytes
characters. Epoch indices must be non-decreasing unless the parser is
told otherwise.
"""

from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from ._hash import (
    GOLDEN,
    hash_key,
    key_to_lanes,
    lanes_to_key,
    mix64,
    np_columns,
    _np_mix64,
)

_HEADER_RE = re.compile(r"#mvsketch-trace v1 key_bytes=(\d+)\s*$")

# heavy-tailed packet size mixture: (weight, low, high-exclusive) bytes
SIZE_MIXTURE = ((0.40, 64, 80), (0.25, 80, 576), (0.35, 1400, 1501))

VALUE_MODELS = ("unit", "sizes")


class TraceFormatError(ValueError):
    """Raised on malformed trace input, with the offending line number."""


@dataclass(frozen=True)
class PacketRecord:
    epoch: int
    key: bytes
    value: int


@dataclass
class TraceMeta:
    key_bytes: int
    epochs: int
    packets_per_epoch: list[int] = field(default_factory=list)
    flows_per_epoch: list[int] = field(default_factory=list)
    value_model: str | None = None


class Trace:
    """Column-oriented packet stream with a fixed key width."""

    def __init__(
        self,
        key_bytes: int,
        epoch: np.ndarray,
        key_lo: np.ndarray,
        key_hi: np.ndarray,
        value: np.ndarray,
        value_model: str | None = None,
    ):
        if not 1 <= key_bytes <= 16:
            raise ValueError("key_bytes must be in [1, 16]")
        n = len(epoch)
        if not len(key_lo) == len(key_hi) == len(value) == n:
            raise ValueError("trace columns must have equal length")
        self.key_bytes = key_bytes
        self.epoch = np.ascontiguousarray(epoch, dtype=np.uint32)
        self.key_lo = np.ascontiguousarray(key_lo, dtype=np.uint64)
        self.key_hi = np.ascontiguousarray(key_hi, dtype=np.uint64)
        self.value = np.ascontiguousarray(value, dtype=np.uint64)
        self.value_model = value_model

    def __len__(self) -> int:
        return len(self.epoch)

    @classmethod
    def empty(cls, key_bytes: int) -> "Trace":
        z = np.zeros(0, dtype=np.uint64)
        return cls(key_bytes, z, z, z, z)

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord], key_bytes: int) -> "Trace":
        epochs, los, his, vals = [], [], [], []
        for rec in records:
            if len(rec.key) != key_bytes:
                raise ValueError(
                    f"record key width {len(rec.key)} != trace key_bytes {key_bytes}"
                )
            lo, hi = key_to_lanes(rec.key)
            epochs.append(rec.epoch)
            los.append(lo)
            his.append(hi)
            vals.append(rec.value)
        return cls(
            key_bytes,
            np.asarray(epochs, dtype=np.uint32),
            np.asarray(los, dtype=np.uint64),
            np.asarray(his, dtype=np.uint64),
            np.asarray(vals, dtype=np.uint64),
        )

    def key_at(self, i: int) -> bytes:
        return lanes_to_key(int(self.key_lo[i]), int(self.key_hi[i]), self.key_bytes)

    def records(self) -> Iterator[PacketRecord]:
        for i in range(len(self)):
            yield PacketRecord(int(self.epoch[i]), self.key_at(i), int(self.value[i]))

    def take(self, indices: np.ndarray) -> "Trace":
        return Trace(
            self.key_bytes,
            self.epoch[indices],
            self.key_lo[indices],
            self.key_hi[indices],
            self.value[indices],
            self.value_model,
        )

    def meta(self) -> TraceMeta:
        meta = TraceMeta(key_bytes=self.key_bytes, epochs=0, value_model=self.value_model)
        for _, sub in split_epochs(self):
            meta.epochs += 1
            meta.packets_per_epoch.append(len(sub))
            pairs = np.empty(len(sub), dtype=[("lo", "<u8"), ("hi", "<u8")])
            pairs["lo"] = sub.key_lo
            pairs["hi"] = sub.key_hi
            meta.flows_per_epoch.append(len(np.unique(pairs)))
        return meta

    def save(self, path: Union[str, Path]) -> None:
        write_trace(self, path)


def concat(traces: list[Trace]) -> Trace:
    if not traces:
        raise ValueError("need at least one trace")
    kb = traces[0].key_bytes
    if any(t.key_bytes != kb for t in traces):
        raise ValueError("key width differs across traces")
    return Trace(
        kb,
        np.concatenate([t.epoch for t in traces]),
        np.concatenate([t.key_lo for t in traces]),
        np.concatenate([t.key_hi for t in traces]),
        np.concatenate([t.value for t in traces]),
        traces[0].value_model,
    )


# -- file io ----------------------------------------------------------------


def _open_text(path: Union[str, Path], mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="ascii", newline="")
    return open(path, mode, encoding="ascii", newline="")


def write_trace(trace: Trace, path: Union[str, Path]) -> None:
    n = len(trace)
    kb = trace.key_bytes
    with _open_text(path, "w") as fh:
        fh.write(f"#mvsketch-trace v1 key_bytes={kb}\n")
        epoch = trace.epoch
        value = trace.value
        for i in range(n):
            key = lanes_to_key(int(trace.key_lo[i]), int(trace.key_hi[i]), kb)
            fh.write(f"{epoch[i]},{key.hex()},{value[i]}\n")


def parse_trace(
    source: Union[str, Path, Iterable[str]], require_sorted_epochs: bool = True
) -> Trace:
    """Parse a trace file or an iterable of lines.

    Raises ``TraceFormatError`` with the 1-based line number on the first
    malformed line, including epoch regressions when
    ``require_sorted_epochs`` is set.
    """
    if isinstance(source, (str, Path)):
        with _open_text(source, "r") as fh:
            return _parse_lines(fh, require_sorted_epochs)
    return _parse_lines(iter(source), require_sorted_epochs)


def _parse_lines(lines: Iterator[str], require_sorted_epochs: bool) -> Trace:
    header = next(lines, None)
    if header is None:
        raise TraceFormatError("empty input: missing trace header on line 1")
    m = _HEADER_RE.match(header.rstrip("\n"))
    if not m:
        raise TraceFormatError(f"line 1: bad trace header {header!r}")
    kb = int(m.group(1))
    if not 1 <= kb <= 16:
        raise TraceFormatError(f"line 1: key_bytes={kb} out of range [1, 16]")
    hex_width = 2 * kb
    epochs, los, his, vals = [], [], [], []
    prev_epoch = -1
    for lineno, line in enumerate(lines, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise TraceFormatError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        epoch_s, key_hex, value_s = parts
        try:
            epoch = int(epoch_s)
            value = int(value_s)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-numeric epoch or value") from None
        if epoch < 0 or value < 0:
            raise TraceFormatError(f"line {lineno}: negative epoch or value")
        if len(key_hex) != hex_width:
            raise TraceFormatError(
                f"line {lineno}: key hex width {len(key_hex)} != {hex_width}"
            )
        try:
            key = bytes.fromhex(key_hex)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: invalid hex key") from None
        if require_sorted_epochs and epoch < prev_epoch:
            raise TraceFormatError(
                f"line {lineno}: epoch {epoch} regresses below {prev_epoch}"
            )
        prev_epoch = max(prev_epoch, epoch)
        lo, hi = key_to_lanes(key)
        epochs.append(epoch)
        los.append(lo)
        his.append(hi)
        vals.append(value)
    return Trace(
        kb,
        np.asarray(epochs, dtype=np.uint32),
        np.asarray(los, dtype=np.uint64),
        np.asarray(his, dtype=np.uint64),
        np.asarray(vals, dtype=np.uint64),
    )


# -- synthetic generation -----------------------------------------------------


def _distinct_flow_keys(
    n_flows: int, key_bytes: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """n_flows distinct keys of the given width, pseudo-random in seed.

    Keys are spread by mixing the flow id, then deduplicated with a salt
    loop so that distinctness is exact even in narrow key spaces.
    """
    space_bits = 8 * key_bytes
    if n_flows > (1 << min(space_bits, 62)):
        raise ValueError(f"{n_flows} flows do not fit in {key_bytes}-byte keys")
    ids = np.arange(n_flows, dtype=np.uint64)
    base_lo = np.uint64(mix64(seed ^ 0xA076_1D64_78BD_642F))
    base_hi = np.uint64(mix64(seed ^ 0xE703_7ED1_A0B4_28DB))
    lo_mask = np.uint64((1 << min(space_bits, 64)) - 1)
    hi_mask = np.uint64((1 << max(space_bits - 64, 0)) - 1) if space_bits > 64 else np.uint64(0)
    salt = np.uint64(0)
    for _ in range(64):
        lo = _np_mix64(ids + base_lo + salt) & lo_mask
        hi = (_np_mix64(ids + base_hi + salt) & hi_mask) if space_bits > 64 else np.zeros(
            n_flows, dtype=np.uint64
        )
        pairs = np.empty(n_flows, dtype=[("lo", "<u8"), ("hi", "<u8")])
        pairs["lo"] = lo
        pairs["hi"] = hi
        uniq, inverse, counts = np.unique(pairs, return_inverse=True, return_counts=True)
        if len(uniq) == n_flows:
            return lo, hi
        # re-salt only the colliding ids and try again
        dup = counts[inverse] > 1
        ids = ids.copy()
        ids[dup] += np.uint64(n_flows)
        salt += np.uint64(GOLDEN)
    raise RuntimeError("could not derive distinct flow keys (key space too tight)")


def _draw_values(rng: np.random.Generator, n: int, value_model: str) -> np.ndarray:
    if value_model == "unit":
        return np.ones(n, dtype=np.uint64)
    if value_model == "sizes":
        weights = np.array([w for w, _, _ in SIZE_MIXTURE])
        comp = rng.choice(len(SIZE_MIXTURE), size=n, p=weights / weights.sum())
        out = np.empty(n, dtype=np.uint64)
        for ci, (_, low, high) in enumerate(SIZE_MIXTURE):
            m = comp == ci
            out[m] = rng.integers(low, high, size=int(m.sum()), dtype=np.uint64)
        return out
    raise ValueError(f"unknown value model {value_model!r}")


def gen_zipf(
    n_flows: int,
    n_packets: int,
    skew: float,
    value_model: str = "unit",
    seed: int = 0,
    *,
    epoch: int = 0,
    key_bytes: int = 8,
) -> tuple[Trace, dict[bytes, int]]:
    """Synthetic single-epoch Zipf stream plus its exact per-flow sums.

    Flow popularity follows rank**(-skew). The flow key universe depends
    only on (seed, key_bytes); which flows sit at the head is reshuffled
    per epoch, so consecutive epochs of the same seed produce genuine
    heavy changes. Output is a pure function of all arguments.
    """
    if n_flows < 1 or n_packets < 1:
        raise ValueError("n_flows and n_packets must be >= 1")
    if skew <= 0:
        raise ValueError("skew must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed & ((1 << 63) - 1), epoch, 0x5A1F]))

    probs = np.arange(1, n_flows + 1, dtype=np.float64) ** (-skew)
    probs /= probs.sum()
    ranks = rng.choice(n_flows, size=n_packets, p=probs)
    perm = rng.permutation(n_flows)
    flow_ids = perm[ranks]
    values = _draw_values(rng, n_packets, value_model)

    keys_lo, keys_hi = _distinct_flow_keys(n_flows, key_bytes, seed)
    trace = Trace(
        key_bytes,
        np.full(n_packets, epoch, dtype=np.uint32),
        keys_lo[flow_ids],
        keys_hi[flow_ids],
        values,
        value_model,
    )

    sums = np.zeros(n_flows, dtype=np.int64)
    np.add.at(sums, flow_ids, values.astype(np.int64))
    table = {
        lanes_to_key(int(keys_lo[f]), int(keys_hi[f]), key_bytes): int(sums[f])
        for f in np.flatnonzero(sums)
    }
    return trace, table


def gen_zipf_epochs(
    n_flows: int,
    n_packets: int,
    skew: float,
    value_model: str = "unit",
    seed: int = 0,
    *,
    epochs: int = 1,
    key_bytes: int = 8,
) -> Trace:
    """Multi-epoch trace: one independent Zipf epoch per index."""
    parts = [
        gen_zipf(
            n_flows, n_packets, skew, value_model, seed, epoch=e, key_bytes=key_bytes
        )[0]
        for e in range(epochs)
    ]
    return concat(parts)


# -- epoch splitting and partitioning -----------------------------------------


def split_epochs(trace: Trace) -> list[tuple[int, Trace]]:
    """Stable partition of a trace by epoch index, ascending."""
    out = []
    for e in np.unique(trace.epoch):
        idx = np.flatnonzero(trace.epoch == e)
        out.append((int(e), trace.take(idx)))
    return out


@dataclass(frozen=True)
class NetworkWidePolicy:
    """Each packet goes to exactly one of q detectors.

    ``per_flow`` pins all packets of a flow to one detector; otherwise
    every packet picks a detector uniformly (a flow's traffic may then
    land on any non-empty subset of detectors).
    """

    q: int
    seed: int = 0
    per_flow: bool = False

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError("q must be >= 1")


def _scalable_subsets(
    lo: np.ndarray, hi: np.ndarray, q: int, d: int, selection_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per distinct flow, the d-subset of detectors it may use."""
    pairs = np.empty(len(lo), dtype=[("lo", "<u8"), ("hi", "<u8")])
    pairs["lo"] = lo
    pairs["hi"] = hi
    uniq, inverse = np.unique(pairs, return_inverse=True)
    subset_seed = mix64(selection_seed ^ 0x9E6C_63D0_876A_68EE)
    subsets = np.empty((len(uniq), d), dtype=np.int64)
    for f in range(len(uniq)):
        st = hash_key(int(uniq["lo"][f]), int(uniq["hi"][f]), subset_seed)
        slots = list(range(q))
        for t in range(d):
            st = mix64(st + GOLDEN)
            pick = t + st % (q - t)
            slots[t], slots[pick] = slots[pick], slots[t]
        subsets[f] = slots[:d]
    return subsets, inverse


def partition(trace: Trace, policy) -> list[Trace]:
    """Split a trace across detectors; the outputs' multiset union is the
    input.

    With a ``ScalableConfig`` every flow is mapped to a fixed d-subset of
    the q detectors and each of its packets picks one of the d uniformly.
    With a ``NetworkWidePolicy`` each packet lands on exactly one
    detector per the policy rule.
    """
    from .distributed import ScalableConfig

    if isinstance(policy, ScalableConfig):
        q, d = policy.q, policy.d
        subsets, inverse = _scalable_subsets(
            trace.key_lo, trace.key_hi, q, d, policy.selection_seed
        )
        rng = np.random.default_rng(
            np.random.SeedSequence([policy.selection_seed & ((1 << 63) - 1), 0x7AC8])
        )
        pick = rng.integers(0, d, size=len(trace))
        det = subsets[inverse, pick]
    elif isinstance(policy, NetworkWidePolicy):
        q = policy.q
        if policy.per_flow:
            det_seed = mix64(policy.seed ^ 0x1F83_D9AB_FB41_BD6B)
            det = np_columns(trace.key_lo, trace.key_hi, det_seed, q).astype(np.int64)
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([policy.seed & ((1 << 63) - 1), 0x3E7])
            )
            det = rng.integers(0, q, size=len(trace))
    else:
        raise TypeError(f"unsupported partition policy {policy!r}")

    return [trace.take(np.flatnonzero(det == k)) for k in range(q)]
