"""Single-row sketch updates under switch-pipeline constraints.

Match-action pipelines allow one read-modify-write per register array per
packet pass, and only shallow branching. That rules out the plain update
rule, whose key replacement both reads and writes the key and vote
registers with cross-conditions. The workable forms move the "change
point" (replace key, negate vote counter) into a second pass of the
packet through the pipeline (recirculation), or reshape the branches so
no second pass is needed:

* ``full_5tuple``: 104-bit keys split into four sub-key registers
  compared over two stages into a match flag; pass 1 updates the value
  sum and (conditionally) the vote counter, and recirculates on the
  change point; pass 2 writes all sub-keys and sets votes to
  (value - votes-at-entry).
* ``size_32``: 32-bit keys; key and votes live in one paired register,
  so pass 1 can already write the key at the change point, leaving only
  the vote negation to pass 2.
* ``packet_32``: 32-bit keys, unit values. At the change point the vote
  counter is exactly zero, so "take over" and "count up" collapse into
  one branch and a single pass suffices. Never recirculates.

Every branch condition evaluates against the value read at stage entry,
never against a value written earlier in the same pass; that is the only
reading under which these forms replay the plain update rule exactly.

With the ``immediate`` recirculation policy the second pass lands before
the next packet, and each variant is state-identical to the plain
single-row update(unit values for ``packet_32``). The ``delayed(k)``
policy applies second passes only after k later packets, which models
pipeline latency and exposes the races a real pipeline would risk;
``recirc_count`` still counts first-pass recirculation decisions only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from ._hash import column_of, key_to_lanes, lanes_to_key, row_seeds
from .sketch import Sketch, SketchConfig
from .traffic import Trace

FULL_5TUPLE = "full_5tuple"
SIZE_32 = "size_32"
PACKET_32 = "packet_32"

MODES = (FULL_5TUPLE, SIZE_32, PACKET_32)
_KEY_BYTES = {FULL_5TUPLE: 13, SIZE_32: 4, PACKET_32: 4}

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RecircPolicy:
    """When a recirculated packet's second pass is applied.

    ``delay == 0`` is immediate (before the next packet). ``delay == k``
    applies it only after k subsequent packets have gone through their
    first pass.
    """

    delay: int = 0

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("delay must be >= 0")

    @classmethod
    def immediate(cls) -> "RecircPolicy":
        return cls(0)

    @classmethod
    def delayed(cls, k: int) -> "RecircPolicy":
        if k < 1:
            raise ValueError("delayed policy needs k >= 1")
        return cls(k)


IMMEDIATE = RecircPolicy.immediate()


def make_5tuple(src_ip: int, dst_ip: int, src_port: int, dst_port: int, proto: int) -> bytes:
    """13-byte flow key laid out as the four pipeline sub-keys:
    source IP, destination IP, port pair, protocol."""
    return (
        src_ip.to_bytes(4, "big")
        + dst_ip.to_bytes(4, "big")
        + src_port.to_bytes(2, "big")
        + dst_port.to_bytes(2, "big")
        + proto.to_bytes(1, "big")
    )


class PisaState:
    """Single-row register state of one pipeline variant."""

    def __init__(
        self,
        mode: str,
        cols: int,
        seed: int = 1,
        policy: RecircPolicy = IMMEDIATE,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if cols < 1:
            raise ValueError("cols must be >= 1")
        self.mode = mode
        self.cols = cols
        self.seed = seed
        self.policy = policy
        self._sums = [0] * cols
        self._votes = [0] * cols
        self._klo = [0] * cols
        self._khi = [0] * cols
        self._row_seed = int(row_seeds(seed, 1)[0])
        self.pkt_count = 0
        self.recirc_count = 0
        self._pending: deque[tuple[int, int, int, int, int]] = deque()

    @property
    def key_bytes(self) -> int:
        return _KEY_BYTES[self.mode]

    def column(self, key: bytes) -> int:
        lo, hi = self._check_key(key)
        return column_of(lo, hi, self._row_seed, self.cols)

    def _check_key(self, key: bytes) -> tuple[int, int]:
        if len(key) != self.key_bytes:
            raise ValueError(
                f"{self.mode} keys are {self.key_bytes} bytes, got {len(key)}"
            )
        return key_to_lanes(key)

    # -- per-packet engine --------------------------------------------------

    def update(self, key: bytes, value: int = 1) -> None:
        lo, hi = self._check_key(key)
        if self.mode == PACKET_32:
            if value != 1:
                raise ValueError("packet counting takes unit values only")
        elif value < 1:
            raise ValueError("value must be >= 1")
        col = column_of(lo, hi, self._row_seed, self.cols)
        self._apply(col, lo, hi, value)

    def update_stream(self, trace: Trace) -> None:
        """Feed a whole trace (same key width); packet counting uses one
        per record regardless of the record's value field."""
        if trace.key_bytes != self.key_bytes:
            raise ValueError(
                f"trace key width {trace.key_bytes} != mode width {self.key_bytes}"
            )
        from ._hash import np_columns

        cols = np_columns(trace.key_lo, trace.key_hi, self._row_seed, self.cols)
        col_list = cols.tolist()
        lo_list = trace.key_lo.tolist()
        hi_list = trace.key_hi.tolist()
        if self.mode == PACKET_32:
            val_list = [1] * len(trace)
        else:
            val_list = trace.value.tolist()
        apply = self._apply
        for col, lo, hi, v in zip(col_list, lo_list, hi_list, val_list):
            apply(col, lo, hi, v)

    def _apply(self, col: int, lo: int, hi: int, v: int) -> None:
        pending = self._pending
        while pending and pending[0][0] <= self.pkt_count:
            _, pcol, plo, phi, pv = pending.popleft()
            self._second_pass(pcol, plo, phi, pv)
        if self.mode == FULL_5TUPLE:
            repass = self._first_full(col, lo, hi, v)
        elif self.mode == SIZE_32:
            repass = self._first_size32(col, lo, v)
        else:
            repass = self._first_pkt32(col, lo)
        self.pkt_count += 1
        if repass:
            self.recirc_count += 1
            if self.policy.delay == 0:
                self._second_pass(col, lo, hi, v)
            else:
                pending.append((self.pkt_count + self.policy.delay, col, lo, hi, v))

    def flush(self) -> None:
        """Apply all outstanding second passes (end of epoch)."""
        while self._pending:
            _, col, lo, hi, v = self._pending.popleft()
            self._second_pass(col, lo, hi, v)

    def _first_full(self, col: int, lo: int, hi: int, v: int) -> bool:
        self._sums[col] += v
        # stages 1-2: sub-key pairs compared against the stored key halves
        flag = self._klo[col] != lo or self._khi[col] != hi
        c_read = self._votes[col]
        if not flag:
            self._votes[col] = c_read + v
        elif c_read >= v:
            self._votes[col] = c_read - v
        return flag and c_read < v

    def _first_size32(self, col: int, lo: int, v: int) -> bool:
        self._sums[col] += v
        matched = self._klo[col] == lo
        c_read = self._votes[col]
        if matched:
            self._votes[col] = c_read + v
        elif c_read >= v:
            self._votes[col] = c_read - v
        takeover = not matched and c_read < v
        if takeover:
            # key and votes share a paired register, so the key write
            # already happens in the first pass
            self._klo[col] = lo
        return takeover

    def _first_pkt32(self, col: int, lo: int) -> bool:
        self._sums[col] += 1
        matched = self._klo[col] == lo
        c_read = self._votes[col]
        if matched or c_read == 0:
            self._votes[col] = c_read + 1
        else:
            self._votes[col] = c_read - 1
        if not matched and c_read == 0:
            self._klo[col] = lo
        return False

    def _second_pass(self, col: int, lo: int, hi: int, v: int) -> None:
        if self.mode == FULL_5TUPLE:
            self._klo[col] = lo
            self._khi[col] = hi
        # register subtraction wraps like hardware; only delayed-policy
        # races can make it wrap
        self._votes[col] = (v - self._votes[col]) & _MASK64

    # -- inspection ----------------------------------------------------------

    def bucket(self, col: int) -> tuple[int, bytes, int]:
        return (
            self._sums[col],
            lanes_to_key(self._klo[col], self._khi[col], self.key_bytes),
            self._votes[col],
        )

    @property
    def in_flight(self) -> int:
        return len(self._pending)


def pisa_update_full(state: PisaState, key: bytes, value: int) -> None:
    if state.mode != FULL_5TUPLE:
        raise ValueError(f"state mode is {state.mode}, expected {FULL_5TUPLE}")
    state.update(key, value)


def pisa_update_size32(state: PisaState, key: bytes, value: int) -> None:
    if state.mode != SIZE_32:
        raise ValueError(f"state mode is {state.mode}, expected {SIZE_32}")
    state.update(key, value)


def pisa_update_pkt32(state: PisaState, key: bytes) -> None:
    if state.mode != PACKET_32:
        raise ValueError(f"state mode is {state.mode}, expected {PACKET_32}")
    state.update(key, 1)


def recirc_ratio(state: PisaState) -> float:
    """Fraction of packets that took a second pipeline pass."""
    if state.pkt_count == 0:
        return 0.0
    return state.recirc_count / state.pkt_count


@dataclass(frozen=True)
class EquivalenceResult:
    equivalent: bool
    packets: int
    first_divergence: Optional[int] = None
    detail: str = ""


def equivalence_check(
    trace: Trace, mode: str, cols: int, seed: int = 1
) -> EquivalenceResult:
    """Run a pipeline variant and the plain single-row update side by
    side under immediate recirculation, comparing the touched column
    after every packet.

    Packet counting runs with unit values on both sides. Divergence is
    reported as data (first diverging packet index), not an error.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    kb = _KEY_BYTES[mode]
    if trace.key_bytes != kb:
        raise ValueError(f"trace key width {trace.key_bytes} != mode width {kb}")
    state = PisaState(mode, cols, seed, IMMEDIATE)
    ref = Sketch(SketchConfig(rows=1, cols=cols, key_bytes=kb, seed=seed))

    lo_list = trace.key_lo.tolist()
    hi_list = trace.key_hi.tolist()
    val_list = [1] * len(trace) if mode == PACKET_32 else trace.value.tolist()
    row_seed = state._row_seed
    for p, (lo, hi, v) in enumerate(zip(lo_list, hi_list, val_list)):
        col = column_of(lo, hi, row_seed, cols)
        state._apply(col, lo, hi, v)
        key = lanes_to_key(lo, hi, kb)
        ref.update(key, v)
        got = (state._sums[col], state._klo[col], state._khi[col], state._votes[col])
        want_bucket = ref.bucket(0, col)
        want_lo, want_hi = key_to_lanes(want_bucket.key)
        want = (want_bucket.value_sum, want_lo, want_hi, want_bucket.votes)
        if got != want:
            return EquivalenceResult(
                equivalent=False,
                packets=len(trace),
                first_divergence=p,
                detail=f"column {col}: pipeline {got} vs plain update {want}",
            )
    return EquivalenceResult(equivalent=True, packets=len(trace))


def simulate_recirc(
    trace: Trace,
    mode: str,
    cols: int,
    seed: int = 1,
    policy: RecircPolicy = IMMEDIATE,
) -> list[dict]:
    """Per-epoch recirculation accounting with a fresh state per epoch."""
    from .traffic import split_epochs

    rows = []
    for epoch, sub in split_epochs(trace):
        state = PisaState(mode, cols, seed, policy)
        state.update_stream(sub)
        state.flush()
        rows.append(
            {
                "mode": mode,
                "epoch": epoch,
                "packets": state.pkt_count,
                "recirculated": state.recirc_count,
                "ratio": recirc_ratio(state),
            }
        )
    return rows
