"""Query-aware channel salience scoring and precision-tier assignment.

The score of a key channel d combines two ingredients:

    importance   I_d = mean over accumulated query rows of |Q[i, d]|
    sensitivity  S_d = (max_t K[t, d] - min_t K[t, d]) / (2**bits - 1)
    salience     A_d = I_d * S_d

Importance is a property of the whole query history (a running mean, never
reset within a sequence); sensitivity is a property of the block of keys
about to be quantized; their product estimates how much quantization noise
in channel d leaks into attention logits. Channels are then placed into
three precision tiers by two thresholds:

    A_d >  tau_full            -> full precision (16-bit)
    tau_mid < A_d <= tau_full  -> 4-bit
    A_d <= tau_mid             -> 2-bit

Both comparisons against a threshold value itself resolve to the cheaper
tier: a channel sitting exactly on tau_full gets 4 bits, exactly on
tau_mid gets 2 bits.

Scores are meaningful only on post-rotation tensors: callers must apply
the rotary map (see apply_rope) to queries and keys before feeding them
here, because that is the form in which keys are cached and attended to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyWindow, InvalidInput, InvalidThresholds
from .quant import BitWidth

__all__ = [
    "QueryAccumulator",
    "PrecisionAssignment",
    "importance_score",
    "sensitivity_score",
    "salience_score",
    "assign_precision",
    "aggregate_gqa_importance",
    "apply_rope",
]


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be a 1-D row or 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite elements")
    return arr


class QueryAccumulator:
    """Running per-channel mean of absolute query activations.

    Rows are folded into the sum strictly one at a time, in arrival order.
    That makes the accumulator exactly invariant to how a fixed row stream
    is split into blocks (float addition is not associative, so a blocked
    reduction would not be), which the streaming cache relies on for
    bit-identical replay.
    """

    __slots__ = ("_abs_sum", "_count")

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidInput("accumulator dimension must be positive")
        self._abs_sum = np.zeros(dim, dtype=np.float64)
        self._count = 0

    @property
    def dim(self) -> int:
        return self._abs_sum.shape[0]

    @property
    def count(self) -> int:
        """Number of query rows folded in so far."""
        return self._count

    @property
    def abs_sum(self) -> np.ndarray:
        """Per-channel sum of |Q| (a copy)."""
        return self._abs_sum.copy()

    def add(self, q_block) -> "QueryAccumulator":
        """Fold a row or a block of rows into the accumulator.

        An empty block is a no-op. Dimension mismatch or non-finite
        entries raise InvalidInput.
        """
        q = np.asarray(q_block, dtype=np.float64)
        if q.size == 0:
            return self
        q = _as_matrix(q, "q_block")
        if q.shape[1] != self.dim:
            raise InvalidInput(
                f"q_block has {q.shape[1]} channels, accumulator expects {self.dim}"
            )
        for row in np.abs(q):
            self._abs_sum += row
        self._count += q.shape[0]
        return self

    def importance(self) -> np.ndarray:
        """Per-channel mean |Q| over everything folded in so far."""
        if self._count == 0:
            raise EmptyWindow("no query rows accumulated")
        return self._abs_sum / self._count

    def copy(self) -> "QueryAccumulator":
        dup = QueryAccumulator(self.dim)
        dup._abs_sum = self._abs_sum.copy()
        dup._count = self._count
        return dup


def importance_score(accumulator: QueryAccumulator) -> np.ndarray:
    """Importance vector of an accumulator (mean |Q| per channel)."""
    return accumulator.importance()


def sensitivity_score(key_block, bits=BitWidth.UINT2) -> np.ndarray:
    """Per-channel quantization step (max - min) / (2**bits - 1).

    `key_block` is T x D (at least one row). By convention the reference
    bit width is 2 regardless of the tier a channel later lands in, so
    that the score reflects the worst quantization the channel could get.
    """
    width = BitWidth(int(bits))
    if width == BitWidth.FULL:
        raise InvalidInput("sensitivity is defined for quantized widths 2 and 4")
    keys = _as_matrix(key_block, "key_block")
    if keys.shape[0] == 0 or keys.size == 0:
        raise InvalidInput("key block must contain at least one row")
    levels = 2 ** int(width) - 1
    return (keys.max(axis=0) - keys.min(axis=0)) / levels


def salience_score(importance, sensitivity) -> np.ndarray:
    """Elementwise product I_d * S_d."""
    imp = np.asarray(importance, dtype=np.float64)
    sens = np.asarray(sensitivity, dtype=np.float64)
    if imp.shape != sens.shape or imp.ndim != 1:
        raise InvalidInput("importance and sensitivity must be 1-D vectors of equal length")
    if not (np.all(np.isfinite(imp)) and np.all(np.isfinite(sens))):
        raise InvalidInput("scores contain non-finite elements")
    if np.any(imp < 0) or np.any(sens < 0):
        raise InvalidInput("scores are non-negative by construction")
    return imp * sens


@dataclass(frozen=True)
class PrecisionAssignment:
    """Per-channel storage widths for one flushed block of keys.

    `bits` holds 16, 4, or 2 per channel. `thresholds` records the
    (tau_full, tau_mid) pair that produced the assignment, or None when it
    came from a budgeted top-k policy instead.
    """

    bits: np.ndarray
    thresholds: tuple[float, float] | None = None

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=np.uint8)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidInput("assignment must cover at least one channel")
        if not np.all(np.isin(arr, (2, 4, 16))):
            raise InvalidInput("channel widths must be 2, 4, or 16")
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)
        if self.thresholds is not None:
            tau_full, tau_mid = (float(t) for t in self.thresholds)
            if math.isnan(tau_full) or math.isnan(tau_mid):
                raise InvalidThresholds("thresholds must not be NaN")
            if tau_mid > tau_full:
                raise InvalidThresholds(
                    f"lower threshold {tau_mid} exceeds upper threshold {tau_full}"
                )
            object.__setattr__(self, "thresholds", (tau_full, tau_mid))

    @property
    def dim(self) -> int:
        return self.bits.shape[0]

    def channels_at(self, width) -> np.ndarray:
        """Sorted channel indices stored at the given width."""
        return np.flatnonzero(self.bits == int(width))

    def tier_counts(self) -> tuple[int, int, int]:
        """(n_full, n_mid, n_low) channel counts."""
        return (
            int(np.count_nonzero(self.bits == 16)),
            int(np.count_nonzero(self.bits == 4)),
            int(np.count_nonzero(self.bits == 2)),
        )

    def mean_bits(self) -> float:
        """Average storage width per key element under this assignment."""
        return float(self.bits.astype(np.float64).mean())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PrecisionAssignment):
            return NotImplemented
        return self.thresholds == other.thresholds and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.thresholds, self.bits.tobytes()))


def assign_precision(salience, tau_full: float, tau_mid: float) -> PrecisionAssignment:
    """Split channels into 16/4/2-bit tiers by two salience thresholds.

    Raises InvalidThresholds when tau_mid > tau_full (the tiers would
    overlap). Infinite thresholds are legal sentinels: (-inf, -inf) sends
    every channel to full precision, (+inf, +inf) to 2-bit.
    """
    scores = np.asarray(salience, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InvalidInput("salience must be a non-empty 1-D vector")
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("salience contains non-finite elements")
    tau_full = float(tau_full)
    tau_mid = float(tau_mid)
    if math.isnan(tau_full) or math.isnan(tau_mid):
        raise InvalidThresholds("thresholds must not be NaN")
    if tau_mid > tau_full:
        raise InvalidThresholds(
            f"lower threshold {tau_mid} exceeds upper threshold {tau_full}"
        )
    bits = np.full(scores.shape, 2, dtype=np.uint8)
    bits[scores > tau_mid] = 4
    bits[scores > tau_full] = 16
    return PrecisionAssignment(bits, (tau_full, tau_mid))


def aggregate_gqa_importance(accumulators, heads_per_kv_group: int) -> QueryAccumulator:
    """Merge per-head accumulators for query heads sharing one KV head.

    All `heads_per_kv_group` accumulators must share dimension and count;
    the merged accumulator sums their absolute sums and counts, so its
    importance is the group-wide mean |Q|.
    """
    accs = list(accumulators)
    if heads_per_kv_group < 1:
        raise InvalidInput("a KV group must contain at least one query head")
    if len(accs) != heads_per_kv_group:
        raise InvalidInput(
            f"expected {heads_per_kv_group} accumulators, got {len(accs)}"
        )
    dim = accs[0].dim
    count = accs[0].count
    for acc in accs[1:]:
        if acc.dim != dim:
            raise InvalidInput("accumulators disagree on channel dimension")
        if acc.count != count:
            raise InvalidInput("accumulators disagree on row count")
    merged = QueryAccumulator(dim)
    for acc in accs:
        merged._abs_sum += acc._abs_sum
        merged._count += acc.count
    return merged


def apply_rope(x, positions, theta_base: float = 10000.0) -> np.ndarray:
    """Rotate channel pairs (2j, 2j+1) of each row by its position angle.

    Row i is rotated by angles positions[i] * theta_base**(-2j / D) for
    pair index j. The channel count D must be even, and `positions` must
    supply one entry per row.
    """
    mat = _as_matrix(x, "x")
    rows, dim = mat.shape
    if dim % 2 != 0:
        raise InvalidInput("rotary transform requires an even channel count")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    if pos.shape[0] != rows:
        raise InvalidInput(f"{rows} rows need {rows} positions, got {pos.shape[0]}")
    if theta_base <= 0:
        raise InvalidInput("theta_base must be positive")

    pair_exp = np.arange(dim // 2, dtype=np.float64) * (-2.0 / dim)
    angles = pos[:, None] * (theta_base ** pair_exp)[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = mat[:, 0::2], mat[:, 1::2]
    out = np.empty_like(mat)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out
