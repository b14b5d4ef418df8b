"""Streaming mixed-precision KV cache with a residual-buffer protocol.

Incoming (key, value, query) rows accumulate in a full-precision residual
buffer. When the buffer reaches `residual_len` tokens it is flushed: the
buffered keys are scored (sensitivity from the buffered block itself,
importance from the query history), each key channel is assigned a
precision tier by the active policy, and the block is frozen into
immutable storage:

- full-precision channels become a sparse outlier store (sorted channel
  index list plus dense float columns);
- 4-bit and 2-bit channels are quantized per channel in runs of
  `group_size` consecutive tokens, each run with its own (zero, scale);
- values are quantized per token, in runs of `group_size` consecutive
  elements along the hidden dimension, so no (zero, scale) pair ever
  spans two tokens.

The first `sink_len` tokens of the sequence are exempt: at flush time they
are split off into their own full-precision block and never quantized or
scored. A final partial block simply stays in the residual buffer; callers
may force it out with flush().

Once flushed, a block never changes, so reconstructions of tokens [0, t]
are stable under further appends. Flush boundaries, accumulator folds, and
packing are all deterministic, which makes token-at-a-time feeding and
block-at-a-time feeding of the same rows bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidInput,
    InvalidThresholds,
    NothingToFlush,
    UndefinedMetric,
)
from .policies import AllocationPolicy, PolicyKind, resolve_assignment
from .quant import BitWidth, QuantizedGroup, dequantize_group, quantize_group
from .salience import PrecisionAssignment, QueryAccumulator, sensitivity_score

__all__ = ["CacheConfig", "KeyBlock", "ValueBlock", "MixedKVCache"]


@dataclass(frozen=True)
class CacheConfig:
    """Geometry and scoring parameters of the cache.

    dim                 key/query channel count D
    value_dim           value channel count (defaults to dim)
    group_size          tokens (keys) or elements (values) per quant group
    residual_len        residual-buffer capacity; must divide into groups
    sink_len            leading tokens always kept full-precision
    tau_full, tau_mid   salience thresholds for the 16/4/2-bit tiers
    value_bits          value storage width; FULL disables value quantization
    heads_per_kv_group  query heads feeding one KV head (GQA)
    window_importance   score importance from the current block's queries
                        only, instead of the running sequence-wide mean
    rope_theta          base for the rotary position transform
    """

    dim: int
    value_dim: int | None = None
    group_size: int = 32
    residual_len: int = 128
    sink_len: int = 32
    tau_full: float = 1.0
    tau_mid: float = 0.5
    value_bits: BitWidth = BitWidth.UINT2
    heads_per_kv_group: int = 1
    window_importance: bool = False
    rope_theta: float = 10000.0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput("dim must be positive")
        value_dim = self.dim if self.value_dim is None else int(self.value_dim)
        if value_dim < 1:
            raise InvalidInput("value_dim must be positive")
        object.__setattr__(self, "value_dim", value_dim)
        if self.group_size < 1:
            raise InvalidInput("group_size must be positive")
        if self.residual_len < 1:
            raise InvalidInput("residual_len must be positive")
        if self.residual_len % self.group_size != 0:
            raise InvalidInput(
                f"residual_len {self.residual_len} is not a multiple of "
                f"group_size {self.group_size}"
            )
        if self.sink_len < 0:
            raise InvalidInput("sink_len must be non-negative")
        tau_full, tau_mid = float(self.tau_full), float(self.tau_mid)
        if np.isnan(tau_full) or np.isnan(tau_mid):
            raise InvalidThresholds("thresholds must not be NaN")
        if tau_mid > tau_full:
            raise InvalidThresholds(
                f"lower threshold {tau_mid} exceeds upper threshold {tau_full}"
            )
        object.__setattr__(self, "tau_full", tau_full)
        object.__setattr__(self, "tau_mid", tau_mid)
        object.__setattr__(self, "value_bits", BitWidth(int(self.value_bits)))
        if self.heads_per_kv_group < 1:
            raise InvalidInput("heads_per_kv_group must be positive")
        if not self.rope_theta > 0:
            raise InvalidInput("rope_theta must be positive")

    @property
    def thresholds(self) -> tuple[float, float]:
        return (self.tau_full, self.tau_mid)


@dataclass(eq=False)
class KeyBlock:
    """One immutable flushed block of keys.

    Sink blocks carry `keys_exact` and no assignment. Quantized blocks
    carry the assignment, the full-precision outlier columns, and the
    packed groups of every 4-/2-bit channel (in token runs of the
    configured group size).
    """

    start: int
    length: int
    keys_exact: np.ndarray | None = None
    assignment: PrecisionAssignment | None = None
    outlier_channels: np.ndarray | None = None
    outlier_columns: np.ndarray | None = None
    groups: dict[int, tuple[QuantizedGroup, ...]] | None = None
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def is_sink(self) -> bool:
        return self.keys_exact is not None

    def dense(self) -> np.ndarray:
        """Reconstructed (length, dim) block; cached, treat as read-only."""
        if self._dense is None:
            if self.is_sink:
                self._dense = self.keys_exact
            else:
                out = np.empty((self.length, self.assignment.dim), dtype=np.float64)
                if self.outlier_channels.size:
                    out[:, self.outlier_channels] = self.outlier_columns
                for channel, runs in self.groups.items():
                    out[:, channel] = np.concatenate(
                        [dequantize_group(g) for g in runs]
                    )
                self._dense = out
        return self._dense


@dataclass(eq=False)
class ValueBlock:
    """One immutable flushed block of values (per-token quantized rows)."""

    start: int
    length: int
    dim: int
    values_exact: np.ndarray | None = None
    rows: tuple[tuple[QuantizedGroup, ...], ...] | None = None
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def is_exact(self) -> bool:
        return self.values_exact is not None

    def dense(self) -> np.ndarray:
        """Reconstructed (length, dim) block; cached, treat as read-only."""
        if self._dense is None:
            if self.is_exact:
                self._dense = self.values_exact
            else:
                out = np.empty((self.length, self.dim), dtype=np.float64)
                for i, runs in enumerate(self.rows):
                    out[i] = np.concatenate([dequantize_group(g) for g in runs])
                self._dense = out
        return self._dense


def _token_runs(length: int, group_size: int):
    for lo in range(0, length, group_size):
        yield lo, min(lo + group_size, length)


class MixedKVCache:
    """Streaming KV cache quantized under an allocation policy.

    Rows must arrive post-rotation (the cache stores keys in the form they
    are attended to, and scores queries in that same form). Under the
    FULL_PRECISION policy nothing is quantized, values included.
    """

    def __init__(self, config: CacheConfig, policy: AllocationPolicy | None = None):
        self.config = config
        self.policy = policy if policy is not None else AllocationPolicy.salience()
        self._value_pass_through = (
            config.value_bits == BitWidth.FULL
            or self.policy.kind == PolicyKind.FULL_PRECISION
        )
        self._running = QueryAccumulator(config.dim)
        self._window = QueryAccumulator(config.dim)
        self._key_blocks: list[KeyBlock] = []
        self._value_blocks: list[ValueBlock] = []
        self._res_keys: list[np.ndarray] = []
        self._res_values: list[np.ndarray] = []
        self._flushed_tokens = 0

    # -- inspection ---------------------------------------------------

    @property
    def key_blocks(self) -> tuple[KeyBlock, ...]:
        return tuple(self._key_blocks)

    @property
    def value_blocks(self) -> tuple[ValueBlock, ...]:
        return tuple(self._value_blocks)

    @property
    def assignments(self) -> tuple[PrecisionAssignment | None, ...]:
        """Per-key-block assignment history; None marks sink blocks."""
        return tuple(blk.assignment for blk in self._key_blocks)

    @property
    def num_tokens(self) -> int:
        return self._flushed_tokens + len(self._res_keys)

    @property
    def flushed_tokens(self) -> int:
        return self._flushed_tokens

    @property
    def residual_tokens(self) -> int:
        return len(self._res_keys)

    @property
    def query_accumulator(self) -> QueryAccumulator:
        """The running (sequence-wide) accumulator; treat as read-only."""
        return self._running

    # -- feeding ------------------------------------------------------

    def _check_row(self, row, dim: int, name: str) -> np.ndarray:
        arr = np.asarray(row, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise InvalidInput(f"{name} must have shape ({dim},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput(f"{name} contains non-finite elements")
        return arr.copy()

    def _check_query(self, q_row) -> np.ndarray:
        q = np.asarray(q_row, dtype=np.float64)
        heads = self.config.heads_per_kv_group
        if q.ndim == 1:
            if heads != 1:
                raise InvalidInput(
                    f"config expects {heads} query heads per token, got a single row"
                )
            q = q[None, :]
        if q.ndim != 2 or q.shape != (heads, self.config.dim):
            raise InvalidInput(
                f"q_row must have shape ({heads}, {self.config.dim}), got {q.shape}"
            )
        if not np.all(np.isfinite(q)):
            raise InvalidInput("q_row contains non-finite elements")
        return q

    def append(self, k_row, v_row, q_row, position: int | None = None) -> None:
        """Feed one token; auto-flushes when the residual buffer fills.

        `q_row` is (dim,) for a single query head, or
        (heads_per_kv_group, dim) when several query heads share this KV
        head; every head's row feeds the importance statistics. An
        explicit `position` is checked against the append counter.
        """
        if position is not None and position != self.num_tokens:
            raise InvalidInput(
                f"position {position} out of order, next token is {self.num_tokens}"
            )
        k = self._check_row(k_row, self.config.dim, "k_row")
        v = self._check_row(v_row, self.config.value_dim, "v_row")
        q = self._check_query(q_row)
        self._running.add(q)
        self._window.add(q)
        self._res_keys.append(k)
        self._res_values.append(v)
        if len(self._res_keys) == self.config.residual_len:
            self.flush()

    def extend(self, keys, values, queries) -> None:
        """Feed a block of tokens row by row (flushing at capacity).

        `keys` is (L, dim), `values` is (L, value_dim), `queries` is
        (L, dim) or (L, heads_per_kv_group, dim). Equivalent, bit for bit,
        to L append() calls.
        """
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        queries = np.asarray(queries, dtype=np.float64)
        if keys.ndim != 2 or values.ndim != 2 or queries.ndim not in (2, 3):
            raise InvalidInput("extend expects stacked rows")
        if not (keys.shape[0] == values.shape[0] == queries.shape[0]):
            raise InvalidInput("keys, values, and queries disagree on token count")
        for i in range(keys.shape[0]):
            self.append(keys[i], values[i], queries[i])

    # -- flushing -----------------------------------------------------

    def flush(self) -> None:
        """Freeze the residual buffer into immutable block storage.

        Splits off any sink-region rows first, then scores and quantizes
        the rest under the active policy. Raises NothingToFlush when the
        residual buffer is empty.
        """
        if not self._res_keys:
            raise NothingToFlush("residual buffer is empty")
        keys = np.array(self._res_keys, dtype=np.float64)
        values = np.array(self._res_values, dtype=np.float64)
        start = self._flushed_tokens
        length = keys.shape[0]

        sink_cut = min(max(self.config.sink_len - start, 0), length)
        if sink_cut > 0:
            self._key_blocks.append(
                KeyBlock(start=start, length=sink_cut, keys_exact=keys[:sink_cut])
            )
            self._value_blocks.append(
                ValueBlock(
                    start=start,
                    length=sink_cut,
                    dim=self.config.value_dim,
                    values_exact=values[:sink_cut],
                )
            )

        if sink_cut < length:
            self._freeze_scored(
                keys[sink_cut:], values[sink_cut:], start + sink_cut
            )

        self._res_keys.clear()
        self._res_values.clear()
        self._window = QueryAccumulator(self.config.dim)
        self._flushed_tokens += length

    def _freeze_scored(self, keys: np.ndarray, values: np.ndarray, start: int) -> None:
        length = keys.shape[0]
        sensitivity = sensitivity_score(keys, BitWidth.UINT2)
        acc = self._window if self.config.window_importance else self._running
        importance = acc.importance()
        assignment = resolve_assignment(
            self.policy, importance, sensitivity, self.config.thresholds
        )

        outliers = assignment.channels_at(BitWidth.FULL)
        groups: dict[int, tuple[QuantizedGroup, ...]] = {}
        for channel in np.flatnonzero(assignment.bits != 16):
            width = BitWidth(int(assignment.bits[channel]))
            column = keys[:, channel]
            groups[int(channel)] = tuple(
                quantize_group(column[lo:hi], width)
                for lo, hi in _token_runs(length, self.config.group_size)
            )
        self._key_blocks.append(
            KeyBlock(
                start=start,
                length=length,
                assignment=assignment,
                outlier_channels=outliers,
                outlier_columns=keys[:, outliers].copy(),
                groups=groups,
            )
        )

        if self._value_pass_through:
            self._value_blocks.append(
                ValueBlock(
                    start=start,
                    length=length,
                    dim=self.config.value_dim,
                    values_exact=values.copy(),
                )
            )
        else:
            rows = tuple(
                tuple(
                    quantize_group(row[lo:hi], self.config.value_bits)
                    for lo, hi in _token_runs(row.shape[0], self.config.group_size)
                )
                for row in values
            )
            self._value_blocks.append(
                ValueBlock(
                    start=start,
                    length=length,
                    dim=self.config.value_dim,
                    rows=rows,
                )
            )

    # -- reconstruction -----------------------------------------------

    def reconstruct_keys(self) -> np.ndarray:
        """Dequantized view of every stored key row, residual included."""
        parts = [blk.dense() for blk in self._key_blocks]
        if self._res_keys:
            parts.append(np.array(self._res_keys, dtype=np.float64))
        if not parts:
            return np.zeros((0, self.config.dim), dtype=np.float64)
        return np.vstack(parts)

    def reconstruct_values(self) -> np.ndarray:
        """Dequantized view of every stored value row, residual included."""
        parts = [blk.dense() for blk in self._value_blocks]
        if self._res_values:
            parts.append(np.array(self._res_values, dtype=np.float64))
        if not parts:
            return np.zeros((0, self.config.value_dim), dtype=np.float64)
        return np.vstack(parts)

    # -- accounting ---------------------------------------------------

    def effective_bitwidth(self) -> float:
        """Mean stored bits per key element, sink and residual at 16.

        Quantization metadata (zero points and scales) is excluded; see
        metadata_counts(). Raises UndefinedMetric before the first flush.
        """
        if not self._key_blocks:
            raise UndefinedMetric("no block has been flushed yet")
        dim = self.config.dim
        total_bits = 0
        total_elems = 0
        for blk in self._key_blocks:
            total_elems += blk.length * dim
            if blk.assignment is None:
                total_bits += blk.length * dim * 16
            else:
                n_full, n_mid, n_low = blk.assignment.tier_counts()
                total_bits += blk.length * (n_full * 16 + n_mid * 4 + n_low * 2)
        residual = len(self._res_keys)
        total_bits += residual * dim * 16
        total_elems += residual * dim
        return total_bits / total_elems

    def metadata_counts(self) -> dict[str, int]:
        """Count of stored (zero, scale) scalars, keys and values apart."""
        key_groups = sum(
            len(runs)
            for blk in self._key_blocks
            if blk.groups is not None
            for runs in blk.groups.values()
        )
        value_groups = sum(
            len(row)
            for blk in self._value_blocks
            if blk.rows is not None
            for row in blk.rows
        )
        return {"key_scalars": 2 * key_groups, "value_scalars": 2 * value_groups}
