"""Attention fidelity simulation against a quantized KV cache.

The quality of a cache policy is measured on a single head of scaled
dot-product attention. Two error views are reported:

- the pre-softmax logit perturbation E = Q (K - K_hat)^T, the quantity
  the salience score is built to suppress (no 1/sqrt(D) factor);
- the post-softmax output error between attention computed on the exact
  (K, V) and on the cache's reconstructions (K_hat, V_hat).

decode_simulation() replays a sequence token by token the way a decoder
would: each step appends one (k, v, q) row to the cache, then attends the
new query over the reconstructed prefix. Errors are aggregated over all
steps into a FidelityReport.

generate_planted_instance() builds synthetic workloads with a controlled
split between key-scale outliers and query-magnitude outliers. Queries on
channels that are scale outliers only are damped, planting the
decorrelated regime in which large keys do not matter (their queries are
small) and query-heavy channels do. With overlap equal to both outlier
counts the two sets coincide and query-aware and magnitude-only
allocation should roughly tie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cache import CacheConfig, MixedKVCache
from .errors import InvalidInput, UndefinedMetric
from .policies import AllocationPolicy
from .salience import apply_rope

__all__ = [
    "AttentionInstance",
    "PlantedChannels",
    "PlantedSpec",
    "FidelityReport",
    "attention_exact",
    "attention_error",
    "generate_planted_instance",
    "decode_simulation",
]


@dataclass(frozen=True)
class PlantedChannels:
    """Ground-truth outlier channel sets of a planted instance."""

    scale_channels: np.ndarray
    query_channels: np.ndarray


@dataclass(frozen=True)
class AttentionInstance:
    """One attention workload: stacked query, key, and value rows.

    queries and keys are (length, dim); values are (length, value_dim).
    `planted` carries generator ground truth when available.
    """

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    planted: PlantedChannels | None = None

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        k = np.asarray(self.keys, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        for name, arr in (("queries", q), ("keys", k), ("values", v)):
            if arr.ndim != 2 or arr.size == 0:
                raise InvalidInput(f"{name} must be a non-empty 2-D matrix")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} contains non-finite elements")
        if q.shape != k.shape:
            raise InvalidInput(
                f"queries {q.shape} and keys {k.shape} must share their shape"
            )
        if v.shape[0] != k.shape[0]:
            raise InvalidInput("values must cover the same tokens as the keys")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.dim)


@dataclass(frozen=True)
class FidelityReport:
    """Aggregated fidelity of one simulated decode run."""

    e_attn_frobenius: float
    e_attn_max: float
    output_error_frobenius: float
    effective_bits: float
    policy_label: str


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def attention_exact(queries, keys, values, causal: bool = True, scale: float | None = None):
    """Scaled dot-product attention with a numerically stable softmax.

    With causal=True position i attends to keys [0, i], which requires as
    many query rows as key rows. Returns (weights, outputs): the softmax
    weight matrix and the attended value rows.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InvalidInput("queries, keys, and values must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise InvalidInput("queries and keys disagree on channel count")
    if v.shape[0] != k.shape[0]:
        raise InvalidInput("keys and values disagree on token count")
    if scale is None:
        scale = 1.0 / math.sqrt(k.shape[1])
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
        raise InvalidInput("attention inputs must be finite")
    logits = (q @ k.T) * scale
    if causal:
        if q.shape[0] != k.shape[0]:
            raise InvalidInput("causal masking requires one query row per key row")
        i, j = np.triu_indices(q.shape[0], k=1)
        logits[i, j] = -np.inf
    weights = _softmax_rows(logits)
    return weights, weights @ v


def attention_error(queries, keys_exact, keys_approx) -> np.ndarray:
    """Pre-softmax logit perturbation Q (K - K_hat)^T (unscaled)."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys_exact, dtype=np.float64)
    kh = np.asarray(keys_approx, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if k.shape != kh.shape:
        raise InvalidInput("exact and approximate keys must share their shape")
    if q.ndim != 2 or q.shape[1] != k.shape[1]:
        raise InvalidInput("queries and keys disagree on channel count")
    return q @ (k - kh).T


def generate_planted_instance(
    dim: int,
    length: int,
    n_outlier_scale: int,
    n_outlier_query: int,
    overlap: int,
    seed: int,
    *,
    value_dim: int | None = None,
    scale_boost: float = 10.0,
    query_boost: float = 10.0,
    query_damp: float = 0.1,
) -> AttentionInstance:
    """Synthesize a Gaussian workload with planted outlier channels.

    `n_outlier_scale` key channels get roughly scale_boost times the base
    range; `n_outlier_query` query channels get roughly query_boost times
    the base magnitude; exactly `overlap` channels belong to both sets.
    Queries on scale-outlier-only channels are damped by `query_damp`
    (large keys paired with small queries). Deterministic in `seed`.
    """
    if dim < 1 or length < 1:
        raise InvalidInput("dim and length must be positive")
    if min(n_outlier_scale, n_outlier_query, overlap) < 0:
        raise InvalidInput("outlier counts must be non-negative")
    if overlap > min(n_outlier_scale, n_outlier_query):
        raise InvalidInput("overlap cannot exceed either outlier count")
    if n_outlier_scale + n_outlier_query - overlap > dim:
        raise InvalidInput("outlier sets do not fit in the channel count")
    if min(scale_boost, query_boost, query_damp) <= 0:
        raise InvalidInput("boost and damp factors must be positive")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(dim)
    shared = perm[:overlap]
    scale_channels = np.sort(np.concatenate([shared, perm[overlap:n_outlier_scale]]))
    query_channels = np.sort(
        np.concatenate(
            [shared, perm[n_outlier_scale : n_outlier_scale + n_outlier_query - overlap]]
        )
    )
    scale_only = np.setdiff1d(scale_channels, query_channels)

    keys = rng.normal(size=(length, dim))
    keys[:, scale_channels] *= scale_boost
    queries = rng.normal(size=(length, dim))
    queries[:, query_channels] *= query_boost
    queries[:, scale_only] *= query_damp
    values = rng.normal(size=(length, dim if value_dim is None else value_dim))
    return AttentionInstance(
        queries,
        keys,
        values,
        planted=PlantedChannels(
            scale_channels=scale_channels, query_channels=query_channels
        ),
    )


@dataclass(frozen=True)
class PlantedSpec:
    """Deferred planted-instance parameters; materialized per seed."""

    dim: int
    length: int
    n_outlier_scale: int = 4
    n_outlier_query: int = 4
    overlap: int = 0
    value_dim: int | None = None
    scale_boost: float = 10.0
    query_boost: float = 10.0
    query_damp: float = 0.1

    def materialize(self, seed: int) -> AttentionInstance:
        return generate_planted_instance(
            self.dim,
            self.length,
            self.n_outlier_scale,
            self.n_outlier_query,
            self.overlap,
            seed,
            value_dim=self.value_dim,
            scale_boost=self.scale_boost,
            query_boost=self.query_boost,
            query_damp=self.query_damp,
        )


def decode_simulation(
    source: AttentionInstance | PlantedSpec,
    config: CacheConfig,
    policy: AllocationPolicy,
    steps: int | None = None,
    seed: int = 0,
    rotate: bool = False,
    return_cache: bool = False,
):
    """Replay a sequence through the cache and measure attention fidelity.

    `source` is either a concrete AttentionInstance (a trace; `seed` is
    then ignored) or a PlantedSpec to materialize with `seed`. At step t
    the row (k_t, v_t, q_t) enters the cache, then q_t attends over the
    reconstructed prefix [0, t] and over the exact prefix; logit and
    output errors accumulate across steps. Source tensors are taken as
    already rotated; rotate=True applies the rotary map at each row's
    position first (queries and keys only).

    Under the FULL_PRECISION policy value quantization is disabled too,
    so the run is lossless end to end. With return_cache=True the final
    cache comes back alongside the report.
    """
    if isinstance(source, PlantedSpec):
        inst = source.materialize(seed)
    elif isinstance(source, AttentionInstance):
        inst = source
    else:
        raise InvalidInput("source must be an AttentionInstance or a PlantedSpec")
    if steps is None:
        steps = inst.length
    if steps < 1:
        raise InvalidInput("steps must be positive")
    if steps > inst.length:
        raise InvalidInput(f"instance has {inst.length} rows, cannot run {steps} steps")
    if inst.dim != config.dim or inst.value_dim != config.value_dim:
        raise InvalidInput("instance geometry disagrees with the cache config")
    if config.heads_per_kv_group != 1:
        raise InvalidInput("the decode simulation drives a single query head")

    queries, keys = inst.queries, inst.keys
    if rotate:
        positions = np.arange(inst.length)
        queries = apply_rope(queries, positions, config.rope_theta)
        keys = apply_rope(keys, positions, config.rope_theta)
    values = inst.values

    cache = MixedKVCache(config, policy)
    sq_logit = 0.0
    max_logit = 0.0
    sq_output = 0.0
    for t in range(steps):
        cache.append(keys[t], values[t], queries[t], position=t)
        k_hat = cache.reconstruct_keys()
        v_hat = cache.reconstruct_values()
        prefix = slice(0, t + 1)
        q_t = queries[t]

        err_row = attention_error(q_t, keys[prefix], k_hat)
        sq_logit += float(np.dot(err_row[0], err_row[0]))
        if err_row.size:
            max_logit = max(max_logit, float(np.abs(err_row).max()))

        _, out_exact = attention_exact(
            q_t, keys[prefix], values[prefix], causal=False, scale=inst.scale
        )
        _, out_approx = attention_exact(q_t, k_hat, v_hat, causal=False, scale=inst.scale)
        diff = out_exact - out_approx
        sq_output += float(np.dot(diff[0], diff[0]))

    try:
        effective_bits = cache.effective_bitwidth()
    except UndefinedMetric:
        # Nothing flushed: every token still sits in the residual buffer.
        effective_bits = 16.0

    report = FidelityReport(
        e_attn_frobenius=math.sqrt(sq_logit),
        e_attn_max=max_logit,
        output_error_frobenius=math.sqrt(sq_output),
        effective_bits=effective_bits,
        policy_label=policy.label,
    )
    if return_cache:
        return report, cache
    return report
