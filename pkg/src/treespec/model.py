"""Deterministic toy transformer used as both teacher and drafter.

The model is a pre-norm decoder stack, deliberately small enough that
full decodes take milliseconds while still exercising every cache and
masking behavior of a real one:

  * token embeddings tied with the output projection (logits = h @ E.T),
  * sinusoidal absolute positional encodings, scaled by 0.1 so that the
    positional signal is comparable to the +-0.1-uniform embeddings and
    next-token behavior depends on both content and position,
  * per layer: parameter-free layer norm, multi-head scaled dot-product
    attention with an additive mask, residual; layer norm, two-layer
    tanh FFN, residual,
  * a final layer norm before the tied projection.

Parameters are drawn uniform in [-0.1, 0.1] from a Philox counter-based
generator keyed by (seed, sha-256 of the parameter name), so two models
built from equal configs are bit-identical and individual tensors do not
depend on creation order.

All three entry points (prefill, forward_step, forward_masked_batch) run
through one forward routine; a masked batch of one slot is literally the
same compute path as a single step.  Every call appends exactly one
key/value row per evaluated slot per layer to the supplied cache, and
validates its inputs before touching the cache, so a failed call leaves
the cache untouched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cache import BranchCache, CommittedCache
from .errors import (
    ConfigurationError,
    MaskShapeError,
    MaskValidityError,
    TokenRangeError,
)
from .numerics import dtype_for, most_negative, tolerance_for

__all__ = [
    "POS_ENCODING_SCALE",
    "ModelConfig",
    "ModelParams",
    "LayerParams",
    "StepOutput",
    "Model",
    "init_model",
    "prefill",
    "forward_step",
    "forward_masked_batch",
    "model_tolerance",
]

POS_ENCODING_SCALE = 0.1
_LN_EPS = 1e-5
_PARAM_RANGE = 0.1


# =============================================================================
# Configuration and parameters
# =============================================================================


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and seeding of one toy model."""

    vocab_size: int
    embed_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    seed: int
    precision: str = "double"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigurationError(f"vocab_size must be >= 2, got {self.vocab_size}")
        for name in ("embed_dim", "num_layers", "num_heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        dtype_for(self.precision)  # raises on unknown precision

    @property
    def dtype(self) -> np.dtype:
        return dtype_for(self.precision)

    def as_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "seed": self.seed,
            "precision": self.precision,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class LayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class ModelParams:
    embed: np.ndarray  # (vocab_size, embed_dim), tied with the output head
    layers: list[LayerParams] = field(default_factory=list)


def _draw_param(seed: int, name: str, shape: tuple[int, ...], dtype: np.dtype) -> np.ndarray:
    """Uniform [-0.1, 0.1] tensor from a Philox stream keyed by (seed, name)."""
    name_key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, name_key], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.uniform(-_PARAM_RANGE, _PARAM_RANGE, size=shape).astype(dtype)


def _init_params(config: ModelConfig) -> ModelParams:
    d, f, dt = config.embed_dim, config.ffn_dim, config.dtype
    params = ModelParams(embed=_draw_param(config.seed, "embed", (config.vocab_size, d), dt))
    for i in range(config.num_layers):
        prefix = f"layers.{i}."
        params.layers.append(
            LayerParams(
                wq=_draw_param(config.seed, prefix + "wq", (d, d), dt),
                wk=_draw_param(config.seed, prefix + "wk", (d, d), dt),
                wv=_draw_param(config.seed, prefix + "wv", (d, d), dt),
                wo=_draw_param(config.seed, prefix + "wo", (d, d), dt),
                w1=_draw_param(config.seed, prefix + "w1", (d, f), dt),
                w2=_draw_param(config.seed, prefix + "w2", (f, d), dt),
            )
        )
    return params


# =============================================================================
# Model and forward passes
# =============================================================================


@dataclass
class StepOutput:
    """Result of one forward call.

    logits has one row per returned slot: prefill returns only the last
    prompt position's next-token logits, forward_step one row, and
    forward_masked_batch one row per speculative slot.
    """

    logits: np.ndarray
    new_cache_len: int


class Model:
    """Immutable parameters plus the attention kernel in use.

    The kernel defaults to the backend selected at import
    (treespec._kernels.BACKEND); tests and benchmarks may inject another.
    """

    def __init__(self, config: ModelConfig, attn_kernel=None):
        self.config = config
        self.params = _init_params(config)
        self._attn = attn_kernel if attn_kernel is not None else _kernels.attn_forward

    def new_cache(self) -> CommittedCache:
        return CommittedCache.empty(self.config.num_layers, self.config.embed_dim, self.config.dtype)

    # -- internals ------------------------------------------------------

    def _positional(self, positions: np.ndarray) -> np.ndarray:
        d = self.config.embed_dim
        pos = positions[:, None].astype(np.float64)
        exponents = np.arange(0, d, 2, dtype=np.float64) / d
        angles = pos * np.power(10000.0, -exponents)
        pe = np.empty((positions.shape[0], d), dtype=np.float64)
        pe[:, 0::2] = np.sin(angles)
        pe[:, 1::2] = np.cos(angles[:, : d // 2])
        return (POS_ENCODING_SCALE * pe).astype(self.config.dtype)

    @staticmethod
    def _layer_norm(x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return ((x - mean) / np.sqrt(var + x.dtype.type(_LN_EPS))).astype(x.dtype)

    def _forward(
        self,
        tokens: np.ndarray,
        positions: np.ndarray,
        mask_rows: np.ndarray,
        cache: CommittedCache | BranchCache,
    ) -> np.ndarray:
        """Evaluate S new slots against the cache, appending their KV rows.

        mask_rows is the full additive mask, shape (S, prefix + S); all
        validation happens before any cache mutation.
        """
        cfg = self.config
        p = self.params
        h = p.embed[tokens] + self._positional(positions)
        for i, lp in enumerate(p.layers):
            x = self._layer_norm(h)
            q = x @ lp.wq
            layer = cache.layers[i]
            layer.append(x @ lp.wk, x @ lp.wv)
            keys, values = layer.view()
            ctx = self._attn(np.ascontiguousarray(q), keys, values, mask_rows, cfg.num_heads)
            h = h + ctx @ lp.wo
            x = self._layer_norm(h)
            h = h + np.tanh(x @ lp.w1) @ lp.w2
        return self._layer_norm(h) @ p.embed.T


def init_model(config: ModelConfig, attn_kernel=None) -> Model:
    """Build a model; equal configs yield bit-identical parameters."""
    return Model(config, attn_kernel=attn_kernel)


def model_tolerance(config: ModelConfig) -> float:
    """Absolute tolerance for cross-evaluation-order comparisons."""
    return tolerance_for(config.precision)


def _check_tokens(config: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise TokenRangeError(
            f"token ids must lie in [0, {config.vocab_size}), got range "
            f"[{tokens.min()}, {tokens.max()}]"
        )


def prefill(model: Model, prompt, cache: CommittedCache) -> StepOutput:
    """Evaluate a whole prompt with causal masking into an empty cache.

    Returns the next-token logits at the last prompt position, shape (1, V).
    """
    tokens = np.asarray(prompt, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ConfigurationError("prompt must be a non-empty 1-d token sequence")
    _check_tokens(model.config, tokens)
    if cache.seq_len != 0:
        raise ConfigurationError(f"prefill requires an empty cache, got length {cache.seq_len}")
    s = tokens.size
    neg = most_negative(model.config.dtype)
    mask = np.full((s, s), neg, dtype=model.config.dtype)
    mask[np.tril_indices(s)] = 0.0
    logits = model._forward(tokens, np.arange(s, dtype=np.int64), mask, cache)
    return StepOutput(logits=logits[-1:], new_cache_len=cache.seq_len)


def forward_step(model: Model, token: int, cache: CommittedCache | BranchCache) -> StepOutput:
    """Append one token at the next position, fully visible to the prefix."""
    tokens = np.asarray([token], dtype=np.int64)
    _check_tokens(model.config, tokens)
    prefix = cache.seq_len
    mask = np.zeros((1, prefix + 1), dtype=model.config.dtype)
    positions = np.array([prefix], dtype=np.int64)
    logits = model._forward(tokens, positions, mask, cache)
    return StepOutput(logits=logits, new_cache_len=cache.seq_len)


def forward_masked_batch(
    model: Model,
    tokens,
    cache: CommittedCache | BranchCache,
    extra_mask: np.ndarray,
    positions,
) -> StepOutput:
    """Evaluate S speculative slots in one batch under an explicit mask.

    Args:
        tokens: the S slot tokens.
        cache: branch cache to extend in place (one row per slot per layer).
        extra_mask: additive mask, shape (S, prefix + S); entry 0 means
            visible, most-negative-finite means hidden.  Row k must keep
            its own slot visible (column prefix + k equal to 0).
        positions: absolute position of each slot (prefix + depth).

    Returns:
        StepOutput with one logits row per slot, in slot order.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ConfigurationError("tokens must be a non-empty 1-d sequence")
    _check_tokens(model.config, tokens)
    s = tokens.size
    prefix = cache.seq_len
    mask = np.ascontiguousarray(extra_mask, dtype=model.config.dtype)
    if mask.shape != (s, prefix + s):
        raise MaskShapeError(
            f"mask shape {mask.shape} does not match (slots, prefix + slots) = ({s}, {prefix + s})"
        )
    self_cols = mask[np.arange(s), prefix + np.arange(s)]
    if np.any(self_cols != 0.0):
        bad = int(np.nonzero(self_cols != 0.0)[0][0])
        raise MaskValidityError(f"mask row {bad} hides its own slot (column {prefix + bad})")
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (s,):
        raise MaskShapeError(f"positions shape {pos.shape} does not match slot count {s}")
    logits = model._forward(tokens, pos, mask, cache)
    return StepOutput(logits=logits, new_cache_len=cache.seq_len)
