"""Precision conventions shared by the model, masks, and tests.

Two precisions exist: "double" (float64) and "single" (float32).  All
equivalence checks between different computation orders of the same
model use the per-precision tolerance below.  Additive attention masks
encode "invisible" as the most negative finite value of the dtype; after
softmax max-subtraction such entries underflow to a weight of exactly
zero, which is what the isolation guarantees rely on.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

__all__ = ["DTYPES", "TOLERANCES", "dtype_for", "tolerance_for", "most_negative"]

DTYPES = {"double": np.float64, "single": np.float32}

# Absolute tolerance for comparing logits/cache entries produced by
# different evaluation orders (batched vs sequential, per-path vs tree).
TOLERANCES = {"double": 1e-6, "single": 1e-3}


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(DTYPES[precision])
    except KeyError:
        raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}") from None


def tolerance_for(precision: str) -> float:
    try:
        return TOLERANCES[precision]
    except KeyError:
        raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}") from None


def most_negative(dtype: np.dtype) -> float:
    """The additive-mask value meaning "not visible" for this dtype."""
    return float(-np.finfo(dtype).max)
