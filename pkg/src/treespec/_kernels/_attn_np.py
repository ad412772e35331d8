"""Pure-numpy masked multi-head attention kernel.

This is the fallback backend and the semantic reference for the compiled
kernel.  Both backends compute, per head::

    scores = (q_h @ keys_h.T) * dh**-0.5 + mask
    out_h  = softmax(scores, axis=1) @ values_h

with a row-max-subtracted softmax.  Masked-out entries carry the most
negative finite value of the dtype, so after the max subtraction their
weight underflows to exactly 0.0 and they contribute nothing to the
output, bit for bit.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def attn_forward(
    q: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    mask: np.ndarray,
    num_heads: int,
) -> np.ndarray:
    """Masked multi-head scaled dot-product attention.

    Args:
        q: query rows, shape (S, d).
        keys: key rows for all visible positions, shape (T, d).
        values: value rows, shape (T, d).
        mask: additive mask, shape (S, T), entries 0 or most-negative-finite.
        num_heads: number of heads; d must be divisible by it.

    Returns:
        Attention output, shape (S, d), same dtype as q.
    """
    s_len, dim = q.shape
    head_dim = dim // num_heads
    scale = q.dtype.type(float(head_dim) ** -0.5)
    out = np.empty_like(q)
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        scores = q[:, cols] @ keys[:, cols].T * scale + mask
        scores -= scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=1, keepdims=True)
        out[:, cols] = weights @ values[:, cols]
    return out
