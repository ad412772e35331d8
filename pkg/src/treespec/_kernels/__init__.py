"""Attention kernel backends: compiled (Cython) with a numpy fallback.

The backend is selected once at import.  The compiled kernel is
preferred when its extension module built; otherwise the numpy kernel is
used.  Selection can be forced with the TREESPEC_KERNEL environment
variable ("cython", "numpy", or "auto").  Both backends implement the
same contract and agree within the model tolerance; see the benchmark
subcommand (`treespec bench-backends`) for a speed comparison.
"""

from __future__ import annotations

import os
from typing import Callable

import numpy as np

from . import _attn_np

__all__ = ["BACKEND", "attn_forward", "available_backends", "get_kernel"]

_IMPLS = {"numpy": _attn_np}
try:
    from . import _attn_cy  # type: ignore[attr-defined]

    _IMPLS["cython"] = _attn_cy
except ImportError:
    pass

_requested = os.environ.get("TREESPEC_KERNEL", "auto").lower()
if _requested == "auto":
    BACKEND = "cython" if "cython" in _IMPLS else "numpy"
elif _requested in _IMPLS:
    BACKEND = _requested
else:
    raise RuntimeError(
        f"TREESPEC_KERNEL={_requested!r} but available backends are "
        f"{sorted(_IMPLS)}; build the extension or unset the variable"
    )

KernelFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


def available_backends() -> list[str]:
    """Names of the kernel backends importable in this process."""
    return sorted(_IMPLS)


def get_kernel(name: str) -> KernelFn:
    """Fetch a specific backend's kernel, e.g. for benchmarks or tests."""
    try:
        return _IMPLS[name].attn_forward
    except KeyError:
        raise KeyError(f"unknown backend {name!r}; available: {sorted(_IMPLS)}") from None


attn_forward: KernelFn = _IMPLS[BACKEND].attn_forward
