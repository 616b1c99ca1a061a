"""Backend selection for the Hough accumulator.

The compiled extension is preferred. Set ``STRUCTHOUGH_BACKEND=python`` to
force the numpy fallback, or switch at runtime with :func:`use_backend`.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _accumulate_py

try:
    from ._accumulate import accumulate as _compiled_accumulate
except ImportError:  # pragma: no cover - depends on build environment
    _compiled_accumulate = None

_IMPLS = {"python": _accumulate_py.accumulate}
if _compiled_accumulate is not None:
    _IMPLS["compiled"] = _compiled_accumulate


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def _default_backend() -> str:
    requested = os.environ.get("STRUCTHOUGH_BACKEND", "").strip().lower()
    if requested:
        if requested not in _IMPLS:
            raise RuntimeError(
                f"STRUCTHOUGH_BACKEND={requested!r} unavailable; have {available_backends()}")
        return requested
    return "compiled" if "compiled" in _IMPLS else "python"


_backend = _default_backend()


def current_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def accumulate(voters: np.ndarray, sin_t: np.ndarray, cos_t: np.ndarray,
               r0: float, dr: float, nr: int, sigma: float) -> np.ndarray:
    """Vote weights for a rectangular block of the hypothesis grid.

    Parameters
    ----------
    voters : ndarray, shape (N, 3)
        Columns ``x, y, w``.
    sin_t, cos_t : ndarray, shape (T,)
        Sine and cosine of the block's angles.
    r0, dr, nr : float, float, int
        First offset, offset step and number of offsets in the block.
    sigma : float
        Voting bandwidth in pixels.

    Returns
    -------
    ndarray, shape (T, nr)
    """
    voters = np.ascontiguousarray(voters, dtype=np.float64).reshape(-1, 3)
    sin_t = np.ascontiguousarray(sin_t, dtype=np.float64)
    cos_t = np.ascontiguousarray(cos_t, dtype=np.float64)
    return _IMPLS[_backend](voters, sin_t, cos_t, float(r0), float(dr), int(nr), float(sigma))
