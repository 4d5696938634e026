"""Backend selection for the hot kernels.

The compiled extension is used when it imports and the dynamics carry a model
id it knows; otherwise the numpy fallback runs.  Set ``HYBRIDOC_PURE_PYTHON=1``
to force the fallback at import time, or use :func:`use_backend` locally.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _pykernels

_compiled = None
if not os.environ.get("HYBRIDOC_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_active = _compiled


def compiled_available() -> bool:
    return _compiled is not None


def backend() -> str:
    return "cython" if _active is not None else "python"


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch between ``"cython"`` and ``"python"`` kernels."""
    global _active
    if name not in ("cython", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "cython" and _compiled is None:
        raise RuntimeError("compiled kernels are not available")
    saved = _active
    _active = _compiled if name == "cython" else None
    try:
        yield
    finally:
        _active = saved


def _compiled_for(dyn):
    if _active is None or getattr(dyn, "model_id", None) is None:
        return None
    return _active


def rk4_batch(dyn, t, X, U, h, jac=False):
    c = _compiled_for(dyn)
    if c is None:
        return _pykernels.rk4_batch(dyn, t, X, U, h, jac)
    return c.rk4_batch(
        dyn.model_id,
        dyn.model_params,
        np.ascontiguousarray(t, dtype=float),
        np.ascontiguousarray(X, dtype=float),
        np.ascontiguousarray(U, dtype=float),
        float(h),
        bool(jac),
    )


def rk4_rollout(dyn, x0, U, t0, h):
    c = _compiled_for(dyn)
    x0 = np.ascontiguousarray(x0, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if c is None:
        return _pykernels.rk4_rollout(dyn, x0, U, float(t0), float(h))
    return c.rk4_rollout(dyn.model_id, dyn.model_params, x0, U, float(t0), float(h))


def lbfgs_direction(g, S, Y, rho, start, count):
    if _active is None:
        return _pykernels.lbfgs_direction(g, S, Y, rho, start, count)
    return _active.lbfgs_direction(g, S, Y, rho, int(start), int(count))
