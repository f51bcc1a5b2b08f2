"""Backend selection for the element loops.

The compiled extension ``moserlab._kernels`` is used when it imports; otherwise
the numpy implementations in ``moserlab._kernels_py`` take over. Setting the
environment variable ``MOSERLAB_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

QUAD_BARY = _kernels_py.QUAD_BARY
QUAD_WEIGHTS = _kernels_py.QUAD_WEIGHTS

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("MOSERLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _tri(triangles):
    return np.ascontiguousarray(triangles, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def element_matrices(vertices, triangles, backend=None):
    impl = _select(backend)
    return impl.element_matrices(_f64(vertices), _tri(triangles))


def exp_moments(triangles, area, u, beta, shift=0.0, want_load=True, backend=None):
    impl = _select(backend)
    return impl.exp_moments(
        _tri(triangles), _f64(area), _f64(u), float(beta), float(shift), bool(want_load)
    )


def exp_exponent_integral(triangles, area, g, shift=0.0, backend=None):
    impl = _select(backend)
    return impl.exp_exponent_integral(_tri(triangles), _f64(area), _f64(g), float(shift))


def locate_points(vertices, triangles, points, tol=1e-12, backend=None):
    impl = _select(backend)
    pts = _f64(np.atleast_2d(points))
    return impl.locate_points(_f64(vertices), _tri(triangles), pts, float(tol))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available in this install")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")
