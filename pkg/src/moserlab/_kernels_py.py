"""Pure numpy implementations of the hot element loops.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Summation order is fixed (element order, then quadrature-point order inside
numpy's reductions) so repeated calls are bit-identical.
"""
import numpy as np

SQRT15 = np.sqrt(15.0)

# symmetric 7-point rule, exact for polynomials of degree 5 on a triangle
QUAD_BARY = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [(6.0 - SQRT15) / 21.0, (6.0 - SQRT15) / 21.0, (9.0 + 2.0 * SQRT15) / 21.0],
        [(6.0 - SQRT15) / 21.0, (9.0 + 2.0 * SQRT15) / 21.0, (6.0 - SQRT15) / 21.0],
        [(9.0 + 2.0 * SQRT15) / 21.0, (6.0 - SQRT15) / 21.0, (6.0 - SQRT15) / 21.0],
        [(6.0 + SQRT15) / 21.0, (6.0 + SQRT15) / 21.0, (9.0 - 2.0 * SQRT15) / 21.0],
        [(6.0 + SQRT15) / 21.0, (9.0 - 2.0 * SQRT15) / 21.0, (6.0 + SQRT15) / 21.0],
        [(9.0 - 2.0 * SQRT15) / 21.0, (6.0 + SQRT15) / 21.0, (6.0 + SQRT15) / 21.0],
    ]
)
QUAD_WEIGHTS = np.array(
    [9.0 / 40.0]
    + [(155.0 - SQRT15) / 1200.0] * 3
    + [(155.0 + SQRT15) / 1200.0] * 3
)


def element_matrices(vertices, triangles):
    """P1 element stiffness, mass and signed areas.

    Returns ``(ke, me, area)`` with shapes ``(T, 3, 3)``, ``(T, 3, 3)``, ``(T,)``.
    """
    p = vertices[triangles]  # (T, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    # gradients of barycentric coordinates times det: rotated opposite edges
    d = np.empty((triangles.shape[0], 3, 2))
    d[:, 0] = p[:, 1] - p[:, 2]
    d[:, 1] = p[:, 2] - p[:, 0]
    d[:, 2] = p[:, 0] - p[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ke = np.einsum("tik,tjk->tij", d, d) / (4.0 * area)[:, None, None]
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    me = area[:, None, None] * base[None, :, :]
    return ke, me, area


def exp_moments(triangles, area, u, beta, shift, want_load):
    """Quadrature moments of ``exp(beta*u^2 - shift)`` for a P1 field ``u``.

    Returns ``(value, second, load)`` where

    * ``value  = sum_T |T| sum_q w_q exp(beta u_q^2 - shift)``
    * ``second = sum_T |T| sum_q w_q u_q^2 exp(beta u_q^2 - shift)``
    * ``load[i] = sum_T |T| sum_q w_q u_q exp(beta u_q^2 - shift) L_qi``

    ``load`` is None when ``want_load`` is false.
    """
    uq = u[triangles] @ QUAD_BARY.T  # (T, 7)
    ex = np.exp(beta * uq * uq - shift) * QUAD_WEIGHTS[None, :]
    ex *= area[:, None]
    value = float(ex.sum())
    second = float((ex * uq * uq).sum())
    load = None
    if want_load:
        local = (ex * uq) @ QUAD_BARY  # (T, 3)
        load = np.bincount(
            triangles.ravel(), weights=local.ravel(), minlength=u.shape[0]
        )
    return value, second, load


def exp_exponent_integral(triangles, area, g, shift):
    """Quadrature of ``exp(g - shift)`` with ``g`` a P1 nodal field."""
    gq = g[triangles] @ QUAD_BARY.T
    ex = np.exp(gq - shift) * QUAD_WEIGHTS[None, :]
    return float((ex * area[:, None]).sum())


def locate_points(vertices, triangles, points, tol):
    """Containing triangle and barycentric weights for each point.

    Points outside every triangle get index -1. The first triangle (in index
    order) whose barycentric coordinates are all >= -tol wins.
    """
    p = vertices[triangles]
    x0 = p[:, 0]
    e1 = p[:, 1] - x0
    e2 = p[:, 2] - x0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    out_idx = np.full(points.shape[0], -1, dtype=np.int64)
    out_bary = np.zeros((points.shape[0], 3))
    for k, q in enumerate(points):
        d = q - x0
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        l0 = 1.0 - l1 - l2
        inside = np.flatnonzero((l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol))
        if inside.size:
            t = inside[0]
            out_idx[k] = t
            out_bary[k] = (l0[t], l1[t], l2[t])
    return out_idx, out_bary
