# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element loops; signatures mirror ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double S15 = sqrt(15.0)
cdef double A1 = (6.0 - S15) / 21.0
cdef double B1 = (9.0 + 2.0 * S15) / 21.0
cdef double A2 = (6.0 + S15) / 21.0
cdef double B2 = (9.0 - 2.0 * S15) / 21.0
cdef double W0 = 9.0 / 40.0
cdef double W1 = (155.0 - S15) / 1200.0
cdef double W2 = (155.0 + S15) / 1200.0

cdef double[7][3] BARY
cdef double[7] WTS

BARY[0][:] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
BARY[1][:] = [A1, A1, B1]
BARY[2][:] = [A1, B1, A1]
BARY[3][:] = [B1, A1, A1]
BARY[4][:] = [A2, A2, B2]
BARY[5][:] = [A2, B2, A2]
BARY[6][:] = [B2, A2, A2]
WTS[:] = [W0, W1, W1, W1, W2, W2, W2]


def element_matrices(const double[:, ::1] vertices, const cnp.int64_t[:, ::1] triangles):
    cdef Py_ssize_t nt = triangles.shape[0]
    ke_arr = np.empty((nt, 3, 3))
    me_arr = np.empty((nt, 3, 3))
    area_arr = np.empty(nt)
    cdef double[:, :, ::1] ke = ke_arr
    cdef double[:, :, ::1] me = me_arr
    cdef double[::1] area = area_arr
    cdef Py_ssize_t t, i, j
    cdef double x0, y0, x1, y1, x2, y2, det, a
    cdef double dx[3]
    cdef double dy[3]
    for t in range(nt):
        x0 = vertices[triangles[t, 0], 0]
        y0 = vertices[triangles[t, 0], 1]
        x1 = vertices[triangles[t, 1], 0]
        y1 = vertices[triangles[t, 1], 1]
        x2 = vertices[triangles[t, 2], 0]
        y2 = vertices[triangles[t, 2], 1]
        det = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        a = 0.5 * det
        area[t] = a
        dx[0] = x1 - x2
        dy[0] = y1 - y2
        dx[1] = x2 - x0
        dy[1] = y2 - y0
        dx[2] = x0 - x1
        dy[2] = y0 - y1
        for i in range(3):
            for j in range(3):
                if a != 0.0:
                    ke[t, i, j] = (dx[i] * dx[j] + dy[i] * dy[j]) / (4.0 * a)
                else:
                    ke[t, i, j] = np.inf
                me[t, i, j] = a * (2.0 if i == j else 1.0) / 12.0
    return ke_arr, me_arr, area_arr


def exp_moments(const cnp.int64_t[:, ::1] triangles, const double[::1] area,
                const double[::1] u, double beta, double shift, bint want_load):
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef Py_ssize_t t, q, i
    cdef double u0, u1, u2, uq, e, value = 0.0, second = 0.0
    cdef double ev, es
    cdef double l0, l1, l2
    load_arr = np.zeros(u.shape[0]) if want_load else None
    cdef double[::1] load
    if want_load:
        load = load_arr
    for t in range(nt):
        u0 = u[triangles[t, 0]]
        u1 = u[triangles[t, 1]]
        u2 = u[triangles[t, 2]]
        ev = 0.0
        es = 0.0
        l0 = 0.0
        l1 = 0.0
        l2 = 0.0
        for q in range(7):
            uq = BARY[q][0] * u0 + BARY[q][1] * u1 + BARY[q][2] * u2
            e = WTS[q] * exp(beta * uq * uq - shift)
            ev += e
            es += e * uq * uq
            if want_load:
                l0 += e * uq * BARY[q][0]
                l1 += e * uq * BARY[q][1]
                l2 += e * uq * BARY[q][2]
        value += area[t] * ev
        second += area[t] * es
        if want_load:
            load[triangles[t, 0]] += area[t] * l0
            load[triangles[t, 1]] += area[t] * l1
            load[triangles[t, 2]] += area[t] * l2
    return value, second, load_arr


def exp_exponent_integral(const cnp.int64_t[:, ::1] triangles, const double[::1] area,
                          const double[::1] g, double shift):
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef Py_ssize_t t, q
    cdef double g0, g1, g2, gq, ev, total = 0.0
    for t in range(nt):
        g0 = g[triangles[t, 0]]
        g1 = g[triangles[t, 1]]
        g2 = g[triangles[t, 2]]
        ev = 0.0
        for q in range(7):
            gq = BARY[q][0] * g0 + BARY[q][1] * g1 + BARY[q][2] * g2
            ev += WTS[q] * exp(gq - shift)
        total += area[t] * ev
    return total


def locate_points(const double[:, ::1] vertices, const cnp.int64_t[:, ::1] triangles,
                  const double[:, ::1] points, double tol):
    cdef Py_ssize_t nt = triangles.shape[0]
    cdef Py_ssize_t npt = points.shape[0]
    idx_arr = np.full(npt, -1, dtype=np.int64)
    bary_arr = np.zeros((npt, 3))
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[:, ::1] bary = bary_arr
    cdef Py_ssize_t k, t
    cdef double x0, y0, e1x, e1y, e2x, e2y, det, dx, dy, l0, l1, l2
    for k in range(npt):
        for t in range(nt):
            x0 = vertices[triangles[t, 0], 0]
            y0 = vertices[triangles[t, 0], 1]
            e1x = vertices[triangles[t, 1], 0] - x0
            e1y = vertices[triangles[t, 1], 1] - y0
            e2x = vertices[triangles[t, 2], 0] - x0
            e2y = vertices[triangles[t, 2], 1] - y0
            det = e1x * e2y - e1y * e2x
            dx = points[k, 0] - x0
            dy = points[k, 1] - y0
            l1 = (dx * e2y - dy * e2x) / det
            l2 = (e1x * dy - e1y * dx) / det
            l0 = 1.0 - l1 - l2
            if l0 >= -tol and l1 >= -tol and l2 >= -tol:
                idx[k] = t
                bary[k, 0] = l0
                bary[k, 1] = l1
                bary[k, 2] = l2
                break
    return idx_arr, bary_arr
