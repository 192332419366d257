# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Operation order mirrors the Python versions line for line; do not reorder
arithmetic here without changing both files.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fmod, sqrt, atan2, tanh, fabs, INFINITY, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cpdef double wrap_angle(double a):
    cdef double r = fmod(a + M_PI, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    if r >= TWO_PI:
        r -= TWO_PI
    return r - M_PI


cdef inline double _clamp(double v, double lo, double hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def vehicle_step(double x, double y, double heading, double speed, double throttle,
                 double steer, double a_max, double omega_max, double v_max,
                 double friction, double dt):
    throttle = _clamp(throttle, -1.0, 1.0)
    steer = _clamp(steer, -1.0, 1.0)
    cdef double v = speed + (throttle * a_max - friction * speed) * dt
    v = _clamp(v, 0.0, v_max)
    cdef double h = wrap_angle(heading + steer * omega_max * dt)
    cdef double nx = x + speed * cos(heading) * dt
    cdef double ny = y + speed * sin(heading) * dt
    return nx, ny, h, v


cdef inline bint _separated(double x1, double y1, double c1, double s1,
                            double x2, double y2, double c2, double s2,
                            double hl, double hw, double ax, double ay):
    cdef double m1 = x1 * ax + y1 * ay
    cdef double r1 = hl * fabs(c1 * ax + s1 * ay) + hw * fabs(-s1 * ax + c1 * ay)
    cdef double m2 = x2 * ax + y2 * ay
    cdef double r2 = hl * fabs(c2 * ax + s2 * ay) + hw * fabs(-s2 * ax + c2 * ay)
    return fabs(m1 - m2) >= r1 + r2


def obb_overlap(double x1, double y1, double h1, double x2, double y2, double h2,
                double half_length, double half_width):
    cdef double c1 = cos(h1)
    cdef double s1 = sin(h1)
    cdef double c2 = cos(h2)
    cdef double s2 = sin(h2)
    if _separated(x1, y1, c1, s1, x2, y2, c2, s2, half_length, half_width, c1, s1):
        return False
    if _separated(x1, y1, c1, s1, x2, y2, c2, s2, half_length, half_width, -s1, c1):
        return False
    if _separated(x1, y1, c1, s1, x2, y2, c2, s2, half_length, half_width, c2, s2):
        return False
    if _separated(x1, y1, c1, s1, x2, y2, c2, s2, half_length, half_width, -s2, c2):
        return False
    return True


cdef bint _clip(double p, double q, double* t_enter, double* t_exit):
    cdef double t
    if p == 0.0:
        return q >= 0.0
    t = q / p
    if p < 0.0:
        if t > t_enter[0]:
            t_enter[0] = t
    else:
        if t < t_exit[0]:
            t_exit[0] = t
    return t_enter[0] <= t_exit[0]


cdef bint _segment_hits_rect(double x0, double y0, double x1, double y1,
                             double xmin, double ymin, double xmax, double ymax):
    cdef double dx = x1 - x0
    cdef double dy = y1 - y0
    cdef double t_enter = 0.0
    cdef double t_exit = 1.0
    if not _clip(-dx, x0 - xmin, &t_enter, &t_exit):
        return False
    if not _clip(dx, xmax - x0, &t_enter, &t_exit):
        return False
    if not _clip(-dy, y0 - ymin, &t_enter, &t_exit):
        return False
    if not _clip(dy, ymax - y0, &t_enter, &t_exit):
        return False
    return t_enter < 1.0 and t_exit > 0.0


def segment_hits_rect(double x0, double y0, double x1, double y1,
                      double xmin, double ymin, double xmax, double ymax):
    return bool(_segment_hits_rect(x0, y0, x1, y1, xmin, ymin, xmax, ymax))


def segment_hits_rects(double x0, double y0, double x1, double y1, const double[:, :] rects):
    cdef Py_ssize_t i
    for i in range(rects.shape[0]):
        if _segment_hits_rect(x0, y0, x1, y1, rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]):
            return True
    return False


def project_polyline(double px, double py, const double[:, :] pts, const double[:] cum):
    cdef Py_ssize_t i, best = 0
    cdef Py_ssize_t n = pts.shape[0]
    cdef double ax, ay, sx, sy, seg2, t, ex, ey, d2
    cdef double best_d2 = INFINITY
    cdef double best_t = 0.0, best_sx = 0.0, best_sy = 0.0, best_ex = 0.0, best_ey = 0.0
    cdef double best_seg2 = 1.0
    for i in range(n - 1):
        ax = pts[i, 0]
        ay = pts[i, 1]
        sx = pts[i + 1, 0] - ax
        sy = pts[i + 1, 1] - ay
        seg2 = sx * sx + sy * sy
        t = ((px - ax) * sx + (py - ay) * sy) / seg2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        ex = px - (ax + t * sx)
        ey = py - (ay + t * sy)
        d2 = ex * ex + ey * ey
        if d2 < best_d2:
            best_d2 = d2
            best = i
            best_t = t
            best_sx = sx
            best_sy = sy
            best_ex = ex
            best_ey = ey
            best_seg2 = seg2
    cdef double seg_len = sqrt(best_seg2)
    cdef double s = cum[best] + best_t * seg_len
    cdef double lat = (best_sx * best_ey - best_sy * best_ex) / seg_len
    return s, lat, atan2(best_sy, best_sx)


def project_polyline_batch(const double[:] px, const double[:] py, const double[:, :] pts,
                           const double[:] cum):
    cdef Py_ssize_t k, i, best
    cdef Py_ssize_t n = px.shape[0], m = pts.shape[0]
    cdef double ax, ay, sx, sy, seg2, t, ex, ey, d2, best_d2, best_t, best_sx, best_sy
    cdef double best_ex, best_ey, best_seg2, seg_len
    s_arr = np.empty(n)
    l_arr = np.empty(n)
    h_arr = np.empty(n)
    cdef double[:] s_out = s_arr
    cdef double[:] l_out = l_arr
    cdef double[:] h_out = h_arr
    for k in range(n):
        best = 0
        best_d2 = INFINITY
        best_t = 0.0
        best_sx = 0.0
        best_sy = 0.0
        best_ex = 0.0
        best_ey = 0.0
        best_seg2 = 1.0
        for i in range(m - 1):
            ax = pts[i, 0]
            ay = pts[i, 1]
            sx = pts[i + 1, 0] - ax
            sy = pts[i + 1, 1] - ay
            seg2 = sx * sx + sy * sy
            t = ((px[k] - ax) * sx + (py[k] - ay) * sy) / seg2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            ex = px[k] - (ax + t * sx)
            ey = py[k] - (ay + t * sy)
            d2 = ex * ex + ey * ey
            if d2 < best_d2:
                best_d2 = d2
                best = i
                best_t = t
                best_sx = sx
                best_sy = sy
                best_ex = ex
                best_ey = ey
                best_seg2 = seg2
        seg_len = sqrt(best_seg2)
        s_out[k] = cum[best] + best_t * seg_len
        l_out[k] = (best_sx * best_ey - best_sy * best_ex) / seg_len
        h_out[k] = atan2(best_sy, best_sx)
    return s_arr, l_arr, h_arr


def branch_forward(const double[:] x, const double[:, :] w0, const double[:] b0,
                   const double[:, :] w1, const double[:] b1,
                   const double[:, :] w2, const double[:] b2):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n_in = w0.shape[1], n0 = w0.shape[0], n1 = w1.shape[0], n2 = w2.shape[0]
    cdef double acc
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h0 = np.empty(n0)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h1 = np.empty(n1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n2)
    for i in range(n0):
        acc = 0.0
        for j in range(n_in):
            acc += w0[i, j] * x[j]
        h0[i] = tanh(acc + b0[i])
    for i in range(n1):
        acc = 0.0
        for j in range(n0):
            acc += w1[i, j] * h0[j]
        h1[i] = tanh(acc + b1[i])
    for i in range(n2):
        acc = 0.0
        for j in range(n1):
            acc += w2[i, j] * h1[j]
        out[i] = tanh(acc + b2[i])
    return out
