"""Pure-Python implementations of the simulator's hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature and
the same floating-point operation order, so both backends produce identical
results for the scalar geometry and dynamics routines.
"""

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    if r >= TWO_PI:
        r -= TWO_PI
    return r - math.pi


def vehicle_step(x, y, heading, speed, throttle, steer, a_max, omega_max, v_max, friction, dt):
    throttle = min(max(throttle, -1.0), 1.0)
    steer = min(max(steer, -1.0), 1.0)
    v = speed + (throttle * a_max - friction * speed) * dt
    v = min(max(v, 0.0), v_max)
    h = wrap_angle(heading + steer * omega_max * dt)
    nx = x + speed * math.cos(heading) * dt
    ny = y + speed * math.sin(heading) * dt
    return nx, ny, h, v


def _project_extent(cx, cy, c, s, hl, hw, ax, ay):
    centre = cx * ax + cy * ay
    radius = hl * abs(c * ax + s * ay) + hw * abs(-s * ax + c * ay)
    return centre, radius


def obb_overlap(x1, y1, h1, x2, y2, h2, half_length, half_width):
    """Separating-axis test for two equal-size oriented rectangles.

    Touching rectangles (zero-width overlap) count as separated.
    """
    c1 = math.cos(h1)
    s1 = math.sin(h1)
    c2 = math.cos(h2)
    s2 = math.sin(h2)
    axes = ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2))
    for ax, ay in axes:
        m1, r1 = _project_extent(x1, y1, c1, s1, half_length, half_width, ax, ay)
        m2, r2 = _project_extent(x2, y2, c2, s2, half_length, half_width, ax, ay)
        if abs(m1 - m2) >= r1 + r2:
            return False
    return True


def segment_hits_rect(x0, y0, x1, y1, xmin, ymin, xmax, ymax):
    """Liang-Barsky clip of the open segment (x0,y0)->(x1,y1) against a closed box."""
    dx = x1 - x0
    dy = y1 - y0
    t_enter = 0.0
    t_exit = 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            t = q / p
            if p < 0.0:
                if t > t_enter:
                    t_enter = t
            else:
                if t < t_exit:
                    t_exit = t
            if t_enter > t_exit:
                return False
    return t_enter < 1.0 and t_exit > 0.0


def segment_hits_rects(x0, y0, x1, y1, rects):
    for i in range(rects.shape[0]):
        r = rects[i]
        if segment_hits_rect(x0, y0, x1, y1, float(r[0]), float(r[1]), float(r[2]), float(r[3])):
            return True
    return False


def project_polyline(px, py, pts, cum):
    """Closest-point projection onto a polyline.

    Returns ``(s, lateral, tangent_heading)``: arc length of the foot point,
    signed offset (positive to the left of travel) and the segment heading.
    Ties between segments resolve to the earliest one.
    """
    a = pts[:-1]
    seg = pts[1:] - a
    sx = seg[:, 0]
    sy = seg[:, 1]
    seg2 = sx * sx + sy * sy
    t = ((px - a[:, 0]) * sx + (py - a[:, 1]) * sy) / seg2
    t = np.clip(t, 0.0, 1.0)
    ex = px - (a[:, 0] + t * sx)
    ey = py - (a[:, 1] + t * sy)
    i = int(np.argmin(ex * ex + ey * ey))
    seg_len = math.sqrt(float(seg2[i]))
    s = float(cum[i]) + float(t[i]) * seg_len
    lat = (float(sx[i]) * float(ey[i]) - float(sy[i]) * float(ex[i])) / seg_len
    return s, lat, math.atan2(float(sy[i]), float(sx[i]))


def project_polyline_batch(px, py, pts, cum, chunk=4096):
    """``project_polyline`` applied to arrays of points; returns three arrays."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    n = px.shape[0]
    a = pts[:-1]
    seg = pts[1:] - a
    sx = seg[:, 0]
    sy = seg[:, 1]
    seg2 = sx * sx + sy * sy
    seg_len = np.sqrt(seg2)
    heading = np.arctan2(sy, sx)
    s_out = np.empty(n)
    l_out = np.empty(n)
    h_out = np.empty(n)
    for lo in range(0, n, chunk):
        qx = px[lo:lo + chunk, None]
        qy = py[lo:lo + chunk, None]
        t = ((qx - a[:, 0]) * sx + (qy - a[:, 1]) * sy) / seg2
        t = np.clip(t, 0.0, 1.0)
        ex = qx - (a[:, 0] + t * sx)
        ey = qy - (a[:, 1] + t * sy)
        i = np.argmin(ex * ex + ey * ey, axis=1)
        r = np.arange(i.shape[0])
        s_out[lo:lo + chunk] = cum[i] + t[r, i] * seg_len[i]
        l_out[lo:lo + chunk] = (sx[i] * ey[r, i] - sy[i] * ex[r, i]) / seg_len[i]
        h_out[lo:lo + chunk] = heading[i]
    return s_out, l_out, h_out


def branch_forward(x, w0, b0, w1, b1, w2, b2):
    """tanh(W2 tanh(W1 tanh(W0 x + b0) + b1) + b2) for a single input vector."""
    h = np.tanh(w0 @ x + b0)
    h = np.tanh(w1 @ h + b1)
    return np.tanh(w2 @ h + b2)
