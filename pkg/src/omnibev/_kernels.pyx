# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine mirrors the arithmetic order of its counterpart in
``_pykernels`` so both backends return bit-identical results.
"""
from libc.math cimport sqrt, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    # non-overlapping partials of a double sum span at most 2098 bit positions
    MAX_PARTIALS = 2112
    MAX_BACKTRACK = 30
    # unproject status codes
    ST_OK = 0
    ST_NO_CONVERGENCE = 1
    ST_OUT_OF_DOMAIN = 2


def project_points(double[:, ::1] pts, double xi, double k1, double k2,
                   double fx, double fy, double cx, double cy,
                   double u0, double v0, double width, double height,
                   double cos_limit, double eps_denom,
                   double[:, ::1] uv, cnp.uint8_t[::1] valid, cnp.uint8_t[::1] behind,
                   Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t i
    cdef double X, Y, Z, n, denom, xc, yc, r2, f, u, v
    with nogil:
        for i in range(start, stop):
            X = pts[i, 0]
            Y = pts[i, 1]
            Z = pts[i, 2]
            n = sqrt(X * X + Y * Y + Z * Z)
            denom = Z + xi * n
            if n == 0.0 or denom <= eps_denom * n or Z < cos_limit * n:
                uv[i, 0] = 0.0 / 0.0
                uv[i, 1] = 0.0 / 0.0
                valid[i] = 0
                behind[i] = 1
                continue
            xc = X / denom
            yc = Y / denom
            r2 = xc * xc + yc * yc
            f = 1.0 + k1 * r2 + k2 * (r2 * r2)
            u = fx * (f * xc) + cx - u0
            v = fy * (f * yc) + cy - v0
            uv[i, 0] = u
            uv[i, 1] = v
            behind[i] = 0
            valid[i] = 1 if (u >= 0.0 and u < width and v >= 0.0 and v < height) else 0


cdef inline double _radial(double r, double k1, double k2) nogil:
    cdef double r2 = r * r
    return r * (1.0 + k1 * r2 + k2 * (r2 * r2))


cdef inline double _radial_deriv(double r, double k1, double k2) nogil:
    cdef double r2 = r * r
    return 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * (r2 * r2)


def unproject_pixels(double[:, ::1] pix, double xi, double k1, double k2,
                     double fx, double fy, double cx, double cy,
                     double u0, double v0, double cos_limit,
                     int max_iter, double tol,
                     double[:, ::1] rays, cnp.int8_t[::1] status, double[::1] residual,
                     Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t i
    cdef int it, bt
    cdef double mx, my, rd, r, g, dg, step, lam, r_new, g_new, scale
    cdef double xc, yc, r2, disc, s, Xs, Ys, Zs
    with nogil:
        for i in range(start, stop):
            mx = (pix[i, 0] + u0 - cx) / fx
            my = (pix[i, 1] + v0 - cy) / fy
            rd = sqrt(mx * mx + my * my)
            r = rd
            g = _radial(r, k1, k2) - rd
            it = 0
            while fabs(g) >= tol and it < max_iter:
                dg = _radial_deriv(r, k1, k2)
                if not (dg > 0.0):
                    break
                step = g / dg
                lam = 1.0
                r_new = r - step
                g_new = _radial(r_new, k1, k2) - rd
                bt = 0
                while (r_new < 0.0 or not (fabs(g_new) < fabs(g))) and bt < MAX_BACKTRACK:
                    lam = 0.5 * lam
                    r_new = r - lam * step
                    g_new = _radial(r_new, k1, k2) - rd
                    bt = bt + 1
                r = r_new
                g = g_new
                it = it + 1
            residual[i] = fabs(g)
            if not (fabs(g) < tol) or not (_radial_deriv(r, k1, k2) > 0.0):
                status[i] = ST_NO_CONVERGENCE
                rays[i, 0] = 0.0 / 0.0
                rays[i, 1] = 0.0 / 0.0
                rays[i, 2] = 0.0 / 0.0
                continue
            if rd > 0.0:
                scale = r / rd
            else:
                scale = 1.0
            xc = mx * scale
            yc = my * scale
            r2 = xc * xc + yc * yc
            disc = 1.0 + (1.0 - xi * xi) * r2
            if disc < 0.0:
                status[i] = ST_OUT_OF_DOMAIN
                rays[i, 0] = 0.0 / 0.0
                rays[i, 1] = 0.0 / 0.0
                rays[i, 2] = 0.0 / 0.0
                continue
            lam = (xi + sqrt(disc)) / (1.0 + r2)
            Xs = lam * xc
            Ys = lam * yc
            Zs = lam - xi
            s = sqrt(Xs * Xs + Ys * Ys + Zs * Zs)
            Xs = Xs / s
            Ys = Ys / s
            Zs = Zs / s
            rays[i, 0] = Xs
            rays[i, 1] = Ys
            rays[i, 2] = Zs
            if Zs < cos_limit:
                status[i] = ST_OUT_OF_DOMAIN
            else:
                status[i] = ST_OK


cdef double _fsum_segment(const double[:, ::1] feats, const cnp.int64_t[::1] order,
                          Py_ssize_t lo, Py_ssize_t hi, Py_ssize_t c,
                          double* p) nogil:
    # CPython's math.fsum (Shewchuk msum + half-even correction), finite inputs only.
    cdef Py_ssize_t n = 0, i, j, k
    cdef double x, y, t, hi_, lo_, yr
    for k in range(lo, hi):
        x = feats[order[k], c]
        i = 0
        for j in range(n):
            y = p[j]
            if fabs(x) < fabs(y):
                t = x
                x = y
                y = t
            hi_ = x + y
            yr = hi_ - x
            lo_ = y - yr
            if lo_ != 0.0:
                p[i] = lo_
                i = i + 1
            x = hi_
        n = i
        if x != 0.0:
            p[n] = x
            n = n + 1
    hi_ = 0.0
    lo_ = 0.0
    if n > 0:
        n = n - 1
        hi_ = p[n]
        while n > 0:
            x = hi_
            n = n - 1
            y = p[n]
            hi_ = x + y
            yr = hi_ - x
            lo_ = y - yr
            if lo_ != 0.0:
                break
        if n > 0 and ((lo_ < 0.0 and p[n - 1] < 0.0) or (lo_ > 0.0 and p[n - 1] > 0.0)):
            y = lo_ * 2.0
            x = hi_ + y
            yr = x - hi_
            if y == yr:
                hi_ = x
    return hi_


def segment_fsum(const double[:, ::1] feats, const cnp.int64_t[::1] order,
                 const cnp.int64_t[::1] starts, double[:, ::1] out,
                 Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t b, c, nb = starts.shape[0] - 1
    cdef double partials[MAX_PARTIALS]
    with nogil:
        for b in range(nb):
            for c in range(c0, c1):
                out[b, c] = _fsum_segment(feats, order, starts[b], starts[b + 1], c, partials)
