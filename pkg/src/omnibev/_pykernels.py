"""Pure numpy fallbacks for the compiled kernels in ``_kernels.pyx``.

Same signatures, same per-element arithmetic order, so results match the
compiled backend bit for bit.
"""
import math

import numpy as np

ST_OK = 0
ST_NO_CONVERGENCE = 1
ST_OUT_OF_DOMAIN = 2
MAX_BACKTRACK = 30


def project_points(pts, xi, k1, k2, fx, fy, cx, cy, u0, v0, width, height,
                   cos_limit, eps_denom, uv, valid, behind, start, stop):
    p = pts[start:stop]
    X, Y, Z = p[:, 0], p[:, 1], p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.sqrt(X * X + Y * Y + Z * Z)
        denom = Z + xi * n
        bad = (n == 0.0) | (denom <= eps_denom * n) | (Z < cos_limit * n)
        xc = X / denom
        yc = Y / denom
        r2 = xc * xc + yc * yc
        f = 1.0 + k1 * r2 + k2 * (r2 * r2)
        u = fx * (f * xc) + cx - u0
        v = fy * (f * yc) + cy - v0
    u[bad] = np.nan
    v[bad] = np.nan
    uv[start:stop, 0] = u
    uv[start:stop, 1] = v
    behind[start:stop] = bad
    valid[start:stop] = ~bad & (u >= 0.0) & (u < width) & (v >= 0.0) & (v < height)


def _radial(r, k1, k2):
    r2 = r * r
    return r * (1.0 + k1 * r2 + k2 * (r2 * r2))


def _radial_deriv(r, k1, k2):
    r2 = r * r
    return 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * (r2 * r2)


def unproject_pixels(pix, xi, k1, k2, fx, fy, cx, cy, u0, v0, cos_limit,
                     max_iter, tol, rays, status, residual, start, stop):
    q = pix[start:stop]
    mx = (q[:, 0] + u0 - cx) / fx
    my = (q[:, 1] + v0 - cy) / fy
    rd = np.sqrt(mx * mx + my * my)
    r = rd.copy()
    g = _radial(r, k1, k2) - rd
    stalled = np.zeros(r.shape, dtype=bool)

    for _ in range(max_iter):
        active = (np.abs(g) >= tol) & ~stalled
        if not active.any():
            break
        ia = np.flatnonzero(active)
        dg = _radial_deriv(r[ia], k1, k2)
        fold = ~(dg > 0.0)
        stalled[ia[fold]] = True
        ia, dg = ia[~fold], dg[~fold]
        ra, ga = r[ia], g[ia]
        step = ga / dg
        lam = np.ones_like(step)
        r_new = ra - step
        g_new = _radial(r_new, k1, k2) - rd[ia]
        for _bt in range(MAX_BACKTRACK):
            need = (r_new < 0.0) | ~(np.abs(g_new) < np.abs(ga))
            if not need.any():
                break
            lam[need] = 0.5 * lam[need]
            r_new[need] = ra[need] - lam[need] * step[need]
            g_new[need] = _radial(r_new[need], k1, k2) - rd[ia][need]
        r[ia] = r_new
        g[ia] = g_new

    residual[start:stop] = np.abs(g)
    ok = (np.abs(g) < tol) & (_radial_deriv(r, k1, k2) > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rd > 0.0, r / rd, 1.0)
        xc = mx * scale
        yc = my * scale
        r2 = xc * xc + yc * yc
        disc = 1.0 + (1.0 - xi * xi) * r2
        in_domain = disc >= 0.0
        lam = (xi + np.sqrt(disc)) / (1.0 + r2)
        Xs = lam * xc
        Ys = lam * yc
        Zs = lam - xi
        s = np.sqrt(Xs * Xs + Ys * Ys + Zs * Zs)
        Xs = Xs / s
        Ys = Ys / s
        Zs = Zs / s
    st = np.full(r.shape, ST_OK, dtype=np.int8)
    st[ok & ~in_domain] = ST_OUT_OF_DOMAIN
    st[ok & in_domain & (Zs < cos_limit)] = ST_OUT_OF_DOMAIN
    st[~ok] = ST_NO_CONVERGENCE
    out = np.stack([Xs, Ys, Zs], axis=1)
    out[~ok | ~in_domain] = np.nan
    rays[start:stop] = out
    status[start:stop] = st


def segment_fsum(feats, order, starts, out, c0, c1):
    for b in range(starts.shape[0] - 1):
        rows = feats[order[starts[b]:starts[b + 1]]]
        for c in range(c0, c1):
            out[b, c] = math.fsum(rows[:, c])
