"""Independent reference implementations shared by the unit and acceptance tests."""
import csv
import itertools
import math
from pathlib import Path

import numpy as np

DATA = Path(__file__).parent / "data"


def reported_scores():
    with open(DATA / "reported_scores.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mAP", "NDS", "mATE", "mASE", "mAOE", "mAVE"):
            r[k] = float(r[k])
    return rows


def brute_force_splat(points, feats, grid):
    """Scalar polar binning with one correctly rounded sum per bin and channel."""
    bins = {}
    for p, f in zip(points, feats):
        if not (grid.z_min <= p[2] <= grid.z_max):
            continue
        rho = math.hypot(p[0], p[1])
        if rho >= grid.rho_max:
            continue
        th = math.atan2(p[1], p[0])
        if th < 0:
            th += 2 * math.pi
        t = min(int(th // grid.theta_step), grid.n_theta - 1)
        r = min(int(rho // grid.rho_step), grid.n_rho - 1)
        bins.setdefault((t, r), []).append(f)
    out = np.zeros((feats.shape[1], grid.n_theta, grid.n_rho))
    for (t, r), fs in bins.items():
        fs = np.array(fs)
        for c in range(feats.shape[1]):
            out[c, t, r] = math.fsum(fs[:, c])
    return out


def _dist(a, b):
    return math.hypot(a.translation[0] - b.translation[0], a.translation[1] - b.translation[1])


def exhaustive_assignment(dets, gts, threshold):
    """Enumerate every injective partial det -> gt assignment within ``threshold``.

    Dets are visited in descending score (stable); the winning assignment
    minimises, lexicographically over that order, the key (0, distance, gt
    index) for a match and (1,) for a miss. Returns (order, {det: gt}).
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    options = []
    for i in order:
        opts = [None] + [j for j, g in enumerate(gts)
                         if g.sample_token == dets[i].sample_token and _dist(dets[i], g) < threshold]
        options.append(opts)
    best_key, best = None, None
    for combo in itertools.product(*options):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple((1,) if j is None else (0, _dist(dets[i], gts[j]), j) for i, j in zip(order, combo))
        if best_key is None or key < best_key:
            best_key, best = key, combo
    assign = {i: j for i, j in zip(order, best or ()) if j is not None}
    return order, assign


def _interp(x, xp, fp):
    """Piecewise-linear interpolation over a non-decreasing ``xp``.

    Left of the data the first value is held, right of it the result is 0.
    Where ``xp`` repeats a value, the last entry with that value wins.
    """
    if x > xp[-1]:
        return 0.0
    if x < xp[0]:
        return fp[0]
    if x == xp[-1]:
        return fp[-1]
    j = max(k for k in range(len(xp)) if xp[k] <= x)
    slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j])
    return slope * (x - xp[j]) + fp[j]


def reference_ap(dets, gts, threshold, min_recall=0.1, min_precision=0.1):
    """Average precision from the exhaustive assignment, computed with plain loops."""
    if not gts:
        return 0.0
    order, assign = exhaustive_assignment(dets, gts, threshold)
    if not assign:
        return 0.0
    tp = fp = 0
    rec, prec = [], []
    for i in order:
        if i in assign:
            tp += 1
        else:
            fp += 1
        rec.append(tp / len(gts))
        prec.append(tp / (tp + fp))
    # recall grid k * 0.01 with the endpoint pinned to 1.0, as linspace builds it
    grid = [k * 0.01 for k in range(100)] + [1.0]
    samples = [_interp(r, rec, prec) for r in grid]
    kept = [max(0.0, p - min_precision) for p in samples[round(100 * min_recall) + 1:]]
    return math.fsum(kept) / (len(kept) * (1.0 - min_precision))
