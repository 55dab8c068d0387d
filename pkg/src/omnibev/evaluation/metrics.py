"""Center-distance matching, AP and true-positive errors.

Follows the nuScenes detection conventions: greedy matching in descending
score order, precision sampled at 101 recall points, AP normalised above
``min_precision`` for recall above ``min_recall``, and TP errors averaged
over the same recall range from their cumulative means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIST_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
N_RECALL = 101
TP_METRICS = ("trans_err", "scale_err", "orient_err", "vel_err")

# per-class TP metrics that are undefined (rotationally symmetric or static)
EXCLUDED_TP = {
    "pole": frozenset({"orient_err", "vel_err"}),
    "traffic_sign": frozenset({"vel_err"}),
    "object": frozenset({"vel_err"}),
}


@dataclass
class EvalBox:
    sample_token: str
    translation: tuple  # global frame
    size: tuple  # (w, l, h)
    rotation: tuple  # (w, x, y, z)
    velocity: tuple  # global (vx, vy); NaN if unknown
    name: str
    score: float = -1.0  # -1 for ground truth
    ego_translation: tuple = (0.0, 0.0, 0.0)
    num_pts: int = -1

    def __post_init__(self):
        self.translation = tuple(float(v) for v in self.translation)
        self.size = tuple(float(v) for v in self.size)
        self.rotation = tuple(float(v) for v in self.rotation)
        self.velocity = tuple(float(v) for v in self.velocity)
        self.ego_translation = tuple(float(v) for v in self.ego_translation)

    @property
    def ego_dist(self) -> float:
        return math.hypot(self.ego_translation[0], self.ego_translation[1])

    @property
    def yaw(self) -> float:
        w, x, y, z = self.rotation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def center_distance(a: EvalBox, b: EvalBox) -> float:
    return math.hypot(a.translation[0] - b.translation[0], a.translation[1] - b.translation[1])


def velocity_l2(gt: EvalBox, det: EvalBox) -> float:
    return math.hypot(gt.velocity[0] - det.velocity[0], gt.velocity[1] - det.velocity[1])


def scale_iou(a: EvalBox, b: EvalBox) -> float:
    """IoU of the two boxes after aligning centres and orientation."""
    inter = np.prod(np.minimum(a.size, b.size))
    union = np.prod(a.size) + np.prod(b.size) - inter
    return float(inter / union)


def yaw_diff(gt: EvalBox, det: EvalBox, period: float = 2 * math.pi) -> float:
    diff = (gt.yaw - det.yaw + period / 2) % period - period / 2
    if diff > math.pi:
        diff -= 2 * math.pi
    return abs(diff)


def pair_errors(gt: EvalBox, det: EvalBox) -> dict:
    return {
        "trans_err": center_distance(gt, det),
        "scale_err": 1.0 - scale_iou(gt, det),
        "orient_err": yaw_diff(gt, det),
        "vel_err": velocity_l2(gt, det),
    }


def cummean(x) -> np.ndarray:
    """NaN-aware cumulative mean; all-NaN input gives ones."""
    x = np.asarray(x, dtype=float)
    if np.isnan(x).all():
        return np.ones(len(x))
    sums = np.nancumsum(x)
    counts = np.cumsum(~np.isnan(x))
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts != 0)


@dataclass
class MetricData:
    recall: np.ndarray
    precision: np.ndarray
    confidence: np.ndarray
    errors: dict  # metric -> (N_RECALL,)

    @classmethod
    def no_predictions(cls) -> MetricData:
        r = np.linspace(0, 1, N_RECALL)
        return cls(r, np.zeros(N_RECALL), np.zeros(N_RECALL), {m: np.ones(N_RECALL) for m in TP_METRICS})

    @property
    def max_recall_ind(self) -> int:
        nz = np.nonzero(self.confidence)[0]
        return int(nz[-1]) if len(nz) else 0


@dataclass
class Matching:
    """Greedy assignment at one threshold; indices refer to the input lists."""

    order: list  # det indices in processing order
    tp: list  # per processed det, 1 or 0
    pairs: list  # (det_idx, gt_idx, distance)
    npos: int


def score_order(dets) -> list[int]:
    """Descending score; ties keep input order."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def greedy_match(dets, gts, dist_th: float) -> Matching:
    by_sample: dict = {}
    for j, g in enumerate(gts):
        by_sample.setdefault(g.sample_token, []).append(j)
    taken = set()
    order = score_order(dets)
    tp, pairs = [], []
    for i in order:
        d = dets[i]
        best, best_j = math.inf, None
        for j in by_sample.get(d.sample_token, ()):
            if j in taken:
                continue
            dist = center_distance(gts[j], d)
            if dist < best:
                best, best_j = dist, j
        if best_j is not None and best < dist_th:
            taken.add(best_j)
            tp.append(1)
            pairs.append((i, best_j, best))
        else:
            tp.append(0)
    return Matching(order, tp, pairs, len(gts))


def accumulate(dets, gts, class_name: str, dist_th: float) -> tuple[MetricData, Matching]:
    """PR curve and TP-error curves for one class at one threshold.

    ``dets`` and ``gts`` must already be restricted to ``class_name``.
    """
    m = greedy_match(dets, gts, dist_th)
    if m.npos == 0 or not m.pairs:
        return MetricData.no_predictions(), m
    tp = np.cumsum(m.tp).astype(float)
    fp = np.cumsum([1 - t for t in m.tp]).astype(float)
    conf = np.array([dets[i].score for i in m.order], dtype=float)
    prec = tp / (fp + tp)
    rec = tp / float(m.npos)

    rec_i = np.linspace(0, 1, N_RECALL)
    prec_i = np.interp(rec_i, rec, prec, right=0)
    conf_i = np.interp(rec_i, rec, conf, right=0)

    excluded = EXCLUDED_TP.get(class_name, frozenset())
    match_conf = np.array([dets[i].score for i, _, _ in m.pairs], dtype=float)
    errors = {}
    for metric in TP_METRICS:
        if metric in excluded:
            vals = np.full(len(m.pairs), np.nan)
        else:
            vals = np.array([pair_errors(gts[j], dets[i])[metric] for i, j, _ in m.pairs])
        curve = cummean(vals)
        errors[metric] = np.interp(conf_i[::-1], match_conf[::-1], curve[::-1])[::-1]
    return MetricData(rec_i, prec_i, conf_i, errors), m


def calc_ap(md: MetricData, min_recall: float = MIN_RECALL, min_precision: float = MIN_PRECISION) -> float:
    prec = np.copy(md.precision)[round(100 * min_recall) + 1:]
    prec -= min_precision
    prec[prec < 0] = 0
    # exact sum so a perfect curve gives exactly 1.0
    return math.fsum(prec) / (len(prec) * (1.0 - min_precision))


def calc_tp(md: MetricData, metric: str, min_recall: float = MIN_RECALL) -> float:
    first = round(100 * min_recall) + 1
    last = md.max_recall_ind
    if last < first:
        return 1.0
    return float(np.mean(md.errors[metric][first:last + 1]))


@dataclass
class ClassResult:
    name: str
    ap: dict  # threshold -> AP
    matchings: dict  # threshold -> Matching
    tp_data: MetricData
    n_gt: int
    n_det: int

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values())))


def match_and_ap(dets, gts, class_name: str, thresholds=DIST_THRESHOLDS, tp_threshold: float = TP_THRESHOLD) -> ClassResult:
    """AP at each centre-distance threshold plus the greedy matchings."""
    dets = [d for d in dets if d.name == class_name]
    gts = [g for g in gts if g.name == class_name]
    ap, matchings = {}, {}
    tp_data = None
    for th in thresholds:
        md, m = accumulate(dets, gts, class_name, th)
        ap[th] = calc_ap(md)
        matchings[th] = m
        if th == tp_threshold:
            tp_data = md
    if tp_data is None:
        tp_data, _ = accumulate(dets, gts, class_name, tp_threshold)
    return ClassResult(class_name, ap, matchings, tp_data, len(gts), len(dets))


def tp_errors(result: ClassResult) -> dict:
    """ATE, ASE, AOE, AVE for one class; excluded metrics are NaN and
    classes without matches get 1.0."""
    excluded = EXCLUDED_TP.get(result.name, frozenset())
    return {m: (math.nan if m in excluded else calc_tp(result.tp_data, m)) for m in TP_METRICS}


def nds(mAP: float, mATE: float, mASE: float, mAOE: float, mAVE: float) -> float:
    """Detection score without the attribute term: ``(5 mAP + sum(1 - min(1, err))) / 9``."""
    tp = sum(1.0 - min(1.0, e) for e in (mATE, mASE, mAOE, mAVE))
    return (5.0 * mAP + tp) / 9.0


@dataclass
class Summary:
    mAP: float
    tp: dict  # metric -> mean over classes
    nds: float
    per_class: dict = field(default_factory=dict)


def summarize(results: dict) -> Summary:
    """Average class results; classes without ground truth are skipped."""
    scored = [r for r in results.values() if r.n_gt > 0]
    per_class = {}
    for name, r in results.items():
        per_class[name] = {"ap": {str(k): v for k, v in r.ap.items()}, "n_gt": r.n_gt, "n_det": r.n_det,
                           **tp_errors(r)}
    if not scored:
        tp = {m: 1.0 for m in TP_METRICS}
        return Summary(0.0, tp, nds(0.0, 1, 1, 1, 1), per_class)
    mAP = float(np.mean([r.mean_ap for r in scored]))
    tp = {}
    for metric in TP_METRICS:
        vals = [per_class[r.name][metric] for r in scored]
        vals = [v for v in vals if not math.isnan(v)]
        tp[metric] = float(np.mean(vals)) if vals else 1.0
    score = nds(mAP, tp["trans_err"], tp["scale_err"], tp["orient_err"], tp["vel_err"])
    return Summary(mAP, tp, score, per_class)
