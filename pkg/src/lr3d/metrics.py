"""Long-range Detection Score (LDS).

Matching uses relative center distance ``|P_c - G_c| / G_d``. AP is averaged
over the relative thresholds (0.025, 0.05, 0.1, 0.2) and over classes present
in the bucket; true-positive errors are taken from the r=0.1 matching and
weighted by recall::

    LDS = (3 * mAP + rec * sum(1 - min(1, m) for m in (mATE, mASE, mAOE))) / 6

Predictions are processed in descending score order. Ties are broken by
``det_id`` and then by record content, so results never depend on input order.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from lr3d.exceptions import NonPositiveDistance, OverlappingBuckets
from lr3d.geometry import wrap_angle

THRESHOLDS = (0.025, 0.05, 0.1, 0.2)
TP_THRESHOLD = 0.1
N_RECALL_POINTS = 101
TP_METRICS = ("mATE", "mASE", "mAOE")


@dataclass(frozen=True)
class DetectionRecord:
    frame_id: int
    class_id: int
    center: tuple
    size: tuple
    yaw: float
    score: float
    det_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")

    @property
    def distance(self) -> float:
        return math.sqrt(sum(c * c for c in self.center))

    def sort_key(self):
        return (-self.score, self.det_id, self.frame_id, self.class_id, self.center, self.size, self.yaw)

    def to_dict(self) -> dict:
        return {"det_id": self.det_id, "frame_id": self.frame_id, "class_id": self.class_id,
                "center": list(self.center), "size": list(self.size), "yaw": self.yaw, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionRecord":
        return cls(int(d["frame_id"]), int(d["class_id"]), tuple(d["center"]), tuple(d["size"]),
                   float(d["yaw"]), float(d["score"]), str(d.get("det_id", "")))


@dataclass(frozen=True)
class GroundTruthRecord:
    frame_id: int
    class_id: int
    center: tuple
    size: tuple
    yaw: float
    gt_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))

    @property
    def distance(self) -> float:
        return math.sqrt(sum(c * c for c in self.center))

    def sort_key(self):
        return (self.gt_id, self.frame_id, self.class_id, self.center, self.size, self.yaw)


@dataclass(frozen=True)
class RangeBucket:
    label: str
    d_min: float
    d_max: float

    def __post_init__(self):
        if not self.d_min < self.d_max:
            raise ValueError(f"bucket {self.label!r}: d_min must be < d_max")

    def contains(self, d: float) -> bool:
        return self.d_min <= d < self.d_max


OVERALL = RangeBucket("overall", 0.0, math.inf)
KITTI_BUCKETS = (RangeBucket("close", 0.0, 40.0), RangeBucket("distant", 40.0, math.inf))
NUSCENES_BUCKETS = (
    RangeBucket("close", 0.0, 40.0),
    RangeBucket("distant_40_51.2", 40.0, 51.2),
    RangeBucket("distant_51.2_inf", 51.2, math.inf),
)


def rel_dist_err(p_c, g_c, g_d: float) -> float:
    if not g_d > 0:
        raise NonPositiveDistance(f"ground-truth distance must be positive, got {g_d}")
    return float(np.linalg.norm(np.subtract(p_c, g_c, dtype=float))) / g_d


@dataclass
class Matching:
    """Greedy matching result. ``order`` lists prediction indices by descending score."""

    order: list
    is_tp: list  # aligned with ``order``
    pairs: list  # (pred index, gt index, rel err)
    n_gt: int

    @property
    def n_tp(self) -> int:
        return len(self.pairs)


def match(preds, gts, r: float) -> Matching:
    """Highest-score-first greedy matching on relative distance error (strictly < r)."""
    order = sorted(range(len(preds)), key=lambda i: preds[i].sort_key())
    pools = defaultdict(list)
    for j in sorted(range(len(gts)), key=lambda j: gts[j].sort_key()):
        g = gts[j]
        pools[(g.frame_id, g.class_id)].append(j)
    taken = set()
    is_tp, pairs = [], []
    for i in order:
        p = preds[i]
        best, best_err = None, math.inf
        for j in pools.get((p.frame_id, p.class_id), ()):
            if j in taken:
                continue
            err = rel_dist_err(p.center, gts[j].center, gts[j].distance)
            if err < best_err:
                best, best_err = j, err
        if best is not None and best_err < r:
            taken.add(best)
            pairs.append((i, best, best_err))
            is_tp.append(True)
        else:
            is_tp.append(False)
    return Matching(order, is_tp, pairs, len(gts))


def ap_from_matching(m: Matching) -> float:
    """101-point interpolated AP with precision envelope; 0 with no GT or no predictions."""
    if m.n_gt == 0 or not m.order:
        return 0.0
    tp = np.cumsum(m.is_tp, dtype=float)
    fp = np.cumsum(np.logical_not(m.is_tp), dtype=float)
    precision = tp / (tp + fp)
    recall = tp / m.n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(N_RECALL_POINTS) / (N_RECALL_POINTS - 1)
    idx = np.searchsorted(recall, levels, side="left")
    vals = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(vals.mean())


def average_precision(preds, gts, r: float) -> float:
    return ap_from_matching(match(preds, gts, r))


def _by_class(records):
    out = defaultdict(list)
    for rec in records:
        out[rec.class_id].append(rec)
    return out


def mean_ap(preds, gts, classes=None, thresholds=THRESHOLDS):
    """Mean AP over classes with at least one GT and over thresholds.

    Returns ``(mAP, table)`` where table maps (class_id, r) to AP; mAP is None
    when no listed class has ground truth.
    """
    gt_by, pred_by = _by_class(gts), _by_class(preds)
    present = sorted(c for c in (gt_by if classes is None else classes) if gt_by.get(c))
    table = {}
    for c in present:
        for r in thresholds:
            table[(c, r)] = average_precision(pred_by.get(c, []), gt_by[c], r)
    if not present:
        return None, table
    return sum(table[k] for k in sorted(table)) / len(table), table


def aligned_iou(size_a, size_b) -> float:
    """IoU of two boxes sharing center and orientation."""
    inter = float(np.prod(np.minimum(size_a, size_b)))
    union = float(np.prod(size_a)) + float(np.prod(size_b)) - inter
    return inter / union if union > 0 else 0.0


def _tp_errors(preds, gts, r):
    gt_by, pred_by = _by_class(gts), _by_class(preds)
    errs, scale_errs, orient_errs = [], [], []
    for c in sorted(gt_by):
        P, G = pred_by.get(c, []), gt_by[c]
        for i, j, err in match(P, G, r).pairs:
            errs.append(err)
            scale_errs.append(1.0 - aligned_iou(P[i].size, G[j].size))
            orient_errs.append(abs(wrap_angle(P[i].yaw - G[j].yaw)))
    return errs, scale_errs, orient_errs


def true_positive_metrics(preds, gts, r: float = TP_THRESHOLD):
    """(mATE, mASE, mAOE, rec) pooled over all TP pairs at threshold ``r``.

    Matching is done per class. Each error defaults to 1.0 when there is no TP.
    """
    errs, scale_errs, orient_errs = _tp_errors(preds, gts, r)
    if not errs:
        return 1.0, 1.0, 1.0, 0.0
    n = len(errs)
    return (sum(errs) / n / r, sum(scale_errs) / n, sum(orient_errs) / n, n / len(gts))


@dataclass
class LDSReport:
    bucket: str
    d_min: float
    d_max: float
    defined: bool
    lds: float | None = None
    mAP: float | None = None
    ap: dict = field(default_factory=dict)
    rec: float = 0.0
    mATE: float = 1.0
    mASE: float = 1.0
    mAOE: float = 1.0
    n_gt: int = 0
    n_pred: int = 0
    n_tp: int = 0

    def recomputed_lds(self) -> float | None:
        if not self.defined:
            return None
        tp_term = sum(1.0 - min(1.0, getattr(self, k)) for k in TP_METRICS)
        return (3.0 * self.mAP + self.rec * tp_term) / 6.0

    def check_identity(self, tol: float = 1e-12) -> bool:
        if not self.defined:
            return self.lds is None and self.mAP is None
        return abs(self.lds - self.recomputed_lds()) <= tol

    def to_dict(self) -> dict:
        return {
            "bucket": self.bucket,
            "d_min": self.d_min,
            "d_max": None if math.isinf(self.d_max) else self.d_max,
            "defined": self.defined,
            "lds": self.lds,
            "mAP": self.mAP,
            "ap": {f"{c}@{r}": v for (c, r), v in sorted(self.ap.items())},
            "rec": self.rec,
            "mATE": self.mATE,
            "mASE": self.mASE,
            "mAOE": self.mAOE,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "n_tp": self.n_tp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LDSReport":
        ap = {}
        for key, v in d["ap"].items():
            c, r = key.split("@")
            ap[(int(c), float(r))] = v
        kw = dict(d, ap=ap, d_max=math.inf if d["d_max"] is None else d["d_max"])
        return cls(**kw)


def lds(preds, gts, bucket: RangeBucket = OVERALL, classes=None) -> LDSReport:
    """LDS for one range bucket: GT filtered by GT distance, predictions by predicted distance."""
    G = [g for g in gts if bucket.contains(g.distance)]
    P = [p for p in preds if bucket.contains(p.distance)]
    if classes is not None:
        G = [g for g in G if g.class_id in classes]
        P = [p for p in P if p.class_id in classes]
    report = LDSReport(bucket.label, bucket.d_min, bucket.d_max, defined=bool(G), n_gt=len(G), n_pred=len(P))
    if not G:
        return report
    m_ap, table = mean_ap(P, G)
    mate, mase, maoe, rec = true_positive_metrics(P, G)
    report.mAP, report.ap = m_ap, table
    report.mATE, report.mASE, report.mAOE, report.rec = mate, mase, maoe, rec
    report.n_tp = len(_tp_errors(P, G, TP_THRESHOLD)[0])
    report.lds = report.recomputed_lds()
    return report


def check_buckets(buckets) -> None:
    ordered = sorted(buckets, key=lambda b: b.d_min)
    for a, b in zip(ordered, ordered[1:]):
        if a.d_max > b.d_min:
            raise OverlappingBuckets(f"buckets {a.label!r} and {b.label!r} overlap")


def bucketed_report(preds, gts, buckets=KITTI_BUCKETS, classes=None) -> list[LDSReport]:
    """One report per bucket followed by the overall report."""
    check_buckets(buckets)
    reports = [lds(preds, gts, b, classes) for b in buckets]
    reports.append(lds(preds, gts, OVERALL, classes))
    return reports


def parse_buckets(edges) -> tuple[RangeBucket, ...]:
    """Buckets from ascending edges, e.g. [0, 40, inf] -> close-style labels ``0-40``, ``40-inf``."""
    edges = [float(e) for e in edges]
    if len(edges) < 2:
        raise ValueError("need at least two bucket edges")

    def fmt(x):
        return "inf" if math.isinf(x) else f"{x:g}"

    out = tuple(RangeBucket(f"{fmt(a)}-{fmt(b)}", a, b) for a, b in zip(edges, edges[1:]))
    check_buckets(out)
    return out


def format_reports(reports) -> str:
    """Human-readable table."""
    head = f"{'bucket':<18}{'LDS':>8}{'mAP':>8}{'Rec':>8}{'mATE':>8}{'mASE':>8}{'mAOE':>8}{'nGT':>7}{'nTP':>7}"
    lines = [head, "-" * len(head)]
    for r in reports:
        if not r.defined:
            lines.append(f"{r.bucket:<18}{'undefined (no ground truth)':>40}")
            continue
        lines.append(f"{r.bucket:<18}{r.lds:8.4f}{r.mAP:8.4f}{r.rec:8.4f}{r.mATE:8.4f}"
                     f"{r.mASE:8.4f}{r.mAOE:8.4f}{r.n_gt:7d}{r.n_tp:7d}")
    return "\n".join(lines)
