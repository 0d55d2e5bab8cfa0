"""Brute-force LDS reference.

Deliberately slow and self-contained: no imports from the rest of the
package, no numpy. Records are plain dicts with keys ``frame_id``,
``class_id``, ``center``, ``size``, ``yaw`` (and ``score``/``id`` for
predictions, ``id`` for ground truth). Used as an oracle for
:mod:`lr3d.metrics`.
"""
import math

REL_THRESHOLDS = [0.025, 0.05, 0.1, 0.2]


def _norm(v):
    return math.sqrt(sum(x * x for x in v))


def _wrap(a):
    while a > math.pi:
        a -= 2 * math.pi
    while a <= -math.pi:
        a += 2 * math.pi
    return a


def _score_order(preds):
    # selection sort by (-score, id, frame, class, center, size, yaw)
    remaining = list(preds)
    out = []
    while remaining:
        best = remaining[0]
        for p in remaining[1:]:
            if _pred_before(p, best):
                best = p
        out.append(best)
        remaining.remove(best)
    return out


def _pred_before(a, b):
    ka = (-a["score"], a["id"], a["frame_id"], a["class_id"], tuple(a["center"]), tuple(a["size"]), a["yaw"])
    kb = (-b["score"], b["id"], b["frame_id"], b["class_id"], tuple(b["center"]), tuple(b["size"]), b["yaw"])
    return ka < kb


def _gt_before(a, b):
    ka = (a["id"], a["frame_id"], a["class_id"], tuple(a["center"]), tuple(a["size"]), a["yaw"])
    kb = (b["id"], b["frame_id"], b["class_id"], tuple(b["center"]), tuple(b["size"]), b["yaw"])
    return ka < kb


def greedy_labels(preds, gts, r):
    """Return ([(pred, gt-or-None, err)], in score order) using exhaustive scans."""
    taken = [False] * len(gts)
    result = []
    for p in _score_order(preds):
        best_k, best_err = None, math.inf
        for k, g in enumerate(gts):
            if taken[k] or g["frame_id"] != p["frame_id"] or g["class_id"] != p["class_id"]:
                continue
            d = [p["center"][a] - g["center"][a] for a in range(3)]
            err = _norm(d) / _norm(g["center"])
            if best_k is None or err < best_err or (err == best_err and _gt_before(g, gts[best_k])):
                best_k, best_err = k, err
        if best_k is not None and best_err < r:
            taken[best_k] = True
            result.append((p, gts[best_k], best_err))
        else:
            result.append((p, None, None))
    return result


def ap_bruteforce(preds, gts, r):
    if not gts or not preds:
        return 0.0
    labels = greedy_labels(preds, gts, r)
    points = []  # (recall, precision) after each prefix
    for k in range(1, len(labels) + 1):
        tp = sum(1 for _, g, _ in labels[:k] if g is not None)
        points.append((tp / len(gts), tp / k))
    total = 0.0
    for i in range(101):
        level = i / 100
        best = 0.0
        for rec, prec in points:
            if rec >= level and prec > best:
                best = prec
        total += best
    return total / 101


def lds_reference(preds, gts, d_min=0.0, d_max=math.inf):
    """Returns a dict with lds, mAP, rec, mATE, mASE, mAOE, or None values when no GT is in range."""
    G = [g for g in gts if d_min <= _norm(g["center"]) < d_max]
    P = [p for p in preds if d_min <= _norm(p["center"]) < d_max]
    if not G:
        return {"lds": None, "mAP": None}
    classes = sorted({g["class_id"] for g in G})
    ap_sum = 0.0
    for c in classes:
        Gc = [g for g in G if g["class_id"] == c]
        Pc = [p for p in P if p["class_id"] == c]
        for r in REL_THRESHOLDS:
            ap_sum += ap_bruteforce(Pc, Gc, r)
    m_ap = ap_sum / (len(classes) * len(REL_THRESHOLDS))

    te, se, oe = [], [], []
    for c in classes:
        Gc = [g for g in G if g["class_id"] == c]
        Pc = [p for p in P if p["class_id"] == c]
        for p, g, err in greedy_labels(Pc, Gc, 0.1):
            if g is None:
                continue
            te.append(err / 0.1)
            inter = 1.0
            for a in range(3):
                inter *= min(p["size"][a], g["size"][a])
            vp = p["size"][0] * p["size"][1] * p["size"][2]
            vg = g["size"][0] * g["size"][1] * g["size"][2]
            se.append(1.0 - inter / (vp + vg - inter))
            oe.append(abs(_wrap(p["yaw"] - g["yaw"])))
    if te:
        mate, mase, maoe = sum(te) / len(te), sum(se) / len(se), sum(oe) / len(oe)
    else:
        mate = mase = maoe = 1.0
    rec = len(te) / len(G)
    score = (3 * m_ap + rec * ((1 - min(1, mate)) + (1 - min(1, mase)) + (1 - min(1, maoe)))) / 6
    return {"lds": score, "mAP": m_ap, "rec": rec, "mATE": mate, "mASE": mase, "mAOE": maoe}
