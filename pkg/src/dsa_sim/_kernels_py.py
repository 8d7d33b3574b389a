"""Pure-Python matching and per-image average precision.

Reference twin of the compiled ``_kernels`` extension; used when the
extension is unavailable or ``DSA_SIM_PURE_PYTHON=1`` is set.
"""

import numpy as np


def _iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0.0 and ih > 0.0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _order(scores):
    # sorted() is stable, so equal scores keep input order
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def _match(det, scores, gt, thr):
    out = [-1] * len(det)
    taken = [False] * len(gt)
    for d in _order(scores):
        best, best_iou = -1, thr
        for g, gbox in enumerate(gt):
            if taken[g]:
                continue
            v = _iou(det[d], gbox)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = g, v
        out[d] = best
        if best >= 0:
            taken[best] = True
    return out


def _as_rows(boxes):
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4).tolist()


def greedy_match(det_boxes, det_scores, gt_boxes, iou_threshold):
    """Greedy score-ordered matching; returns gt index per detection or -1."""
    scores = np.asarray(det_scores, dtype=np.float64).reshape(-1).tolist()
    out = _match(_as_rows(det_boxes), scores, _as_rows(gt_boxes), float(iou_threshold))
    return np.asarray(out, dtype=np.int_)


def average_precision(det_boxes, det_scores, gt_boxes, iou_threshold):
    """All-point interpolated AP of one image and category; NaN when no ground truth."""
    det = _as_rows(det_boxes)
    gt = _as_rows(gt_boxes)
    if not gt:
        return float("nan")
    if not det:
        return 0.0
    scores = np.asarray(det_scores, dtype=np.float64).reshape(-1).tolist()
    match = _match(det, scores, gt, float(iou_threshold))
    m = len(gt)
    prec, rec = [], []
    tp = 0
    for r, d in enumerate(_order(scores)):
        if match[d] >= 0:
            tp += 1
        prec.append(tp / (r + 1))
        rec.append(tp / m)
    env = 0.0
    for r in range(len(prec) - 1, -1, -1):
        env = max(env, prec[r])
        prec[r] = env
    ap = 0.0
    prev_rec = 0.0
    for p, r in zip(prec, rec):
        if r > prev_rec:
            ap += (r - prev_rec) * p
            prev_rec = r
    return ap
