"""Independent reference implementations used to check the library.

Nothing here imports the matching/AP kernels. Geometry is done on interval
overlaps, precision/recall are integrated exactly with ``Fraction``.
"""

from fractions import Fraction
from itertools import permutations


def overlap(a0, a1, b0, b1):
    return max(0.0, min(a1, b1) - max(a0, b0))


def ref_iou(a, b):
    """IoU of ``[x0, y0, x1, y1]`` lists via axis overlaps."""
    inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3])
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return 0.0 if union <= 0 else inter / union


def ref_match(dets, gts, thr):
    """dets: list of (box, score); gts: list of boxes. Returns gt index or None per det."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    claimed = set()
    out = [None] * len(dets)
    for i in order:
        candidates = [
            (ref_iou(dets[i][0], g), -j, j)
            for j, g in enumerate(gts)
            if j not in claimed
        ]
        candidates = [c for c in candidates if c[0] >= thr]
        if candidates:
            _, _, j = max(candidates)
            out[i] = j
            claimed.add(j)
    return out


def brute_force_assignment_best(dets, gts, thr):
    """Try every processing order of the detections; return the order-dependent outcome
    for the descending-score order (used to show greedy picks the higher score)."""
    outcomes = {}
    for perm in permutations(range(len(dets))):
        claimed = set()
        res = [None] * len(dets)
        for i in perm:
            best = None
            for j, g in enumerate(gts):
                if j in claimed:
                    continue
                v = ref_iou(dets[i][0], g)
                if v >= thr and (best is None or v > best[0]):
                    best = (v, j)
            if best:
                res[i] = best[1]
                claimed.add(best[1])
        outcomes[perm] = res
    return outcomes


def ref_ap(dets, gts, thr, exact=True):
    """All-point interpolated AP by direct integration of the precision envelope.

    For every recall level reached, the envelope value is the best precision
    at any rank whose recall is at least that level. Returns a Fraction (or
    None without ground truth).
    """
    if not gts:
        return None
    match = ref_match(dets, gts, thr)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    points = []
    tp = 0
    for rank, i in enumerate(order, start=1):
        if match[i] is not None:
            tp += 1
        points.append((Fraction(tp, len(gts)), Fraction(tp, rank)))
    levels = sorted({r for r, _ in points if r > 0})
    area = Fraction(0)
    prev = Fraction(0)
    for r in levels:
        env = max(p for rr, p in points if rr >= r)
        area += (r - prev) * env
        prev = r
    return area


def ref_mean(values):
    vals = [v for v in values if v is not None]
    return None if not vals else sum(vals) / len(vals)


def frame_ref_ap(frame, config, category, thr=0.5):
    dets = [(d.box.as_list(), d.score) for d in frame.outputs[config] if d.category == category]
    gts = [g.box.as_list() for g in frame.gts if g.category == category]
    v = ref_ap(dets, gts, thr)
    return None if v is None else float(v)


def ref_safe_set(frame, category, grid, thr=0.5):
    aps = {c: frame_ref_ap(frame, c, category, thr) for c in grid}
    base = aps[grid.baseline]
    if base is None:
        return set(grid)
    return {c for c, v in aps.items() if v >= base}


def ref_optimal(safe, fps):
    """Max FPS; ties to larger height, then larger proposal count."""
    ranked = sorted(safe, key=lambda c: (fps[c], c.image_height, c.proposal_count), reverse=True)
    return ranked[0]
