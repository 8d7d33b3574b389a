# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled matching and per-image average precision.

Boxes are ``(n, 4)`` float64 arrays of ``x_min, y_min, x_max, y_max``.
Semantics are identical to :mod:`dsa_sim._kernels_py`.
"""

import numpy as np


cdef inline double _iou(double ax0, double ay0, double ax1, double ay1,
                        double bx0, double by0, double bx1, double by1) noexcept nogil:
    cdef double iw = (ax1 if ax1 < bx1 else bx1) - (ax0 if ax0 > bx0 else bx0)
    cdef double ih = (ay1 if ay1 < by1 else by1) - (ay0 if ay0 > by0 else by0)
    cdef double inter, union
    if iw <= 0.0 or ih <= 0.0:
        inter = 0.0
    else:
        inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


cdef void _match(const double[:, ::1] det, const long[::1] order,
                 const double[:, ::1] gt, double thr, unsigned char[::1] taken,
                 long[::1] out) noexcept nogil:
    cdef Py_ssize_t n = det.shape[0], m = gt.shape[0]
    cdef Py_ssize_t r, d, g, best
    cdef double best_iou, v
    for g in range(m):
        taken[g] = 0
    for r in range(n):
        d = order[r]
        best = -1
        best_iou = thr
        for g in range(m):
            if taken[g]:
                continue
            v = _iou(det[d, 0], det[d, 1], det[d, 2], det[d, 3],
                     gt[g, 0], gt[g, 1], gt[g, 2], gt[g, 3])
            if v >= best_iou and (best < 0 or v > best_iou):
                best = g
                best_iou = v
        out[d] = best
        if best >= 0:
            taken[best] = 1


def _descending_order(scores):
    # stable: equal scores keep input order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable").astype(np.int_)


def greedy_match(det_boxes, det_scores, gt_boxes, double iou_threshold):
    """Greedy score-ordered matching; returns gt index per detection or -1."""
    cdef double[:, ::1] det = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef long[::1] order = _descending_order(det_scores)
    out = np.empty(det.shape[0], dtype=np.int_)
    cdef long[::1] out_v = out
    cdef unsigned char[::1] taken = np.empty(gt.shape[0], dtype=np.uint8)
    with nogil:
        _match(det, order, gt, iou_threshold, taken, out_v)
    return out


def average_precision(det_boxes, det_scores, gt_boxes, double iou_threshold):
    """All-point interpolated AP of one image and category; NaN when no ground truth."""
    cdef double[:, ::1] det = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = det.shape[0], m = gt.shape[0]
    if m == 0:
        return float("nan")
    if n == 0:
        return 0.0
    cdef long[::1] order = _descending_order(det_scores)
    match = np.empty(n, dtype=np.int_)
    cdef long[::1] mv = match
    cdef unsigned char[::1] taken = np.empty(m, dtype=np.uint8)
    prec_arr = np.empty(n, dtype=np.float64)
    rec_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] prec = prec_arr
    cdef double[::1] rec = rec_arr
    cdef Py_ssize_t r
    cdef long tp = 0
    cdef double ap = 0.0, env, prev_rec
    with nogil:
        _match(det, order, gt, iou_threshold, taken, mv)
        for r in range(n):
            if mv[order[r]] >= 0:
                tp += 1
            prec[r] = tp / <double>(r + 1)
            rec[r] = tp / <double>m
        # envelope: running max of precision from the right
        env = 0.0
        for r in range(n - 1, -1, -1):
            if prec[r] > env:
                env = prec[r]
            prec[r] = env
        prev_rec = 0.0
        for r in range(n):
            if rec[r] > prev_rec:
                ap += (rec[r] - prev_rec) * prec[r]
                prev_rec = rec[r]
    return ap
