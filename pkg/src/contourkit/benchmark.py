"""Boundary benchmark: thinning, tolerant correspondence, PR curves, ODS/OIS/AP.

Soft maps are swept over a threshold grid (33 levels by default); each
binarization is thinned to 1-pixel curves and matched against every labeler's
edge map within a radius of tol * image diagonal (0.0075 by default, the
de-facto constant of the boundary-benchmark literature).  A predicted pixel
is a true positive if it matches any labeler; false negatives are unmatched
ground-truth pixels summed over labelers.

ODS picks one dataset-wide threshold by F-measure on summed counts, OIS sums
counts at each image's own best threshold, and AP integrates the dataset
precision/recall curve after enforcing precision monotonicity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOLERANCE = 0.0075
DEFAULT_THRESHOLD_COUNT = 33


@dataclass
class PRPoint:
    threshold: float
    tp: int
    fp: int
    fn: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f_measure: float = field(init=False)

    def __post_init__(self):
        self.precision = 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)
        self.recall = 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)
        s = self.precision + self.recall
        self.f_measure = 0.0 if s == 0 else 2.0 * self.precision * self.recall / s


@dataclass
class PRCurve:
    points: list[PRPoint]
    image_id: str = ""

    @property
    def thresholds(self):
        return tuple(p.threshold for p in self.points)


@dataclass
class BenchmarkScores:
    ods_f: float
    ods_threshold: float
    ois_f: float
    ap: float
    per_image: list[PRCurve]
    dataset_points: list[PRPoint]  # summed counts per threshold, for reports/plots


def thin(binary_map: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to 1-pixel-wide curves; iterates until stable."""
    m = np.asarray(binary_map) != 0
    m = m.copy()
    while True:
        changed = False
        for step in (0, 1):
            p = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=np.int8)
            p[1:-1, 1:-1] = m
            # 8-neighborhood, clockwise from north
            p2 = p[:-2, 1:-1]
            p3 = p[:-2, 2:]
            p4 = p[1:-1, 2:]
            p5 = p[2:, 2:]
            p6 = p[2:, 1:-1]
            p7 = p[2:, :-2]
            p8 = p[1:-1, :-2]
            p9 = p[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int8) for i in range(8))
            if step == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            remove = m & (b >= 2) & (b <= 6) & (a == 1) & cond
            if remove.any():
                m[remove] = False
                changed = True
        if not changed:
            return m


def _disc_offsets(radius: float):
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    d2 = dy**2 + dx**2
    keep = d2 <= radius**2
    return dy[keep], dx[keep], d2[keep]


def correspond(pred_thin: np.ndarray, gt_maps, tol: float = DEFAULT_TOLERANCE):
    """Greedy distance-ordered matching of predicted pixels against each labeler.

    Returns (tp, fp, fn): tp = predicted pixels matched to any labeler within
    radius tol * diagonal, fp = predicted pixels matched to none, fn = unmatched
    ground-truth pixels summed over labelers.  Matching within one labeler is
    one-to-one, pairs taken in ascending distance with (row, col) tie-break.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    pred = np.asarray(pred_thin) != 0
    h, w = pred.shape
    radius = tol * np.hypot(h, w)
    pred_pts = np.argwhere(pred)  # row-major order
    n_pred = len(pred_pts)
    dy, dx, d2 = _disc_offsets(radius)
    matched_any = np.zeros(n_pred, dtype=bool)
    fn_total = 0
    for gt_map in gt_maps:
        gt = np.asarray(gt_map) != 0
        if gt.shape != pred.shape:
            raise ValueError(f"ground truth shape {gt.shape} != prediction {pred.shape}")
        n_gt = int(gt.sum())
        if n_pred == 0 or n_gt == 0:
            fn_total += n_gt
            continue
        cand = []
        for k in range(len(dy)):
            gr = pred_pts[:, 0] + dy[k]
            gc = pred_pts[:, 1] + dx[k]
            ok = (gr >= 0) & (gr < h) & (gc >= 0) & (gc < w)
            ok[ok] = gt[gr[ok], gc[ok]]
            idx = np.nonzero(ok)[0]
            if idx.size:
                cand.append((np.full(idx.size, d2[k]), idx, gr[idx], gc[idx]))
        matches = 0
        if cand:
            dist2 = np.concatenate([c[0] for c in cand])
            pidx = np.concatenate([c[1] for c in cand])
            grow = np.concatenate([c[2] for c in cand])
            gcol = np.concatenate([c[3] for c in cand])
            prow = pred_pts[pidx, 0]
            pcol = pred_pts[pidx, 1]
            order = np.lexsort((gcol, grow, pcol, prow, dist2))
            pred_used = np.zeros(n_pred, dtype=bool)
            gt_used = np.zeros((h, w), dtype=bool)
            for i in order:
                pi = pidx[i]
                if pred_used[pi] or gt_used[grow[i], gcol[i]]:
                    continue
                pred_used[pi] = True
                gt_used[grow[i], gcol[i]] = True
                matches += 1
            matched_any |= pred_used
        fn_total += n_gt - matches
    tp = int(matched_any.sum())
    return tp, n_pred - tp, int(fn_total)


def default_thresholds(count: int = DEFAULT_THRESHOLD_COUNT) -> np.ndarray:
    """count levels evenly spaced in the open interval (0, 1)."""
    if count < 1:
        raise ValueError("need at least one threshold")
    return np.arange(1, count + 1) / (count + 1)


def pr_curve(soft_map: np.ndarray, gt_maps, thresholds=None, tol: float = DEFAULT_TOLERANCE, image_id: str = "") -> PRCurve:
    """Binarize-thin-correspond at each threshold of a [0,1] soft map."""
    soft = np.asarray(soft_map, dtype=np.float64)
    if soft.min() < 0 or soft.max() > 1:
        raise ValueError("soft map values must lie in [0, 1]")
    if thresholds is None:
        thresholds = default_thresholds()
    points = []
    for t in thresholds:
        pred = thin(soft > t)
        tp, fp, fn = correspond(pred, gt_maps, tol)
        points.append(PRPoint(float(t), tp, fp, fn))
    return PRCurve(points=points, image_id=image_id)


def _average_precision(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Trapezoidal area under the PR points with interpolated precision."""
    order = np.argsort(recalls, kind="stable")
    r = recalls[order]
    p = precisions[order]
    p = np.maximum.accumulate(p[::-1])[::-1]  # p(r) := max precision at recall >= r
    keep = np.concatenate(([True], r[1:] != r[:-1]))
    r = r[keep]
    p = p[keep]
    if r[0] > 0:
        r = np.concatenate(([0.0], r))
        p = np.concatenate(([p[0]], p))
    return float(np.trapezoid(p, r))


def aggregate(curves: list[PRCurve]) -> BenchmarkScores:
    """Fold per-image PR curves into ODS / OIS / AP."""
    if not curves:
        raise ValueError("need at least one image curve")
    thresholds = curves[0].thresholds
    for c in curves[1:]:
        if c.thresholds != thresholds:
            raise ValueError("per-image curves use different threshold grids")
    n_t = len(thresholds)
    tp = np.zeros(n_t, dtype=np.int64)
    fp = np.zeros(n_t, dtype=np.int64)
    fn = np.zeros(n_t, dtype=np.int64)
    ois_tp = ois_fp = ois_fn = 0
    for c in curves:
        fs = [pt.f_measure for pt in c.points]
        best = int(np.argmax(fs))  # ties resolve to the lowest threshold
        ois_tp += c.points[best].tp
        ois_fp += c.points[best].fp
        ois_fn += c.points[best].fn
        for j, pt in enumerate(c.points):
            tp[j] += pt.tp
            fp[j] += pt.fp
            fn[j] += pt.fn
    dataset_points = [PRPoint(thresholds[j], int(tp[j]), int(fp[j]), int(fn[j])) for j in range(n_t)]
    fs = np.array([pt.f_measure for pt in dataset_points])
    ods_idx = int(np.argmax(fs))
    ois_point = PRPoint(0.0, ois_tp, ois_fp, ois_fn)
    ap = _average_precision(
        np.array([pt.recall for pt in dataset_points]),
        np.array([pt.precision for pt in dataset_points]),
    )
    return BenchmarkScores(
        ods_f=float(fs[ods_idx]),
        ods_threshold=float(thresholds[ods_idx]),
        ois_f=ois_point.f_measure,
        ap=ap,
        per_image=curves,
        dataset_points=dataset_points,
    )


def write_report(scores: BenchmarkScores, path, extra: dict | None = None) -> None:
    """Flat key=value score report."""
    lines = [
        f"ods_f={scores.ods_f:.6f}",
        f"ods_threshold={scores.ods_threshold:.6f}",
        f"ois_f={scores.ois_f:.6f}",
        f"ap={scores.ap:.6f}",
        f"images={len(scores.per_image)}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_pr_csv(scores: BenchmarkScores, path) -> None:
    """Dataset-level PR curve as CSV for external plotting."""
    with open(path, "w") as fh:
        fh.write("threshold,tp,fp,fn,precision,recall,f\n")
        for pt in scores.dataset_points:
            fh.write(
                f"{pt.threshold:.6f},{pt.tp},{pt.fp},{pt.fn},"
                f"{pt.precision:.6f},{pt.recall:.6f},{pt.f_measure:.6f}\n"
            )
