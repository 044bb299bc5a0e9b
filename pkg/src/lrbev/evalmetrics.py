"""Desk-scale detection metrics.

Average precision uses plain BEV center distance for matching: detections
are taken best-score-first, each greedily matched to the nearest unmatched
ground truth of its class within the threshold. AP is the area under the
precision-recall curve sampled at every detection rank. Velocity error is
the mean absolute velocity difference (m/s) over true positives at the 2 m
threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
VELOCITY_THRESHOLD = 2.0


@dataclass
class EvalResult:
    ap_by_class: dict               # class_id -> {threshold: ap}
    mean_ap: dict                   # threshold -> mean over classes with truth
    mean_velocity_error: float      # over matches at the 2.0 m threshold
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return {"ap_by_class": {str(c): {str(t): ap for t, ap in th.items()}
                                for c, th in self.ap_by_class.items()},
                "mean_ap": {str(t): v for t, v in self.mean_ap.items()},
                "mean_velocity_error": self.mean_velocity_error,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


def _center_distance(det, gt) -> float:
    return math.hypot(det.x - gt.cx, det.y - gt.cy)


def _match_class(dets, gts, threshold: float):
    """Greedy one-to-one matching by score then distance.

    Returns (flags, matches): per-detection True/False in rank order, and
    the list of (det, gt) pairs.
    """
    ranked = sorted(dets, key=lambda d: (-d.score, d.y, d.x))
    taken = [False] * len(gts)
    flags = []
    matches = []
    for det in ranked:
        best = -1
        best_d = threshold
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            d = _center_distance(det, gt)
            if d <= best_d:
                best_d = d
                best = j
        if best >= 0:
            taken[best] = True
            flags.append(True)
            matches.append((det, gts[best]))
        else:
            flags.append(False)
    return flags, matches


def _average_precision(flags, num_gt: int) -> float:
    if num_gt == 0 or not flags:
        return 0.0
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for rank, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            recall = tp / num_gt
            ap += (recall - prev_recall) * (tp / rank)
            prev_recall = recall
    return ap


def eval_detections(detections, ground_truth) -> EvalResult:
    """Score detections against ground-truth boxes.

    ``ground_truth`` is a sequence of boxes with cx/cy/vx/vy/class_id
    attributes (scene ground truth); ``detections`` carry x/y/vx/vy/
    class_id/score.
    """
    class_ids = sorted({g.class_id for g in ground_truth}
                       | {d.class_id for d in detections})
    ap_by_class: dict = {}
    vel_errors = []
    tp = fp = fn = 0
    for cid in class_ids:
        dets = [d for d in detections if d.class_id == cid]
        gts = [g for g in ground_truth if g.class_id == cid]
        ap_by_class[cid] = {}
        for thr in DISTANCE_THRESHOLDS:
            flags, matches = _match_class(dets, gts, thr)
            ap_by_class[cid][thr] = _average_precision(flags, len(gts))
            if thr == VELOCITY_THRESHOLD:
                tp += sum(flags)
                fp += len(flags) - sum(flags)
                fn += len(gts) - sum(flags)
                vel_errors.extend(
                    math.hypot(det.vx - gt.vx, det.vy - gt.vy)
                    for det, gt in matches)
    mean_ap = {}
    with_truth = [c for c in class_ids if any(g.class_id == c for g in ground_truth)]
    for thr in DISTANCE_THRESHOLDS:
        mean_ap[thr] = (sum(ap_by_class[c][thr] for c in with_truth) / len(with_truth)
                        if with_truth else 0.0)
    mve = sum(vel_errors) / len(vel_errors) if vel_errors else 0.0
    return EvalResult(ap_by_class=ap_by_class, mean_ap=mean_ap,
                      mean_velocity_error=mve, tp=tp, fp=fp, fn=fn)
