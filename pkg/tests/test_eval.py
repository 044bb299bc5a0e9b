"""Center-distance AP and velocity-error metric."""

from dataclasses import replace

from lrbev.evalmetrics import eval_detections
from lrbev.heads import DetectionBox
from lrbev.synth import GroundTruthBox


def _gt(cx, cy, cls=0, vx=0.0, vy=0.0):
    return GroundTruthBox(cx=cx, cy=cy, cz=0.0, length=4.0, width=2.0,
                          height=1.5, yaw=0.0, vx=vx, vy=vy, class_id=cls)


def _det(box, score=1.0, dx=0.0, dy=0.0, dvx=0.0):
    return DetectionBox(x=box.cx + dx, y=box.cy + dy, z=box.cz,
                        length=box.length, width=box.width, height=box.height,
                        yaw=box.yaw, vx=box.vx + dvx, vy=box.vy,
                        class_id=box.class_id, score=score)


GT = [_gt(0.0, 0.0, vx=3.0), _gt(20.0, 0.0, cls=1), _gt(0.0, 20.0, cls=1),
      _gt(-20.0, -20.0, cls=2, vy=-1.0)]


def test_perfect_copies_ap_one_everywhere():
    res = eval_detections([_det(g) for g in GT], GT)
    for th in res.ap_by_class.values():
        assert all(ap == 1.0 for ap in th.values())
    assert res.mean_velocity_error == 0.0
    assert res.tp == 4 and res.fp == 0 and res.fn == 0


def test_no_detections_ap_zero_fn_counts():
    res = eval_detections([], GT)
    for th in res.ap_by_class.values():
        assert all(ap == 0.0 for ap in th.values())
    assert res.fn == len(GT)


def test_detection_1p5m_away_matches_only_loose_thresholds():
    res = eval_detections([_det(GT[0], dx=1.5)], [GT[0]])
    th = res.ap_by_class[0]
    assert th[0.5] == 0.0 and th[1.0] == 0.0
    assert th[2.0] == 1.0 and th[4.0] == 1.0


def test_three_meter_shift_profile():
    dets = [_det(g, dx=3.0) for g in GT]
    res = eval_detections(dets, GT)
    for th in res.ap_by_class.values():
        assert th[0.5] == 0.0 and th[1.0] == 0.0 and th[2.0] == 0.0
        assert th[4.0] == 1.0


def test_velocity_error_over_matches():
    dets = [_det(GT[0], dvx=0.5), _det(GT[1])]
    res = eval_detections(dets, [GT[0], GT[1]])
    assert abs(res.mean_velocity_error - 0.25) < 1e-12


def test_false_positive_lowers_precision():
    fake = replace(_det(GT[0]), x=50.0, y=50.0, score=0.9)
    res = eval_detections([_det(GT[0]), fake], [GT[0]])
    # rank 1 TP (recall 1 at precision 1), rank 2 FP -> AP stays 1
    assert res.ap_by_class[0][2.0] == 1.0
    assert res.fp == 1


def test_high_scoring_false_positive_hurts_ap():
    fake = replace(_det(GT[0]), x=50.0, y=50.0, score=1.0)
    real = _det(GT[0], score=0.5)
    res = eval_detections([fake, real], [GT[0]])
    # TP arrives at rank 2: AP = 1 * (1/2)
    assert res.ap_by_class[0][2.0] == 0.5


def test_greedy_matching_is_one_to_one():
    g = [_gt(0.0, 0.0), _gt(1.0, 0.0)]
    d = [_det(g[0], score=1.0), _det(g[0], score=0.9, dx=0.1)]
    res = eval_detections(d, g)
    # second detection must not re-use the first ground truth
    assert res.tp == 2  # it matches the neighbor 0.9 m away at thr 2.0


def test_class_confusion_never_matches():
    wrong = replace(_det(GT[0]), class_id=2)
    res = eval_detections([wrong], [GT[0]])
    assert res.ap_by_class[0][4.0] == 0.0


def test_scores_decide_rank_not_insertion_order():
    g = [_gt(0.0, 0.0)]
    miss = DetectionBox(x=10.0, y=0.0, z=0, length=1, width=1, height=1,
                        yaw=0, vx=0, vy=0, class_id=0, score=0.2)
    hit = _det(g[0], score=0.8)
    a = eval_detections([miss, hit], g)
    b = eval_detections([hit, miss], g)
    assert a.ap_by_class[0][2.0] == b.ap_by_class[0][2.0] == 1.0
