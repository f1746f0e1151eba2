from fractions import Fraction

import numpy as np
import pytest
from sklearn.metrics import davies_bouldin_score

from ratrack.evaluation import clear_mot, dbi, evaluate, idf1
from ratrack.geometry import BBox
from ratrack.records import Trajectory

A = BBox(0, 0, 10, 10)
B = BBox(100, 0, 10, 10)


def T(tid, *points):
    return Trajectory(tid, list(points))


# Micro-scenes traced by hand. Each entry: gt, hyp, expected (FP, FN, IDS, GT, MOTA, IDF1).
SCENES = {
    "perfect": (
        [T(1, (1, A), (2, A), (3, A)), T(2, (1, B), (2, B), (3, B))],
        [T(5, (1, A), (2, A), (3, A)), T(6, (1, B), (2, B), (3, B))],
        (0, 0, 0, 6, Fraction(1), Fraction(1)),
    ),
    "swap": (
        # ids swap at frame 2 and swap back at frame 3: 2 + 2 switches
        [T(1, (1, A), (2, A), (3, A)), T(2, (1, B), (2, B), (3, B))],
        [T(1, (1, A), (2, B), (3, A)), T(2, (1, B), (2, A), (3, B))],
        (0, 0, 4, 6, 1 - Fraction(4, 6), Fraction(2, 3)),
    ),
    "missed": (
        # one missed box: FN 1; identity keeps 3 of 4 -> 2*3/(6+0+1)
        [T(1, (1, A), (2, A), (3, A), (4, A))],
        [T(1, (1, A), (2, A), (4, A))],
        (0, 1, 0, 4, Fraction(3, 4), Fraction(6, 7)),
    ),
    "drifted": (
        # frame-2 hypothesis overlaps with IoU 1/3 < 0.5: one FP and one FN
        [T(1, (1, A), (2, A))],
        [T(1, (1, A), (2, BBox(5, 0, 10, 10)))],
        (1, 1, 0, 2, Fraction(0), Fraction(1, 2)),
    ),
    "fragmented": (
        # the same object is covered by id 1 then id 2: one switch; best map keeps 2 of 4
        [T(1, (1, A), (2, A), (3, A), (4, A))],
        [T(1, (1, A), (2, A)), T(2, (3, A), (4, A))],
        (0, 0, 1, 4, Fraction(3, 4), Fraction(1, 2)),
    ),
    "persistence": (
        # a better-overlapping newcomer does not steal an existing correspondence
        # (IoU 8/12 >= 0.5 keeps id 1); the newcomer is a false positive
        [T(1, (1, A), (2, A))],
        [T(1, (1, A), (2, BBox(2, 0, 10, 10))), T(2, (2, A))],
        (1, 0, 0, 2, Fraction(1, 2), Fraction(4, 5)),
    ),
}


@pytest.mark.parametrize("name", sorted(SCENES))
def test_micro_scene(name):
    gt, hyp, (fp, fn, ids, n, mota, f1) = SCENES[name]
    r = evaluate(gt, hyp)
    assert (r.FP, r.FN, r.IDS, r.GT_count) == (fp, fn, ids, n)
    assert r.MOTA == pytest.approx(float(mota), abs=1e-12)
    assert r.IDF1 == pytest.approx(float(f1), abs=1e-12)


def test_empty_hypothesis():
    gt = SCENES["perfect"][0]
    r = evaluate(gt, [])
    assert r.MOTA == 0.0 and r.IDF1 == 0.0 and r.FN == 6 and r.ML == 2


def test_mostly_tracked_and_lost():
    gt = [T(1, *[(f, A) for f in range(1, 11)]), T(2, *[(f, B) for f in range(1, 11)])]
    hyp = [T(1, *[(f, A) for f in range(1, 9)]), T(2, (1, B), (2, B))]
    c = clear_mot(gt, hyp)
    assert (c.MT, c.ML) == (1, 1)


def test_relabelling_hypotheses_changes_nothing():
    gt, hyp, _ = SCENES["swap"]
    relabelled = [Trajectory(t.id * 7 + 3, t.points) for t in hyp]
    a, b = evaluate(gt, hyp), evaluate(gt, relabelled)
    assert (a.MOTA, a.IDF1, a.IDS) == (b.MOTA, b.IDF1, b.IDS)


def test_spurious_box_adds_one_false_positive():
    rng = np.random.default_rng(0)
    for name, (gt, hyp, _) in SCENES.items():
        base = clear_mot(gt, hyp)
        extra = BBox(*rng.uniform(300, 400, 2), 10, 10)
        more = clear_mot(gt, hyp + [T(99, (2, extra))])
        assert more.FP == base.FP + 1 and more.FN >= base.FN, name


def test_idf1_empty_cases():
    assert idf1([], []) == (1.0, 1.0, 1.0)
    gt = SCENES["perfect"][0]
    assert idf1(gt, gt)[0] == 1.0


def test_report_outputs(tmp_path):
    r = evaluate(*SCENES["swap"][:2])
    assert "IDS" in r.table() and "MOTA" in r.table()
    r.write_csv(tmp_path / "m.csv")
    head, row = (tmp_path / "m.csv").read_text().splitlines()
    assert head.split(",")[:3] == ["MOTA", "IDF1", "IDP"]
    assert float(row.split(",")[0]) == r.MOTA


def test_dbi_two_tight_clusters():
    rng = np.random.default_rng(1)
    c1 = np.array([0.0, 0.0]) + 0.01 * np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    c2 = np.array([10.0, 0.0]) + 0.01 * np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    x = np.vstack([c1, c2])
    labels = [0] * 4 + [1] * 4
    assert dbi(x, labels) == pytest.approx(0.002, abs=1e-12)
    assert dbi(x * 3.7, labels) == pytest.approx(dbi(x, labels), rel=1e-12)
    perm = rng.permutation(8)
    assert dbi(x[perm], np.array(labels)[perm]) == pytest.approx(0.002, abs=1e-12)


def test_dbi_matches_reference_implementation():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=(60, 5))
        labels = rng.integers(0, 4, size=60)
        assert dbi(x, labels) == pytest.approx(davies_bouldin_score(x, labels), rel=1e-10)


def test_dbi_degenerate_inputs():
    with pytest.raises(ValueError):
        dbi(np.ones((3, 2)), [0, 0, 0])
    with pytest.raises(ValueError):
        dbi(np.array([[0.0, 0], [1, 0], [0, 0], [1, 0]]), [0, 0, 1, 1])
