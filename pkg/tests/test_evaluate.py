import numpy as np
import pytest

from uxpr.bagsim import generate_phantom_pool
from uxpr.classify import NearestNeighbour
from uxpr.evaluate import (CaseRecord, Metrics, compute_metrics,
                           flatten_ground_truth, group_by_bag,
                           leave_one_class_out_evaluate, load_report,
                           lobo_evaluate, mann_whitney_auroc, roc_curve,
                           save_report, save_roc_csv, save_summary_csv,
                           trapezoid_area)
from uxpr.segments import FIVE_CLASS, TWO_CLASS, SegmentRecord
from uxpr.volume import LabelEntry, LabelVolume, Volume


def case(true_class, p_pos, bag="b", name="s"):
    return CaseRecord(name, bag, true_class, (1.0 - p_pos, p_pos))


def cases_from(labels, probs, bag="b"):
    return [case(t, p, bag, f"{bag}/{i}") for i, (t, p) in enumerate(zip(labels, probs))]


def record(bag, k, label, base, object_class=None):
    # a 4-bin window: same-class windows overlap, cross-class ones never do
    h = np.zeros(256, np.int64)
    h[base:base + 4] = 1
    return SegmentRecord(f"{bag}/2/{k}", bag, 2, 4, label, h,
                         object_class=object_class)


def test_case_record_prediction():
    assert case(1, 0.7).predicted == 1
    assert case(1, 0.5).predicted == 0  # argmax ties to the lower class
    five = CaseRecord("s", "b", 2, (0.1, 0.1, 0.5, 0.2, 0.1))
    assert five.predicted == 2


def test_auroc_hand_values():
    assert mann_whitney_auroc([0.9, 0.4, 0.6, 0.2], [True, True, False, False]) == \
        pytest.approx(0.75)
    assert mann_whitney_auroc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0
    assert mann_whitney_auroc([0.1, 0.2, 0.8, 0.9], [True, True, False, False]) == 0.0
    assert mann_whitney_auroc([0.5, 0.5, 0.5], [True, False, False]) == 0.5


def test_auroc_is_rank_based():
    rng = np.random.default_rng(61)
    scores = rng.uniform(0, 1, 40).tolist()
    truth = (rng.uniform(0, 1, 40) < 0.4).tolist()
    if not any(truth):
        truth[0] = True
    base = mann_whitney_auroc(scores, truth)
    squashed = mann_whitney_auroc([s ** 3 for s in scores], truth)
    assert squashed == pytest.approx(base, abs=1e-12)


def test_auroc_equals_trapezoid_roc_area():
    rng = np.random.default_rng(62)
    for _ in range(50):
        n = int(rng.integers(4, 30))
        probs = np.round(rng.uniform(0.01, 0.99, n), 2).tolist()
        labels = (rng.uniform(0, 1, n) < 0.5).astype(int).tolist()
        if len(set(labels)) < 2:
            labels[0] = 1 - labels[0]
        records = cases_from(labels, probs)
        mw = mann_whitney_auroc(probs, [l == 1 for l in labels])
        area = trapezoid_area(roc_curve(records))
        assert abs(mw - area) < 1e-12


def test_compute_metrics_confusion():
    records = cases_from([1, 1, 0, 0], [0.9, 0.4, 0.6, 0.2])
    m = compute_metrics(records)
    assert (m.tp, m.fn, m.fp, m.tn) == (1, 1, 1, 1)
    assert m.accuracy == 0.5
    assert m.error_count == 2
    assert m.sensitivity == 0.5
    assert m.specificity == 0.5
    assert m.auroc == pytest.approx(0.75)
    with pytest.raises(ValueError):
        compute_metrics([])


def test_metrics_degenerate_auroc_is_none():
    # hard 0/1 probabilities carry no ranking information
    m = compute_metrics(cases_from([1, 0], [1.0, 0.0]))
    assert m.auroc is None
    assert m.accuracy == 1.0
    # single-class record sets have no ROC either
    m = compute_metrics(cases_from([1, 1], [0.9, 0.6]))
    assert m.auroc is None
    assert m.sensitivity == 1.0
    assert m.specificity is None


def test_nll_base2_with_floor():
    m = compute_metrics(cases_from([1, 0], [0.5, 0.5]))
    assert m.nll == pytest.approx(2.0)  # two cases at 1 bit each
    m = compute_metrics(cases_from([1], [0.0]))
    assert m.nll == pytest.approx(10.0)  # floored at 2^-10
    doc = m.to_doc()
    assert doc["nll"] == pytest.approx(10.0)
    assert doc["auroc"] is None


def test_five_class_positive_set():
    records = [CaseRecord("a", "b", 0, (0.6, 0.1, 0.1, 0.1, 0.1)),
               CaseRecord("b", "b", 3, (0.2, 0.1, 0.1, 0.5, 0.1))]
    m = compute_metrics(records, positive_classes=frozenset(range(1, 5)))
    assert (m.tp, m.tn, m.fp, m.fn) == (1, 1, 0, 0)
    assert m.auroc == 1.0


def test_roc_curve_shape():
    perfect = roc_curve(cases_from([1, 0], [0.9, 0.1]))
    assert perfect == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    flat = roc_curve(cases_from([1, 0], [0.5, 0.5]))
    assert flat == [(0.0, 0.0), (1.0, 1.0)]
    assert trapezoid_area(flat) == 0.5
    with pytest.raises(ValueError):
        roc_curve(cases_from([1, 1], [0.5, 0.6]))


def test_group_by_bag_sorts():
    cases = cases_from([1, 0], [0.9, 0.1], bag="zz") + \
        cases_from([0], [0.2], bag="aa")
    grouped = group_by_bag(cases)
    assert [bag for bag, _ in grouped] == ["aa", "zz"]
    assert len(grouped[1][1]) == 2


def test_lobo_holds_each_bag_out():
    bags = [
        ("bag_a", [record("bag_a", 0, 0, 10), record("bag_a", 1, 1, 200)]),
        ("bag_b", [record("bag_b", 0, 0, 12), record("bag_b", 1, 1, 202)]),
        ("bag_c", [record("bag_c", 0, 0, 14), record("bag_c", 1, 1, 204)]),
    ]
    seen = []

    def fit(ds):
        seen.append(sorted(set(ds.bags)))
        return NearestNeighbour(ds)

    res = lobo_evaluate(bags, fit, class_count=2)
    # each fold trains on exactly the other two bags
    assert seen == [["bag_b", "bag_c"], ["bag_a", "bag_c"], ["bag_a", "bag_b"]]
    assert res.pooled.count == 6
    assert res.pooled.accuracy == 1.0
    assert list(res.per_bag) == ["bag_a", "bag_b", "bag_c"]
    assert res.meta["protocol"] == "lobo"
    assert res.meta["bag_count"] == 3
    with pytest.raises(ValueError):
        lobo_evaluate(bags[:1], fit, class_count=2)


def test_lobo_skips_empty_bags():
    bags = [
        ("bag_a", [record("bag_a", 0, 0, 10), record("bag_a", 1, 1, 200)]),
        ("bag_b", []),
        ("bag_c", [record("bag_c", 0, 1, 201)]),
    ]
    with pytest.warns(UserWarning):
        res = lobo_evaluate(bags, NearestNeighbour, class_count=2)
    assert res.pooled.count == 3
    assert list(res.per_bag) == ["bag_a", "bag_c"]


def test_lobo_constant_stub():
    class AlwaysElectrical:
        class_count = 2

        def predict_many(self, hists):
            from uxpr.classify import Prediction
            return [Prediction((0.1, 0.9)) for _ in range(len(hists))]

    bags = [
        ("bag_a", [record("bag_a", 0, 0, 10), record("bag_a", 1, 1, 200)]),
        ("bag_b", [record("bag_b", 0, 0, 12), record("bag_b", 1, 1, 202)]),
    ]
    res = lobo_evaluate(bags, lambda ds: AlwaysElectrical(), class_count=2)
    assert res.pooled.sensitivity == 1.0
    assert res.pooled.specificity == 0.0
    assert res.pooled.accuracy == 0.5
    assert res.pooled.auroc == 0.5  # every score tied


def make_training_bags():
    bags = []
    for b, base in (("t0", 0), ("t1", 2)):
        rows = [
            record(b, 0, 1, 210 + base, object_class="mobile_phone"),
            record(b, 1, 1, 220 + base, object_class="laptop"),
            record(b, 2, 0, 30 + base, object_class="clothing"),
            record(b, 3, 0, 40 + base, object_class="bottle"),
        ]
        bags.append((b, rows))
    return bags


def test_loco_excludes_held_out_class_from_training():
    pool = generate_phantom_pool(seed=0)
    seen = []

    def fit(ds):
        seen.append(list(ds.ids))
        return NearestNeighbour(ds)

    res = leave_one_class_out_evaluate(
        make_training_bags(), "laptop", pool, fit, TWO_CLASS,
        seed=1, test_bag_count=2)
    # one model, fitted once, without the held-out class's segments
    assert len(seen) == 1
    assert sorted(seen[0]) == ["t0/2/0", "t0/2/2", "t0/2/3",
                               "t1/2/0", "t1/2/2", "t1/2/3"]
    assert res.meta["held_out_class"] == "laptop"
    assert res.meta["protocol"] == "leave_one_class_out"
    assert list(res.per_bag) == ["heldout_0", "heldout_1"]
    # every test bag really contains the unseen device
    for _, records in group_by_bag(res.cases):
        assert any(r.true_class == 1 for r in records)


def test_loco_is_deterministic_and_validates():
    pool = generate_phantom_pool(seed=0)
    bags = make_training_bags()
    a = leave_one_class_out_evaluate(bags, "mobile_phone", pool,
                                     NearestNeighbour, TWO_CLASS, seed=4,
                                     test_bag_count=2)
    b = leave_one_class_out_evaluate(bags, "mobile_phone", pool,
                                     NearestNeighbour, TWO_CLASS, seed=4,
                                     test_bag_count=2)
    assert [c.segment_id for c in a.cases] == [c.segment_id for c in b.cases]
    assert [c.probs for c in a.cases] == [c.probs for c in b.cases]
    with pytest.raises(ValueError):
        leave_one_class_out_evaluate(bags, "toaster", pool, NearestNeighbour,
                                     TWO_CLASS)
    with pytest.raises(ValueError):
        leave_one_class_out_evaluate(bags, "clothing", pool, NearestNeighbour,
                                     TWO_CLASS)


def test_flatten_ground_truth_majority_and_ties():
    g = np.zeros((2, 2, 2), np.uint8)
    g[:, :, :] = 3
    v = Volume.from_grid(g)
    labels = np.zeros(8, np.int32)
    # column (0,0): one voxel of label 1, one of label 2 -> tie, label 1 wins
    # column (1,0): two voxels of label 2
    labels[0] = 1            # (x=0,y=0,z=0)
    labels[4] = 2            # (x=0,y=0,z=1)
    labels[1] = labels[5] = 2  # (x=1,y=0,z=*)
    lv = LabelVolume((2, 2, 2), labels, {
        1: LabelEntry("phone", "mobile_phone", True),
        2: LabelEntry("sock", "clothing", False),
    })
    flat_v, flat_l = flatten_ground_truth(v, lv, axis="z")
    assert flat_v.ndim == 2 and flat_v.dims == (2, 2)
    assert flat_l.dims == (2, 2)
    grid = flat_l.labels.reshape(2, 2)
    assert grid[0, 0] == 1
    assert grid[0, 1] == 2
    assert grid[1, 0] == 0 and grid[1, 1] == 0
    assert set(flat_l.table) == {1, 2}


def test_flatten_ground_truth_prunes_table():
    v = Volume((2, 2, 2), np.full(8, 5, np.uint8))
    labels = np.zeros(8, np.int32)
    labels[0] = 7
    lv = LabelVolume((2, 2, 2), labels, {
        7: LabelEntry("a", "food", False),
        9: LabelEntry("b", "laptop", True),
    })
    _, flat_l = flatten_ground_truth(v, lv)
    assert set(flat_l.table) == {7}


def test_report_roundtrip(tmp_path):
    bags = [
        ("bag_a", [record("bag_a", 0, 0, 10), record("bag_a", 1, 1, 200)]),
        ("bag_b", [record("bag_b", 0, 0, 12), record("bag_b", 1, 1, 202)]),
    ]
    res = lobo_evaluate(bags, NearestNeighbour, class_count=2)
    save_report(tmp_path / "report.json", res)
    doc = load_report(tmp_path / "report.json")
    assert doc["meta"]["protocol"] == "lobo"
    assert doc["pooled"]["accuracy"] == 1.0
    assert set(doc["per_bag"]) == {"bag_a", "bag_b"}
    assert len(doc["cases"]) == 4
    (tmp_path / "old.json").write_text('{"format_version": 0}')
    with pytest.raises(ValueError):
        load_report(tmp_path / "old.json")


def test_summary_and_roc_csv(tmp_path):
    res = lobo_evaluate(
        [("bag_a", [record("bag_a", 0, 0, 10), record("bag_a", 1, 1, 200)]),
         ("bag_b", [record("bag_b", 0, 0, 12), record("bag_b", 1, 1, 202)])],
        NearestNeighbour, class_count=2)
    save_summary_csv(tmp_path / "summary.csv", res)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("scope,count,accuracy")
    assert lines[1].startswith("pooled,4,1.0")
    assert lines[2].startswith("bag:bag_a,")
    assert ",NA" in lines[1]  # hard 0/1 probabilities leave AUROC undefined
    save_roc_csv(tmp_path / "roc.csv", [(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)])
    assert (tmp_path / "roc.csv").read_text().splitlines()[1] == "0.0,0.0"
