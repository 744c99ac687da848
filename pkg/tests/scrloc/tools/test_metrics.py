import numpy as np
import pytest
from scrloc.tools.metrics import (
    EvalReport,
    batch_success,
    match_detections,
    required_unit_rate,
)


class TestReliability:

    def test_batch_success(self):
        assert batch_success(0.95, 20) == pytest.approx(0.358486, abs=1e-6)
        assert batch_success(0.7, 0) == 1.0
        assert batch_success(1.0, 500) == 1.0

    def test_required_unit_rate(self):
        assert required_unit_rate(0.90, 20) == pytest.approx(0.99475, abs=1e-5)
        assert required_unit_rate(1.0, 20) == 1.0

    @pytest.mark.parametrize('p, n', [(0.9, 20), (0.995, 20), (0.5, 3), (0.9999, 200)])
    def test_inverse(self, p, n):
        assert required_unit_rate(batch_success(p, n), n) == pytest.approx(p, abs=1e-12)

    @pytest.mark.parametrize('args', [(1.2, 20), (-0.1, 5), (0.5, -1)])
    def test_batch_success_domain(self, args):
        with pytest.raises(ValueError):
            batch_success(*args)

    def test_required_unit_rate_domain(self):
        with pytest.raises(ValueError):
            required_unit_rate(0.9, 0)
        with pytest.raises(ValueError):
            required_unit_rate(1.5, 20)
        with pytest.raises(ValueError):
            required_unit_rate(0.0, 20)


class TestMatching:

    def test_one_to_one(self):
        det = [(10.0, 10.0), (10.5, 10.0), (50.0, 50.0)]
        truth = [(10.2, 10.0), (80.0, 80.0)]
        pairs, fp, fn = match_detections(det, truth, radius=3.0)
        assert pairs == [(0, 0)]
        assert fp == [1, 2]
        assert fn == [1]

    def test_prefers_global_assignment(self):
        # Greedy nearest-first would pair det 0 with truth 1 and strand truth 0.
        det = [(0.0, 0.0), (3.5, 0.0)]
        truth = [(-2.0, 0.0), (1.0, 0.0)]
        pairs, fp, fn = match_detections(det, truth, radius=2.5)
        assert sorted(pairs) == [(0, 0), (1, 1)]
        assert fp == [] and fn == []

    def test_radius_is_inclusive(self):
        pairs, _, _ = match_detections([(3.0, 4.0)], [(0.0, 0.0)], radius=5.0)
        assert pairs == [(0, 0)]

    def test_empty(self):
        assert match_detections([], [(1.0, 1.0)], 3.0) == ([], [], [0])
        assert match_detections([(1.0, 1.0)], [], 3.0) == ([], [0], [])


class TestEvalReport:

    def test_counts(self):
        r = EvalReport.from_counts(tp=199, fn=1, fp=2, errors_px=np.linspace(0, 2, 199))
        assert r.recall == pytest.approx(0.995)
        assert r.precision == pytest.approx(199 / 201)
        assert not r.precision_undefined
        assert r.recall_ci[0] < r.recall < r.recall_ci[1]
        assert r.center_error_px['max'] == pytest.approx(2.0)
        assert r.center_error_mm['max'] == pytest.approx(0.4)

    def test_no_detections_is_flagged(self):
        r = EvalReport.from_counts(tp=0, fn=0, fp=0)
        assert r.precision == 1.0 and r.precision_undefined
        assert r.recall == 1.0
        assert np.isnan(r.center_error_px['p95'])

    def test_passes(self):
        good = EvalReport.from_counts(tp=1000, fn=0, fp=0, errors_px=np.full(1000, 0.5))
        assert good.passes()
        assert not good.passes(max_p95_px=0.4)
        with_fp = EvalReport.from_counts(tp=1000, fn=0, fp=1, errors_px=np.full(1000, 0.5))
        assert not with_fp.passes()
        # 100 of 100 has a Clopper-Pearson lower bound near 0.964.
        few = EvalReport.from_counts(tp=100, fn=0, fp=0, errors_px=np.zeros(100))
        assert few.recall == 1.0 and not few.passes()

    def test_to_dict(self):
        d = EvalReport.from_counts(tp=3, fn=1, fp=0, n_confusers=4, runtime_s=1.5).to_dict()
        assert d['tp'] == 3 and d['n_confusers'] == 4 and d['runtime_s'] == 1.5
        assert d['synthetic_negatives'] is True
