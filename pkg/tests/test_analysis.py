import math

import numpy as np
import pytest

from vqct.analysis import (AnalysisError, perplexity, pixel_metrics, similarity_drift,
                           toy2d, utilization, utilization_from_indices)
from vqct.model import BaselineModel


class TestPixelMetrics:
    def test_identity(self):
        x = np.random.default_rng(0).random((2, 3, 4, 4))
        m = pixel_metrics(x, x.copy())
        assert m.l1 == 0 and m.l2 == 0 and m.psnr == math.inf

    def test_zero_vs_one(self):
        m = pixel_metrics(np.zeros((3, 4, 4)), np.ones((3, 4, 4)))
        assert (m.l1, m.l2) == (1.0, 1.0)
        assert abs(m.psnr) < 1e-6

    def test_zero_vs_half(self):
        m = pixel_metrics(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.5))
        assert m.l2 == 0.25
        assert abs(m.psnr - 6.020599913279624) < 1e-6

    def test_scalar_loop_agreement(self):
        rng = np.random.default_rng(1)
        x, y = rng.random(50), rng.random(50)
        l1 = sum(abs(a - b) for a, b in zip(x, y)) / 50
        l2 = sum((a - b) ** 2 for a, b in zip(x, y)) / 50
        m = pixel_metrics(x, y)
        assert abs(m.l1 - l1) < 1e-12 and abs(m.l2 - l2) < 1e-12
        assert abs(m.psnr - 10 * math.log10(1 / l2)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(AnalysisError):
            pixel_metrics(np.zeros(3), np.zeros(4))


class TestUtilization:
    def test_degenerate(self):
        r = utilization_from_indices([np.zeros((1, 4, 4), dtype=int)], [16])
        assert r.used_fraction == [1 / 16] and r.perplexity == [1.0]

    def test_uniform(self):
        r = utilization_from_indices([np.tile(np.arange(8), 5), np.arange(4)], [8, 4])
        assert r.perplexity[0] == pytest.approx(8) and r.perplexity[1] == pytest.approx(4)
        assert r.overall_used_fraction == 1.0

    def test_bounds_and_errors(self):
        rng = np.random.default_rng(0)
        r = utilization_from_indices([rng.integers(0, 5, 100)], [10])
        assert 0 <= r.used_fraction[0] <= 1 and 1 <= r.perplexity[0] <= 10
        with pytest.raises(AnalysisError):
            utilization_from_indices([np.array([10])], [10])
        with pytest.raises(AnalysisError):
            utilization_from_indices([np.array([], dtype=int)], [3])
        with pytest.raises(AnalysisError):
            perplexity(np.zeros(3))

    def test_model_pass(self, tmp_path):
        model = BaselineModel(k=8, n_c=4, base_width=4, rng=np.random.default_rng(0))
        images = np.random.default_rng(1).random((5, 3, 8, 8))
        r = utilization(model, images, batch_size=2)
        assert r.counts[0].sum() == 5 * 2 * 2
        r.write_csv(tmp_path / "u.csv")
        assert len((tmp_path / "u.csv").read_text().splitlines()) == 9
        with pytest.raises(AnalysisError):
            utilization(model, images[:0])


class TestDrift:
    def test_identical_checkpoints(self):
        m = np.random.default_rng(0).normal(size=(20, 4))
        d = similarity_drift([m, m.copy(), m.copy()])
        assert d.drift == [0.0, 0.0, 0.0] and len(d.probe) == 10

    def test_single_probe(self):
        rng = np.random.default_rng(1)
        d = similarity_drift([rng.normal(size=(6, 3)), rng.normal(size=(6, 3))], probe_indices=[2])
        assert d.final == 0.0

    def test_matches_direct_computation(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(12, 5)), rng.normal(size=(12, 5))
        probe = [0, 3, 7]

        def cos(m):
            n = m / np.linalg.norm(m, axis=1, keepdims=True)
            return n @ n.T
        d = similarity_drift({0: a, 10: b}, probe_indices=probe)
        assert d.steps == [0, 10]
        assert d.final == pytest.approx(np.mean(np.abs(cos(b[probe]) - cos(a[probe]))), abs=1e-12)
        assert d.final >= 0

    def test_errors(self):
        m = np.zeros((4, 2))
        with pytest.raises(AnalysisError):
            similarity_drift([m])
        with pytest.raises(AnalysisError):
            similarity_drift([m, m], probe_indices=[4])


class TestToy2d:
    def test_direct_moves_one_code_per_step(self):
        run = toy2d(steps=30, seed=0)
        assert all(run.changed_codes("direct", s) == 1 for s in range(1, 31))

    def test_transfer_moves_many_codes(self):
        hits = sum(toy2d(steps=1, seed=s).changed_codes("transfer", 1) > 1 for s in range(20))
        assert hits >= 19

    def test_zero_steps(self):
        run = toy2d(steps=0, seed=3)
        for v in ("direct", "transfer"):
            np.testing.assert_array_equal(run.trajectories[v][0], run.initial)
        assert run.steps == 0

    def test_csv_rows(self, tmp_path):
        run = toy2d(steps=50, seed=1)
        run.write_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "step,variant,code_id,x,y"
        assert len(lines) - 1 == 2 * 51 * 8
        assert len(run.selected["direct"]) == 50

    def test_deterministic(self):
        np.testing.assert_array_equal(toy2d(5, seed=2).trajectories["transfer"],
                                      toy2d(5, seed=2).trajectories["transfer"])
