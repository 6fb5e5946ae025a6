import math

import numpy as np
import pytest

from vqct.config import TrainConfig
from vqct.train import (METRICS_HEADER, TrainingDiverged, batch_order, build_model,
                        load_checkpoint, train)


def tiny(variant="vqct", **kw):
    base = dict(variant=variant, epochs=3, n_images=8, batch_size=4, image_size=16,
                n_c=8, k=8, base_width=4, seed=5)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_smoke_one_epoch(self, tmp_path):
        rep = train(tiny(epochs=1), out_dir=tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER)
        assert len(lines) == 2 and len(rep.metrics) == 1
        assert (tmp_path / "checkpoints" / "ckpt_epoch0001.bin").exists()

    @pytest.mark.parametrize("variant", ["vqct", "baseline"])
    def test_same_seed_same_csv(self, tmp_path, variant):
        train(tiny(variant), out_dir=tmp_path / "a")
        train(tiny(variant), out_dir=tmp_path / "b")
        assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = train(tiny(seed=1, epochs=1)).metrics[0]
        b = train(tiny(seed=2, epochs=1)).metrics[0]
        assert a.l_rec != b.l_rec

    @pytest.mark.parametrize("variant", ["vqct", "baseline"])
    def test_resume_is_bit_exact(self, tmp_path, variant):
        cfg = tiny(variant, epochs=4, checkpoint_every=2)
        full = train(cfg, out_dir=tmp_path / "full")
        train(cfg, out_dir=tmp_path / "part", stop_after=2)
        resumed = train(cfg, out_dir=tmp_path / "resumed",
                        resume_from=tmp_path / "part/checkpoints/ckpt_epoch0002.bin")
        assert (tmp_path / "full/metrics.csv").read_bytes() == \
            (tmp_path / "resumed/metrics.csv").read_bytes()
        for name, p in full.model.params.items():
            np.testing.assert_array_equal(p.data, resumed.model.params[name].data)

    def test_checkpoint_restores_history(self, tmp_path):
        cfg = tiny(epochs=2)
        rep = train(cfg, out_dir=tmp_path)
        model = build_model(cfg, None)
        epoch, metrics = load_checkpoint(tmp_path / "checkpoints/ckpt_epoch0002.bin", model)
        assert epoch == 2 and [m.row() for m in metrics] == rep.metrics_rows()

    def test_metrics_consistent(self):
        rep = train(tiny(epochs=2))
        for m in rep.metrics:
            assert m.total == pytest.approx(m.l_rec + m.l_codebook + 0.25 * m.l_commit)
            assert m.psnr == pytest.approx(10 * math.log10(1 / m.l_rec))
            assert 0 < m.util_adj <= 1 and 0 < m.util_noun <= 1

    def test_loss_decreases(self):
        rep = train(tiny("baseline", epochs=15, n_images=16))
        assert rep.metrics[-1].l_rec < rep.metrics[0].l_rec

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        with pytest.raises(TrainingDiverged) as info:
            train(tiny("baseline", lr=1e12, optimizer="sgd", epochs=5))
        assert info.value.epoch >= 1

    def test_batch_order_is_permutation(self):
        order = batch_order(3, 7, 20)
        assert sorted(order) == list(range(20))
        np.testing.assert_array_equal(order, batch_order(3, 7, 20))
        assert not np.array_equal(order, batch_order(3, 8, 20))
