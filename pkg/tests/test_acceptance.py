"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Criteria 6 and 7 share six full-length training runs (two variants, three
seeds, 200 epochs each) and take roughly a quarter of an hour on one core.
"""

from __future__ import annotations

import contextlib
import time

import numpy as np
import pytest

from vqct import tensor as T
from vqct.analysis import default_probe, pixel_metrics, similarity_drift, utilization
from vqct.config import TrainConfig
from vqct.graph import ModifyingGraph, build_from_corpus, normalize
from vqct.priors import ADJ, NOUN, EmbeddingTable, PosLexicon, build_plm_codebooks
from vqct.tensor import Tensor
from vqct.train import load_dataset, train
from vqct.vq import dual_quantize, vq_loss

from conftest import ACCEPTANCE_LINES
from oracles import gradcheck, nearest_scan, op_cases
from scenarios import (cooperative_update_changed_rows, selective_update_changed_rows,
                       vqct_model)

SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(n: int, title: str):
    """Record a PASS/FAIL line for criterion ``n``; details go in ``info``."""
    info: dict = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        detail = info.get("detail") or f"{type(exc).__name__}: {exc}".splitlines()[0]
        ACCEPTANCE_LINES[n] = f"FAIL [{n:2d}] {title}: {detail}"
        print(ACCEPTANCE_LINES[n])
        raise
    elapsed = time.perf_counter() - start
    ACCEPTANCE_LINES[n] = f"PASS [{n:2d}] {title}: {info.get('detail', '')} ({elapsed:.1f} s)"
    print(ACCEPTANCE_LINES[n])


def test_01_gradient_suite():
    with criterion(1, "finite-difference gradient suite") as info:
        start = time.perf_counter()
        worst = {}
        for name, op, make in op_cases():
            rng = np.random.default_rng(sum(map(ord, name)))
            worst[name] = max(gradcheck(op, make(rng), rng) for _ in range(20))
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
        T.sum(T.mul(T.stop_gradient(x), T.stop_gradient(x))).backward()
        y = Tensor(np.ones(3), requires_grad=True)
        T.sum(T.add(y, T.stop_gradient(T.scale(y, 5.0)))).backward()
        elapsed = time.perf_counter() - start
        name = max(worst, key=worst.get)
        info["detail"] = (f"{len(worst)} ops x 20 instances, worst rel err {worst[name]:.2e} ({name}), "
                          f"runtime {elapsed:.1f} s")
        assert worst[name] < 1e-4
        assert x.grad is None and np.array_equal(y.grad, np.ones(3))
        assert elapsed < 60


def test_02_quantizer_oracle():
    with criterion(2, "dual_quantize equals exhaustive scan") as info:
        start = time.perf_counter()
        rng = np.random.default_rng(2)
        mismatches = 0
        for _ in range(1000):
            d = int(rng.integers(1, 33))
            ca = rng.normal(size=(int(rng.integers(1, 65)), d))
            cn = rng.normal(size=(int(rng.integers(1, 65)), d))
            z = rng.normal(size=(int(rng.integers(1, 3)), 2 * d, int(rng.integers(1, 4)), int(rng.integers(1, 4))))
            q = dual_quantize(Tensor(z), Tensor(ca), Tensor(cn))
            for half, cb, got in ((z[:, :d], ca, q.adj_indices), (z[:, d:], cn, q.noun_indices)):
                flat = half.transpose(0, 2, 3, 1).reshape(-1, d)
                mismatches += int(np.any(nearest_scan(flat, cb) != got.ravel()))
        # ties: duplicated rows and equidistant points
        tie_ok = []
        for _ in range(100):
            d = int(rng.integers(1, 9))
            base = rng.normal(size=(int(rng.integers(2, 10)), d))
            dup = int(rng.integers(1, len(base)))
            base[dup] = base[0]
            z = np.concatenate([base[0], base[0]]).reshape(1, 2 * d, 1, 1)
            q = dual_quantize(Tensor(z), Tensor(base), Tensor(base))
            tie_ok.append(q.adj_indices.item() == 0 and q.noun_indices.item() == 0)
        q = dual_quantize(Tensor(np.full((1, 2, 1, 1), 0.5)), Tensor([[0.0], [1.0]]), Tensor([[1.0], [0.0]]))
        tie_ok.append(q.adj_indices.item() == 0 and q.noun_indices.item() == 0)
        elapsed = time.perf_counter() - start
        info["detail"] = (f"1000 random instances, {mismatches} mismatches, "
                          f"{sum(tie_ok)}/{len(tie_ok)} ties to lowest index, runtime {elapsed:.1f} s")
        assert mismatches == 0 and all(tie_ok) and elapsed < 10


def test_03_loss_wiring():
    with criterion(3, "stop-gradient loss wiring") as info:
        rng = np.random.default_rng(3)
        checks = 0
        for _ in range(20):
            z = Tensor(rng.normal(size=(2, 6, 2, 2)), requires_grad=True)
            ca = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            cn = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            x, xh = Tensor(rng.random((2, 3, 4, 4))), Tensor(rng.random((2, 3, 4, 4)))
            losses = vq_loss(x, xh, z, dual_quantize(z, ca, cn).z_q)
            losses.l_codebook.backward()
            assert z.grad is None or not np.any(z.grad)
            assert ca.grad is not None
            ca.grad = cn.grad = None
            losses = vq_loss(x, xh, z, dual_quantize(z, ca, cn).z_q)
            losses.l_commit.backward()
            assert all(g is None or not np.any(g) for g in (ca.grad, cn.grad))
            assert z.grad is not None and np.any(z.grad)
            z.grad = None
            checks += 1
        x = Tensor(rng.random((1, 3, 4, 4)))
        zq = Tensor(rng.normal(size=(1, 4, 1, 1)))
        total = vq_loss(x, Tensor(x.data), Tensor(zq.data), zq).total.item()
        info["detail"] = f"{checks} random instances, fixed-point total loss {total}"
        assert total == 0.0


def test_04_selective_vs_cooperative(synthetic_resources):
    with criterion(4, "selective (baseline) vs cooperative (VQCT) update") as info:
        start = time.perf_counter()
        base = [selective_update_changed_rows(s) for s in range(20)]
        coop = [cooperative_update_changed_rows(synthetic_resources, s) for s in range(20)]
        elapsed = time.perf_counter() - start
        base_ok = sum(n == 1 and idx == 0 for n, idx in base)
        coop_ok = sum(n > 1 for n in coop)
        info["detail"] = (f"baseline exactly-1-row in {base_ok}/20 seeds, VQCT >1 rows in {coop_ok}/20 "
                          f"(median {int(np.median(coop))} of 64 rows), runtime {elapsed:.1f} s")
        assert base_ok >= 19 and coop_ok >= 19 and elapsed < 30


def test_05_gradient_reach(synthetic_resources):
    with criterion(5, "gradient-reach partition") as info:
        model = vqct_model(synthetic_resources)
        model.forward(np.random.default_rng(5).random((2, 3, 16, 16))).losses.total.backward()
        missing = [n for n, p in model.params.items() if p.grad is None]
        groups = {n.split(".")[0] for n, _ in model.params.items()}
        info["detail"] = (f"{len(model.params) - len(missing)}/{len(model.params)} params hold grads "
                          f"across {sorted(groups)}; priors grad={model.priors.grad}")
        assert not missing and groups == {"encoder", "decoder", "transfer"}
        assert model.priors.grad is None and not model.priors.requires_grad


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    """Train both variants for 200 epochs on three seeds with default settings."""
    images = load_dataset(TrainConfig())
    runs = {}
    for seed in SEEDS:
        for variant in ("baseline", "vqct"):
            cfg = TrainConfig(variant=variant, seed=seed)
            rep = train(cfg, out_dir=tmp_path_factory.mktemp(f"{variant}{seed}"), images=images)
            runs[variant, seed] = {
                "used": utilization(rep.model, images).overall_used_fraction,
                "l_rec": (rep.metrics[0].l_rec, rep.metrics[-1].l_rec),
                "snapshots": rep.codebooks,
            }
    return runs


def test_06_collapse_comparison(full_runs):
    with criterion(6, "codebook utilization, VQCT vs baseline") as info:
        used = {v: [full_runs[v, s]["used"] for s in SEEDS] for v in ("baseline", "vqct")}
        ratios = {k: r["l_rec"][1] / r["l_rec"][0] for k, r in full_runs.items()}
        info["detail"] = (f"used fraction baseline {used['baseline']} vqct {used['vqct']}; "
                          f"worst final/initial l_rec {max(ratios.values()):.3f}")
        assert np.median(used["vqct"]) >= np.median(used["baseline"])
        assert all(r < 0.5 for r in ratios.values())


def test_07_similarity_maintenance(full_runs):
    with criterion(7, "similarity drift, VQCT vs baseline") as info:
        lower = 0
        parts = []
        for seed in SEEDS:
            # same 10 probe codes for both variants of a seed
            probe = default_probe(64, 10, seed)
            drift = {v: similarity_drift(full_runs[v, seed]["snapshots"], probe).final
                     for v in ("baseline", "vqct")}
            lower += drift["vqct"] < drift["baseline"]
            parts.append(f"seed {seed}: {drift['vqct']:.4f} vs {drift['baseline']:.4f}")
        info["detail"] = f"VQCT lower in {lower}/3 ({'; '.join(parts)})"
        assert lower >= 2


def test_08_determinism_and_resume(tmp_path):
    with criterion(8, "determinism and resume") as info:
        ok = []
        for variant in ("baseline", "vqct"):
            cfg = TrainConfig(variant=variant, epochs=4, n_images=16, batch_size=8, image_size=16,
                              base_width=8, n_c=8, k=16, checkpoint_every=2, seed=11)
            a = tmp_path / f"{variant}_a"
            train(cfg, out_dir=a)
            train(cfg, out_dir=tmp_path / f"{variant}_b")
            train(cfg, out_dir=tmp_path / f"{variant}_p", stop_after=2)
            train(cfg, out_dir=tmp_path / f"{variant}_r",
                  resume_from=tmp_path / f"{variant}_p/checkpoints/ckpt_epoch0002.bin")
            ref = (a / "metrics.csv").read_bytes()
            ok.append((tmp_path / f"{variant}_b/metrics.csv").read_bytes() == ref)
            ok.append((tmp_path / f"{variant}_r/metrics.csv").read_bytes() == ref)
            ok.append((tmp_path / f"{variant}_r/checkpoints/ckpt_epoch0004.bin").read_bytes()
                      == (a / "checkpoints/ckpt_epoch0004.bin").read_bytes())
        info["detail"] = f"{sum(ok)}/{len(ok)} bit-exact comparisons (retrain CSV, resumed CSV, final checkpoint)"
        assert all(ok)


def test_09_pixel_metrics():
    with criterion(9, "pixel_metrics closed forms") as info:
        x = np.zeros((3, 8, 8))
        same = pixel_metrics(x, x)
        ones = pixel_metrics(x, np.ones_like(x))
        half = pixel_metrics(x, np.full_like(x, 0.5))
        info["detail"] = f"identity {tuple(same)}, ones {tuple(ones)}, half {tuple(half)}"
        assert same == (np.inf, 0.0, 0.0)
        assert ones.l1 == 1.0 and ones.l2 == 1.0 and abs(ones.psnr) < 1e-6
        assert half.l2 == 0.25 and abs(half.psnr - 10 * np.log10(4.0)) < 1e-6


def test_10_graph_pipeline(tmp_path):
    with criterion(10, "graph pipeline") as info:
        emb = EmbeddingTable(["sharp", "beak"], np.eye(2))
        lex = PosLexicon({"sharp": frozenset({ADJ}), "beak": frozenset({NOUN})})
        cb = build_plm_codebooks(emb, lex, 1, 1)
        corpus = tmp_path / "c.txt"
        corpus.write_text("sharp beak\n")
        g = build_from_corpus(corpus, lex, cb)
        a_hat = normalize(ModifyingGraph(cb, g.edges)).dense()
        info["detail"] = f"edges {sorted(g.edges)}, A_hat {a_hat.tolist()}"
        assert g.edges == frozenset({(0, 0)})
        assert np.array_equal(a_hat, [[0.5, 0.5], [0.5, 0.5]])
