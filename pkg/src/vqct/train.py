"""Training loop, model construction from a config, and checkpoint resume.

Batch order for epoch ``e`` comes from ``default_rng([seed, e])``, so a run
resumed from a checkpoint replays exactly the batches an uninterrupted run
would have seen.
"""

from __future__ import annotations

import logging
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from .config import TrainConfig
from .graph import ModifyingGraph, build_from_corpus, load_edge_list
from .io import fmt_float, write_csv
from .model import BaselineModel, VQCTModel
from .nn import Optimizer, load_tensors, make_optimizer, save_tensors
from .priors import (PlmCodebooks, build_plm_codebooks, load_embeddings, load_lexicon,
                     write_synthetic_resources)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "l_rec", "l_codebook", "l_commit", "total",
                  "util_adj", "util_noun", "psnr"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch, self.step, self.value = epoch, step, value


@dataclass
class EpochMetrics:
    epoch: int
    l_rec: float
    l_codebook: float
    l_commit: float
    total: float
    util_adj: float
    util_noun: float
    psnr: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [fmt_float(getattr(self, k)) for k in METRICS_HEADER[1:]]

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in METRICS_HEADER], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "EpochMetrics":
        vals = dict(zip(METRICS_HEADER, (float(v) for v in arr)))
        vals["epoch"] = int(vals["epoch"])
        return cls(**vals)


@dataclass
class TrainingReport:
    config: TrainConfig
    metrics: list[EpochMetrics] = field(default_factory=list)
    # epoch -> stacked code vectors, recorded at epoch 0 and every checkpoint
    codebooks: dict[int, np.ndarray] = field(default_factory=dict)
    checkpoints: list[Path] = field(default_factory=list)
    metrics_path: Path | None = None
    model: object = None

    def metrics_rows(self) -> list[list[str]]:
        return [m.row() for m in self.metrics]


@dataclass
class Resources:
    codebooks: PlmCodebooks
    graph: ModifyingGraph


def load_resources(cfg: TrainConfig, scratch_dir=None) -> Resources:
    """Resolve the word priors and modifying graph named by ``cfg``.

    Missing embedding/lexicon paths fall back to the generated synthetic
    resources, written under ``scratch_dir``.
    """
    emb_path, lex_path, corpus_path = cfg.embeddings, cfg.lexicon, cfg.corpus
    if not emb_path or not lex_path:
        scratch = Path(scratch_dir) if scratch_dir else Path(tempfile.mkdtemp(prefix="vqct-"))
        paths = write_synthetic_resources(scratch / "priors", d_plm=cfg.d_plm, seed=cfg.prior_seed)
        emb_path = emb_path or paths["embeddings"]
        lex_path = lex_path or paths["lexicon"]
        corpus_path = corpus_path or paths["corpus"]
    emb = load_embeddings(emb_path)
    lex = load_lexicon(lex_path)
    cb = build_plm_codebooks(emb, lex, cfg.k_adj, cfg.k_noun)
    if cfg.edges:
        graph = load_edge_list(cfg.edges, cb)
    elif corpus_path:
        graph = build_from_corpus(corpus_path, lex, cb)
    else:
        graph = ModifyingGraph(cb, frozenset())
    return Resources(cb, graph)


def build_model(cfg: TrainConfig, resources: Resources | None = None):
    rng = np.random.default_rng(cfg.seed)
    if cfg.variant == "baseline":
        return BaselineModel(k=cfg.k, n_c=cfg.n_c, base_width=cfg.base_width,
                             downsample=cfg.downsample, beta=cfg.beta, rng=rng)
    if resources is None:
        resources = load_resources(cfg)
    return VQCTModel(resources.codebooks, resources.graph, n_c=cfg.n_c,
                     base_width=cfg.base_width, downsample=cfg.downsample, beta=cfg.beta,
                     rng=rng, d_hidden=cfg.d_hidden or None,
                     final_activation=cfg.final_activation)


def load_dataset(cfg: TrainConfig) -> np.ndarray:
    if cfg.dataset == "synthetic":
        images = datamod.synth_dataset(cfg.n_images, cfg.image_size, cfg.data_seed)
    else:
        _, images = datamod.load_ppm_dir(cfg.dataset)
    if len(images) == 0:
        raise datamod.DatasetError("dataset is empty")
    return images


def batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _psnr_from_mse(mse: float) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def _make_optimizer(cfg: TrainConfig) -> Optimizer:
    return make_optimizer(cfg.optimizer, cfg.lr, cfg.max_grad_norm or None)


def save_checkpoint(path, model, opt: Optimizer, epoch: int, metrics: list[EpochMetrics]) -> None:
    entries = dict(model.params.state_dict())
    entries.update(opt.state_dict())
    entries["train.epoch"] = np.array([float(epoch)])
    entries["train.metrics"] = (np.stack([m.as_array() for m in metrics]) if metrics
                                else np.zeros((0, len(METRICS_HEADER))))
    save_tensors(path, entries)


def load_checkpoint(path, model, opt: Optimizer | None = None) -> tuple[int, list[EpochMetrics]]:
    state = load_tensors(path)
    model.params.load_state_dict(state)
    if opt is not None:
        opt.load_state_dict(state)
    epoch = int(state["train.epoch"][0]) if "train.epoch" in state else 0
    metrics = [EpochMetrics.from_array(r) for r in state.get("train.metrics", np.zeros((0, 8)))]
    return epoch, metrics


def run_epoch(model, opt: Optimizer, images: np.ndarray, cfg: TrainConfig,
              epoch: int) -> EpochMetrics:
    n = len(images)
    order = batch_order(cfg.seed, epoch, n)
    sizes = model.codebook_sizes()
    counts = [np.zeros(k, dtype=np.int64) for k in sizes]
    sums = np.zeros(4)
    for step, start in enumerate(range(0, n, cfg.batch_size)):
        x = images[order[start:start + cfg.batch_size]]
        res = model.forward(x)
        vals = res.losses.values()
        if not all(math.isfinite(v) for v in vals.values()):
            raise TrainingDiverged(epoch, step, vals["total"])
        res.losses.total.backward()
        opt.step(model.params)
        sums += len(x) * np.array([vals["l_rec"], vals["l_codebook"],
                                   vals["l_commit"], vals["total"]])
        idx_maps = [res.quant.adj_indices] if res.quant.noun_indices is None \
            else [res.quant.adj_indices, res.quant.noun_indices]
        for c, idx in zip(counts, idx_maps):
            c += np.bincount(idx.ravel(), minlength=len(c))
    means = sums / n
    used = [float(np.count_nonzero(c)) / len(c) for c in counts]
    util_adj = used[0]
    util_noun = used[1] if len(used) > 1 else used[0]
    return EpochMetrics(epoch, *means, util_adj, util_noun, _psnr_from_mse(means[0]))


def train(cfg: TrainConfig, out_dir=None, resume_from=None, images: np.ndarray | None = None,
          model=None, stop_after: int | None = None) -> TrainingReport:
    """Train ``cfg.variant`` for ``cfg.epochs`` epochs.

    Args:
        cfg: validated training configuration.
        out_dir: where checkpoints and ``metrics.csv`` go; nothing is written if None.
        resume_from: checkpoint to continue from (parameters, optimizer state,
            epoch counter and metrics history are all restored).
        images: preloaded dataset, overriding ``cfg.dataset``.
        model: prebuilt model, overriding construction from ``cfg``.
        stop_after: stop once this epoch number has completed (used to test resume).
    """
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    images = load_dataset(cfg) if images is None else images
    if model is None:
        model = build_model(cfg, load_resources(cfg, out) if cfg.variant == "vqct" else None)
    opt = _make_optimizer(cfg)
    report = TrainingReport(cfg)

    start = 0
    if resume_from is not None:
        start, report.metrics = load_checkpoint(resume_from, model, opt)
    else:
        report.codebooks[0] = model.codebook_snapshot()
        if out is not None:
            path = out / "checkpoints" / "ckpt_epoch0000.bin"
            save_checkpoint(path, model, opt, 0, [])
            report.checkpoints.append(path)

    last = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start + 1, last + 1):
        m = run_epoch(model, opt, images, cfg, epoch)
        report.metrics.append(m)
        log.info("epoch %d l_rec=%.5f util=%.3f/%.3f", epoch, m.l_rec, m.util_adj, m.util_noun)
        due = cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0
        if due or epoch == last:
            report.codebooks[epoch] = model.codebook_snapshot()
            if out is not None:
                path = out / "checkpoints" / f"ckpt_epoch{epoch:04d}.bin"
                save_checkpoint(path, model, opt, epoch, report.metrics)
                report.checkpoints.append(path)

    if out is not None:
        report.metrics_path = out / "metrics.csv"
        write_csv(report.metrics_path, METRICS_HEADER, report.metrics_rows())
    report.model = model
    return report
