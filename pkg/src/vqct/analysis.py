"""Diagnostics: code utilization, similarity drift, pixel metrics, 2-D toy run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .graph import ModifyingGraph, normalize
from .io import fmt_float, write_csv
from .nn import SGD, ParamStore, load_tensors
from .priors import PlmCodebooks
from .tensor import Tensor
from .transfer import TransferNetwork, cosine_similarity_matrix
from .vq import nearest_codes


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Utilization
# ---------------------------------------------------------------------------


def perplexity(counts: np.ndarray) -> float:
    """``exp`` of the entropy of the empirical code distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise AnalysisError("no code assignments to measure")
    p = counts[counts > 0] / total
    return float(math.exp(-np.sum(p * np.log(p))))


@dataclass
class UtilizationReport:
    names: list[str]
    counts: list[np.ndarray]

    @property
    def used_fraction(self) -> list[float]:
        return [float(np.count_nonzero(c)) / len(c) for c in self.counts]

    @property
    def perplexity(self) -> list[float]:
        return [perplexity(c) for c in self.counts]

    @property
    def overall_used_fraction(self) -> float:
        """Used codes over all codebooks divided by the total number of codes."""
        used = sum(int(np.count_nonzero(c)) for c in self.counts)
        return used / sum(len(c) for c in self.counts)

    def rows(self) -> list[list[str]]:
        out = []
        for name, c in zip(self.names, self.counts):
            out.extend([name, str(i), str(int(n))] for i, n in enumerate(c))
        return out

    def write_csv(self, path) -> None:
        write_csv(path, ["codebook", "code", "count"], self.rows())


def utilization_from_indices(index_maps: Sequence[np.ndarray], sizes: Sequence[int],
                             names: Sequence[str] | None = None) -> UtilizationReport:
    if len(index_maps) != len(sizes):
        raise AnalysisError("one index map per codebook is required")
    counts = []
    for idx, k in zip(index_maps, sizes):
        idx = np.asarray(idx, dtype=np.int64).ravel()
        if idx.size == 0:
            raise AnalysisError("empty dataset")
        if idx.min() < 0 or idx.max() >= k:
            raise AnalysisError(f"code index out of range for codebook of size {k}")
        counts.append(np.bincount(idx, minlength=k))
    if names is None:
        names = ["adj", "noun"] if len(sizes) == 2 else ["codes"]
    return UtilizationReport(list(names), counts)


def utilization(model, images: np.ndarray, batch_size: int = 64) -> UtilizationReport:
    """Count code selections over one pass of ``images`` with the current parameters."""
    images = np.asarray(images)
    if len(images) == 0:
        raise AnalysisError("empty dataset")
    maps: list[list[np.ndarray]] = [[] for _ in model.codebook_sizes()]
    for start in range(0, len(images), batch_size):
        for acc, idx in zip(maps, model.quantize_indices(images[start:start + batch_size])):
            acc.append(idx)
    return utilization_from_indices([np.concatenate(m) for m in maps], model.codebook_sizes())


# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------


class PixelMetrics(NamedTuple):
    psnr: float
    l1: float
    l2: float


def pixel_metrics(x, x_hat) -> PixelMetrics:
    """Mean absolute error, mean squared error and PSNR for images in [0, 1].

    PSNR is ``inf`` when the images are identical.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise AnalysisError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    l1 = float(np.mean(np.abs(diff)))
    l2 = float(np.mean(diff * diff))
    psnr = math.inf if l2 == 0 else 10.0 * math.log10(1.0 / l2)
    return PixelMetrics(psnr, l1, l2)


def reconstruct(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = []
    for start in range(0, len(images), batch_size):
        outs.append(model.forward(images[start:start + batch_size]).x_hat.data)
    return np.concatenate(outs)


# ---------------------------------------------------------------------------
# Similarity drift
# ---------------------------------------------------------------------------


@dataclass
class SimilarityDrift:
    steps: list[int]
    probe: np.ndarray
    matrices: list[np.ndarray]
    drift: list[float]

    @property
    def final(self) -> float:
        return self.drift[-1]

    def write_csv(self, path) -> None:
        write_csv(path, ["checkpoint", "drift"],
                  [[str(s), fmt_float(d)] for s, d in zip(self.steps, self.drift)])


def default_probe(n_codes: int, n_probe: int = 10, seed: int = 0) -> np.ndarray:
    n_probe = min(n_probe, n_codes)
    return np.sort(np.random.default_rng(seed).choice(n_codes, n_probe, replace=False))


def similarity_drift(snapshots, probe_indices=None, n_probe: int = 10,
                     seed: int = 0) -> SimilarityDrift:
    """Mean absolute change of the probe codes' cosine-similarity matrix.

    Args:
        snapshots: code matrices in checkpoint order, either a sequence or a
            mapping from step/epoch to matrix.
        probe_indices: rows to track; ``n_probe`` random rows when omitted.
    """
    if isinstance(snapshots, dict):
        steps = sorted(snapshots)
        mats = [np.asarray(snapshots[s]) for s in steps]
    else:
        mats = [np.asarray(s) for s in snapshots]
        steps = list(range(len(mats)))
    if len(mats) < 2:
        raise AnalysisError("similarity drift needs at least two checkpoints")
    n = mats[0].shape[0]
    probe = default_probe(n, n_probe, seed) if probe_indices is None \
        else np.asarray(probe_indices, dtype=np.int64)
    if probe.size == 0 or probe.min() < 0 or probe.max() >= n:
        raise AnalysisError(f"probe index out of range for {n} codes")
    sims = [cosine_similarity_matrix(m[probe]) for m in mats]
    drift = [float(np.mean(np.abs(s - sims[0]))) for s in sims]
    return SimilarityDrift(steps, probe, sims, drift)


def snapshots_from_checkpoints(model, paths) -> list[np.ndarray]:
    """Load each checkpoint into ``model`` in turn and record its code vectors."""
    out = []
    for p in paths:
        model.params.load_state_dict(load_tensors(p))
        out.append(model.codebook_snapshot())
    return out


# ---------------------------------------------------------------------------
# Two-dimensional toy run
# ---------------------------------------------------------------------------

TOY_VARIANTS = ("direct", "transfer")


@dataclass
class Toy2dRun:
    initial: np.ndarray
    # (steps + 1, K, 2) positions, index 0 being the initial codes
    trajectories: dict[str, np.ndarray] = field(default_factory=dict)
    selected: dict[str, list[int]] = field(default_factory=dict)
    targets: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.trajectories["direct"].shape[0] - 1

    def changed_codes(self, variant: str, step: int) -> int:
        traj = self.trajectories[variant]
        return int(np.count_nonzero(np.any(traj[step] != traj[step - 1], axis=1)))

    def rows(self) -> list[list[str]]:
        out = []
        for step in range(self.steps + 1):
            for variant in TOY_VARIANTS:
                for code, (px, py) in enumerate(self.trajectories[variant][step]):
                    out.append([str(step), variant, str(code), fmt_float(px), fmt_float(py)])
        return out

    def write_csv(self, path) -> None:
        write_csv(path, ["step", "variant", "code_id", "x", "y"], self.rows())


def _toy_graph(rng: np.random.Generator, k_adj: int, k_noun: int):
    priors = rng.normal(0.0, 1.0, size=(k_adj + k_noun, 2))
    cb = PlmCodebooks([f"a{i}" for i in range(k_adj)], priors[:k_adj],
                      [f"n{j}" for j in range(k_noun)], priors[k_adj:])
    edges = {(i, j) for i in range(k_adj) for j in range(k_noun) if rng.random() < 0.5}
    return cb, normalize(ModifyingGraph(cb, frozenset(edges)))


def toy2d(steps: int = 50, seed: int = 0, k: int = 8, lr: float = 0.1,
          hidden: int = 16) -> Toy2dRun:
    """Track 2-D codes pulled toward a stream of target points.

    Each step draws one target, selects its nearest code and takes one SGD
    step on the squared distance between them. ``direct`` updates the code
    vectors themselves; ``transfer`` updates the weights of a small graph
    convolution network that generates every code from fixed 2-D priors.
    Both start from the same positions and see the same targets.
    """
    if steps < 0:
        raise AnalysisError(f"steps must be non-negative, got {steps}")
    if k < 2:
        raise AnalysisError(f"need at least 2 codes, got {k}")
    rng = np.random.default_rng(seed)
    k_adj = k // 2
    cb, a_hat = _toy_graph(rng, k_adj, k - k_adj)
    store = ParamStore()
    net = TransferNetwork(store, 2, 2, rng, d_hidden=hidden, final_activation="none")
    priors = Tensor(cb.node_features())

    def generated() -> Tensor:
        # all K nodes, adjectives first; same rows generate_codebooks slices apart
        return net(a_hat, priors)

    initial = generated().data.copy()
    direct = ParamStore()
    codes = direct.register("codes", initial.copy())
    targets = rng.normal(0.0, 1.5, size=(steps, 2))
    opt_direct, opt_transfer = SGD(lr), SGD(lr)

    traj = {v: [initial.copy()] for v in TOY_VARIANTS}
    selected: dict[str, list[int]] = {v: [] for v in TOY_VARIANTS}
    for t in targets:
        target = Tensor(t[None, :])
        # direct: gradient only reaches the selected row
        idx, _, _ = nearest_codes(t[None, :], codes.data)
        diff = T.sub(T.gather_rows(codes, idx), target)
        T.sum(T.mul(diff, diff)).backward()
        opt_direct.step(direct)
        traj["direct"].append(codes.data.copy())
        selected["direct"].append(int(idx[0]))

        gen = generated()
        idx, _, _ = nearest_codes(t[None, :], gen.data)
        diff = T.sub(T.gather_rows(gen, idx), target)
        T.sum(T.mul(diff, diff)).backward()
        opt_transfer.step(store)
        traj["transfer"].append(generated().data.copy())
        selected["transfer"].append(int(idx[0]))

    return Toy2dRun(initial, {v: np.stack(traj[v]) for v in TOY_VARIANTS}, selected, targets)
