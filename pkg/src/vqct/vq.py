"""Nearest-neighbour quantization, straight-through wiring and the VQ loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# positions whose best and runner-up expanded distances are closer than this
# (relative) are rescored with exact differences
_TIE_RTOL = 1e-9


@dataclass
class QuantizationResult:
    """Outcome of quantizing a latent map.

    ``z_q`` carries gradient into the codebook(s); ``z_q_st`` is the
    straight-through tensor handed to the decoder (value of ``z_q``, gradient
    of identity into ``z``). For a single codebook ``noun_indices`` is None.
    """

    adj_indices: np.ndarray
    noun_indices: np.ndarray | None
    z_q: Tensor
    z_q_st: Tensor
    margins: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return self.adj_indices


@dataclass
class VqLossTerms:
    l_rec: Tensor
    l_codebook: Tensor
    l_commit: Tensor
    beta: float
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "l_rec": self.l_rec.item(),
            "l_codebook": self.l_codebook.item(),
            "l_commit": self.l_commit.item(),
            "total": self.total.item(),
        }


def exact_sq_distances(z: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - codebook[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def nearest_codes(z: np.ndarray, codebook: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest code for each row of ``z`` (N x d) against ``codebook`` (K x d).

    Returns ``(indices, best_sq_dist, margins)`` where ``margins`` holds the
    best and second-best squared distances per row. Ties go to the lowest index.
    """
    z = np.asarray(z, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    if z.ndim != 2 or z.shape[1] != codebook.shape[1]:
        raise T.ShapeError(f"vectors of shape {z.shape} vs codebook {codebook.shape}")
    z_sq = np.einsum("nd,nd->n", z, z)
    e_sq = np.einsum("kd,kd->k", codebook, codebook)
    dist = z_sq[:, None] - 2.0 * (z @ codebook.T) + e_sq[None, :]
    np.maximum(dist, 0.0, out=dist)

    k = codebook.shape[0]
    if k > 1:
        part = np.partition(dist, 1, axis=1)[:, :2]
        scale = np.maximum(z_sq, 1.0) + e_sq.max()
        close = (part[:, 1] - part[:, 0]) <= _TIE_RTOL * scale
        if np.any(close):
            dist[close] = exact_sq_distances(z[close], codebook)
    idx = np.argmin(dist, axis=1)
    best = dist[np.arange(len(idx)), idx]
    if k > 1:
        margins = np.partition(dist, 1, axis=1)[:, :2]
    else:
        margins = np.stack([best, np.full_like(best, np.inf)], axis=1)
    return idx, best, margins


def nearest_code(z_vec, codebook) -> tuple[int, float]:
    idx, best, _ = nearest_codes(np.asarray(z_vec, dtype=np.float64)[None, :], codebook)
    return int(idx[0]), float(best[0])


def _quantize_half(z_half: Tensor, codebook: Tensor) -> tuple[np.ndarray, Tensor, np.ndarray]:
    b, d, h, w = z_half.shape
    if codebook.shape[1] != d:
        raise T.ShapeError(f"latent half has {d} channels, codebook has dimension {codebook.shape[1]}")
    flat = z_half.data.transpose(0, 2, 3, 1).reshape(-1, d)
    idx, _, margins = nearest_codes(flat, codebook.data)
    rows = T.gather_rows(codebook, idx)
    zq = T.permute(T.reshape(rows, (b, h, w, d)), (0, 3, 1, 2))
    return idx.reshape(b, h, w), zq, margins.reshape(b, h, w, 2)


def straight_through(z: Tensor, z_q: Tensor) -> Tensor:
    """``z + sg(z_q - z)``: forward value of ``z_q``, identity gradient into ``z``."""
    return T.add(z, T.stop_gradient(T.sub(z_q, z)))


def dual_quantize(z: Tensor, c_adj: Tensor, c_noun: Tensor) -> QuantizationResult:
    """Quantize the first channel half against ``c_adj`` and the second against ``c_noun``."""
    if z.data.ndim != 4:
        raise T.ShapeError(f"latent must be B x C x h x w, got {z.shape}")
    z_adj, z_noun = T.channel_split(z)
    ia, qa, ma = _quantize_half(z_adj, c_adj)
    inn, qn, mn = _quantize_half(z_noun, c_noun)
    z_q = T.channel_concat(qa, qn)
    return QuantizationResult(ia, inn, z_q, straight_through(z, z_q), np.stack([ma, mn]))


def quantize(z: Tensor, codebook: Tensor) -> QuantizationResult:
    """Single-codebook quantization over all channels."""
    if z.data.ndim != 4:
        raise T.ShapeError(f"latent must be B x C x h x w, got {z.shape}")
    idx, z_q, margins = _quantize_half(z, codebook)
    return QuantizationResult(idx, None, z_q, straight_through(z, z_q), margins)


def vq_loss(x: Tensor, x_hat: Tensor, z: Tensor, z_q: Tensor, beta: float = 0.25) -> VqLossTerms:
    """Reconstruction + codebook + beta-weighted commitment loss.

    The codebook term sees ``z`` through a stop-gradient, so it only trains
    whatever produced ``z_q``; the commitment term stops the gradient into
    ``z_q``, so it only trains the encoder.
    """
    l_rec = T.mse(x, x_hat)
    l_codebook = T.mse(T.stop_gradient(z), z_q)
    l_commit = T.mse(z, T.stop_gradient(z_q))
    total = T.add(T.add(l_rec, l_codebook), T.scale(l_commit, beta))
    return VqLossTerms(l_rec, l_codebook, l_commit, float(beta), total)
