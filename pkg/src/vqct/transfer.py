"""Graph-convolution codebook transfer network.

The network maps frozen word-embedding priors, propagated over the
modifying graph, to the adjective and noun codebooks used for quantization.
The codebooks are regenerated on every forward pass and are never trainable
tensors themselves; only the layer weights are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import NormalizedAdjacency
from .nn import GraphConvLayer, ParamStore
from .priors import PlmCodebooks
from .tensor import Tensor


@dataclass
class GeneratedCodebooks:
    c_adj: Tensor
    c_noun: Tensor

    def stacked(self) -> np.ndarray:
        return np.vstack([self.c_adj.data, self.c_noun.data])


class TransferNetwork:
    """Three graph-convolution layers ``d_plm -> d_h -> d_h -> d_code``.

    Args:
        store: parameter store; weights are registered under ``prefix``.
        d_plm: prior embedding dimension.
        d_code: output code dimension (half the latent channel count).
        rng: initializer RNG.
        d_hidden: hidden width, ``4 * d_code`` (i.e. ``2 * n_c``) when omitted.
        final_activation: ``"relu"`` or ``"none"`` for the last layer.
    """

    def __init__(self, store: ParamStore, d_plm: int, d_code: int, rng: np.random.Generator,
                 d_hidden: int | None = None, final_activation: str = "relu",
                 prefix: str = "transfer"):
        if final_activation not in ("relu", "none"):
            raise ValueError(f"final_activation must be 'relu' or 'none', got {final_activation!r}")
        d_hidden = d_hidden or 4 * d_code
        self.d_plm, self.d_code, self.d_hidden = d_plm, d_code, d_hidden
        self.final_activation = final_activation
        self.layers = [
            GraphConvLayer(store, f"{prefix}.gc1", d_plm, d_hidden, rng),
            GraphConvLayer(store, f"{prefix}.gc2", d_hidden, d_hidden, rng),
            GraphConvLayer(store, f"{prefix}.gc3", d_hidden, d_code, rng),
        ]

    def __call__(self, a_hat: NormalizedAdjacency, h0: Tensor) -> Tensor:
        if h0.shape[1] != self.d_plm:
            raise T.ShapeError(
                f"prior features have dimension {h0.shape[1]}, network expects {self.d_plm}")
        h = h0
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(a_hat, h)
            if i < last or self.final_activation == "relu":
                h = T.relu(h)
        return h


def prior_tensor(cb: PlmCodebooks) -> Tensor:
    """Stacked priors as a constant (gradient-free) tensor."""
    return Tensor(cb.node_features(), requires_grad=False)


def generate_codebooks(net: TransferNetwork, a_hat: NormalizedAdjacency,
                       cb: PlmCodebooks, priors: Tensor | None = None) -> GeneratedCodebooks:
    if a_hat.size != cb.k_adj + cb.k_noun:
        raise T.ShapeError(f"graph has {a_hat.size} nodes, priors have {cb.k_adj + cb.k_noun}")
    h0 = prior_tensor(cb) if priors is None else priors
    h3 = net(a_hat, h0)
    n = h3.shape[0]
    return GeneratedCodebooks(T.slice_rows(h3, 0, cb.k_adj), T.slice_rows(h3, cb.k_adj, n))


def cosine_similarity_matrix(rows: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; any pair involving a zero vector scores 0."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = rows / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    zero = norms == 0
    # self-similarity is exactly 1, not 1 up to rounding
    np.fill_diagonal(sim, 1.0)
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def generated_similarity(cb: GeneratedCodebooks) -> tuple[np.ndarray, np.ndarray]:
    return cosine_similarity_matrix(cb.c_adj.data), cosine_similarity_matrix(cb.c_noun.data)
