"""Encoder/decoder networks and the two assembled models.

``VQCTModel`` quantizes against codebooks generated by the transfer network
on every forward call. ``BaselineModel`` is a plain VQ-VAE whose single
codebook is itself a trainable parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import ModifyingGraph, NormalizedAdjacency, normalize
from .nn import Conv2d, ParamStore
from .priors import PlmCodebooks
from .tensor import Tensor
from .transfer import GeneratedCodebooks, TransferNetwork, generate_codebooks, prior_tensor
from .vq import QuantizationResult, VqLossTerms, dual_quantize, quantize, vq_loss


@dataclass
class ForwardResult:
    x_hat: Tensor
    z: Tensor
    quant: QuantizationResult
    losses: VqLossTerms


def _n_down(factor: int) -> int:
    if factor not in (2, 4):
        raise ValueError(f"downsample factor must be 2 or 4, got {factor}")
    return 1 if factor == 2 else 2


class Encoder:
    """Stride-2 4x4 conv blocks followed by a 3x3 projection to ``n_c`` channels."""

    def __init__(self, store: ParamStore, in_channels: int, base_width: int, n_c: int,
                 downsample: int, rng: np.random.Generator):
        self.factor = downsample
        self.blocks = []
        c = in_channels
        for i in range(_n_down(downsample)):
            width = base_width * 2 ** i
            self.blocks.append(Conv2d(store, f"encoder.down{i}", c, width, 4, rng,
                                      stride=2, padding=1))
            c = width
        self.proj = Conv2d(store, "encoder.proj", c, n_c, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = T.relu(block(h))
        return self.proj(h)


class Decoder:
    """Mirror of :class:`Encoder` using nearest 2x upsampling followed by conv."""

    def __init__(self, store: ParamStore, out_channels: int, base_width: int, n_c: int,
                 downsample: int, rng: np.random.Generator):
        n = _n_down(downsample)
        top = base_width * 2 ** (n - 1)
        self.inp = Conv2d(store, "decoder.in", n_c, top, 3, rng)
        self.ups = []
        c = top
        for i in reversed(range(n)):
            width = base_width * 2 ** (i - 1) if i > 0 else out_channels
            self.ups.append(Conv2d(store, f"decoder.up{i}", c, width, 3, rng))
            c = width

    def __call__(self, z: Tensor) -> Tensor:
        h = T.relu(self.inp(z))
        last = len(self.ups) - 1
        for i, conv in enumerate(self.ups):
            h = conv(T.upsample_nearest2x(h))
            if i < last:
                h = T.relu(h)
        return h


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Autoencoder:
    variant = "base"

    def __init__(self, n_c: int, base_width: int, downsample: int, beta: float,
                 rng: np.random.Generator, in_channels: int = 3):
        self.params = ParamStore()
        self.n_c = n_c
        self.beta = float(beta)
        self.downsample = downsample
        self.encoder = Encoder(self.params, in_channels, base_width, n_c, downsample, rng)
        self.decoder = Decoder(self.params, in_channels, base_width, n_c, downsample, rng)

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4:
            raise T.ShapeError(f"images must be B x C x H x W, got {x.shape}")
        _, _, h, w = x.shape
        if h % self.downsample or w % self.downsample:
            raise T.ShapeError(
                f"spatial size {h}x{w} is not divisible by downsample factor {self.downsample}")

    def encode(self, x) -> Tensor:
        x = _as_tensor(x)
        self._check_input(x)
        return self.encoder(x)

    def decode(self, z_q: Tensor) -> Tensor:
        return self.decoder(z_q)

    def _quantize(self, z: Tensor) -> QuantizationResult:
        raise NotImplementedError

    def forward(self, x) -> ForwardResult:
        x = _as_tensor(x)
        z = self.encode(x)
        quant = self._quantize(z)
        x_hat = self.decode(quant.z_q_st)
        losses = vq_loss(x, x_hat, z, quant.z_q, self.beta)
        return ForwardResult(x_hat, z, quant, losses)

    __call__ = forward

    def codebook_sizes(self) -> tuple[int, ...]:
        raise NotImplementedError

    def codebook_snapshot(self) -> np.ndarray:
        """All code vectors as one matrix (adjective rows first for VQCT)."""
        raise NotImplementedError


class VQCTModel(_Autoencoder):
    """Encoder, graph-convolution codebook transfer, dual quantization, decoder."""

    variant = "vqct"

    def __init__(self, codebooks: PlmCodebooks, graph: ModifyingGraph | NormalizedAdjacency,
                 n_c: int = 32, base_width: int = 16, downsample: int = 4, beta: float = 0.25,
                 rng: np.random.Generator | None = None, d_hidden: int | None = None,
                 final_activation: str = "relu"):
        if n_c % 2:
            raise ValueError(f"n_c must be even for dual codebooks, got {n_c}")
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(n_c, base_width, downsample, beta, rng)
        self.plm = codebooks
        self.a_hat = graph if isinstance(graph, NormalizedAdjacency) else normalize(graph)
        # frozen priors: a constant input to the transfer network, never a parameter
        self.priors = prior_tensor(codebooks)
        self.transfer = TransferNetwork(self.params, codebooks.d_plm, n_c // 2, rng,
                                        d_hidden=d_hidden, final_activation=final_activation)

    def generate(self) -> GeneratedCodebooks:
        return generate_codebooks(self.transfer, self.a_hat, self.plm, self.priors)

    def forward(self, x) -> ForwardResult:
        self._codes = self.generate()
        return super().forward(x)

    __call__ = forward

    def _quantize(self, z: Tensor) -> QuantizationResult:
        return dual_quantize(z, self._codes.c_adj, self._codes.c_noun)

    def codebook_sizes(self) -> tuple[int, int]:
        return self.plm.k_adj, self.plm.k_noun

    def codebook_snapshot(self) -> np.ndarray:
        return self.generate().stacked()

    def quantize_indices(self, x) -> tuple[np.ndarray, ...]:
        codes = self.generate()
        q = dual_quantize(self.encode(x), codes.c_adj, codes.c_noun)
        return q.adj_indices, q.noun_indices


class BaselineModel(_Autoencoder):
    """VQ-VAE with a single ``K x n_c`` codebook learned directly."""

    variant = "baseline"

    def __init__(self, k: int = 64, n_c: int = 32, base_width: int = 16, downsample: int = 4,
                 beta: float = 0.25, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(n_c, base_width, downsample, beta, rng)
        self.k = k
        self.codebook = self.params.register(
            "codebook.embedding", rng.uniform(-1.0 / k, 1.0 / k, size=(k, n_c)))

    def _quantize(self, z: Tensor) -> QuantizationResult:
        return quantize(z, self.codebook)

    def codebook_sizes(self) -> tuple[int]:
        return (self.k,)

    def codebook_snapshot(self) -> np.ndarray:
        return self.codebook.data.copy()

    def quantize_indices(self, x) -> tuple[np.ndarray, ...]:
        return (quantize(self.encode(x), self.codebook).adj_indices,)


def forward_vqct(model: VQCTModel, x) -> ForwardResult:
    return model.forward(x)


def forward_baseline(model: BaselineModel, x) -> ForwardResult:
    return model.forward(x)
