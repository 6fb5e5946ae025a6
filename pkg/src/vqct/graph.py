"""Adjective-to-noun modifying graph and its normalized propagation matrix.

Node order is fixed: adjective ``i`` is node ``i`` and noun ``j`` is node
``k_adj + j``. Generated codebooks are sliced using this order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .io import atomic_write_text
from .priors import ADJ, NOUN, PlmCodebooks, PosLexicon


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class ModifyingGraph:
    codebooks: PlmCodebooks
    edges: frozenset[tuple[int, int]]
    skipped: int = 0
    empty_corpus: bool = False

    def __post_init__(self):
        ka, kn = self.codebooks.k_adj, self.codebooks.k_noun
        for i, j in self.edges:
            if not (0 <= i < ka and 0 <= j < kn):
                raise GraphError(f"edge ({i}, {j}) out of range for {ka}x{kn}")

    @property
    def n_nodes(self) -> int:
        return self.codebooks.k_adj + self.codebooks.k_noun

    def adjacency(self) -> sp.csr_matrix:
        """Binary ``k_adj x k_noun`` matrix with ``A[i, j] = 1`` for adjective i modifying noun j."""
        shape = (self.codebooks.k_adj, self.codebooks.k_noun)
        if not self.edges:
            return sp.csr_matrix(shape)
        rows, cols = zip(*sorted(self.edges))
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    k_adj: int
    k_noun: int = field(default=0)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_from_corpus(tokens_path, lex: PosLexicon, cb: PlmCodebooks) -> ModifyingGraph:
    """Add edge (i, j) wherever adjective i is immediately followed by noun j.

    Line breaks end a bigram window. An empty corpus yields an edgeless graph
    with ``empty_corpus`` set rather than an error.
    """
    try:
        text = Path(tokens_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphError(f"cannot read corpus {tokens_path}: {exc}") from exc
    adj_pos = {w: i for i, w in enumerate(cb.adj_words)}
    noun_pos = {w: j for j, w in enumerate(cb.noun_words)}
    edges: set[tuple[int, int]] = set()
    n_tokens = 0
    for line in text.splitlines():
        toks = line.lower().split()
        n_tokens += len(toks)
        for left, right in zip(toks, toks[1:]):
            if (left in adj_pos and right in noun_pos
                    and lex.has(left, ADJ) and lex.has(right, NOUN)):
                edges.add((adj_pos[left], noun_pos[right]))
    return ModifyingGraph(cb, frozenset(edges), empty_corpus=n_tokens == 0)


def load_edge_list(path, cb: PlmCodebooks) -> ModifyingGraph:
    adj_pos = {w: i for i, w in enumerate(cb.adj_words)}
    noun_pos = {w: j for j, w in enumerate(cb.noun_words)}
    edges: set[tuple[int, int]] = set()
    skipped = 0
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise GraphError(f"line {lineno}: expected 'adjective<TAB>noun'")
        a, n = parts[0].strip().lower(), parts[1].strip().lower()
        if a in adj_pos and n in noun_pos:
            edges.add((adj_pos[a], noun_pos[n]))
        else:
            skipped += 1
    return ModifyingGraph(cb, frozenset(edges), skipped=skipped)


def export_edge_list(g: ModifyingGraph, path) -> None:
    cb = g.codebooks
    lines = [f"{cb.adj_words[i]}\t{cb.noun_words[j]}" for i, j in g.sorted_edges()]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def normalize(g: ModifyingGraph) -> NormalizedAdjacency:
    """``D^-1/2 (A_sym + I) D^-1/2`` over the symmetrized bipartite graph."""
    a = g.adjacency()
    ka, kn = a.shape
    full = sp.bmat([[sp.csr_matrix((ka, ka)), a], [a.T, sp.csr_matrix((kn, kn))]],
                   format="csr")
    full = full + sp.identity(ka + kn, format="csr")
    deg = np.asarray(full.sum(axis=1)).ravel()
    coo = full.tocoo()
    # a_ij / sqrt(d_i d_j) keeps entries exact when d_i d_j is a perfect square
    vals = coo.data / np.sqrt(deg[coo.row] * deg[coo.col])
    mat = sp.csr_matrix((vals, (coo.row, coo.col)), shape=full.shape)
    mat.sort_indices()
    return NormalizedAdjacency(mat, ka, kn)
