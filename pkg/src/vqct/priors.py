"""Pretrained word-embedding priors filtered by part of speech.

Two inputs are ingested from text files:

* an embedding table in the GloVe layout (``word f1 f2 ... fd`` per line),
* a part-of-speech lexicon (``word<TAB>tag[,tag...]`` per line) with tags
  ``a``/``adj``, ``n``/``noun`` or ``other``.

:func:`build_plm_codebooks` keeps the words tagged as adjectives and nouns,
yielding the two frozen prior matrices the transfer network consumes. Both
files are lowercased before matching.

:func:`write_synthetic_resources` produces a small self-contained set of
these files (plus a corpus) so the rest of the pipeline can run without
downloading a real embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import atomic_write_text

ADJ, NOUN, OTHER = "ADJ", "NOUN", "OTHER"

_TAG_ALIASES = {"a": ADJ, "adj": ADJ, "n": NOUN, "noun": NOUN, "other": OTHER}


class PriorsError(ValueError):
    """Malformed embedding/lexicon input or an empty POS selection."""


@dataclass(frozen=True)
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray

    @property
    def d_plm(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}


@dataclass(frozen=True)
class PosLexicon:
    tags: dict[str, frozenset[str]] = field(default_factory=dict)

    def has(self, word: str, tag: str) -> bool:
        return tag in self.tags.get(word, ())


@dataclass(frozen=True)
class PlmCodebooks:
    adj_words: list[str]
    r_adj: np.ndarray
    noun_words: list[str]
    r_noun: np.ndarray

    @property
    def k_adj(self) -> int:
        return len(self.adj_words)

    @property
    def k_noun(self) -> int:
        return len(self.noun_words)

    @property
    def d_plm(self) -> int:
        return self.r_adj.shape[1]

    def node_features(self) -> np.ndarray:
        """Adjectives first, then nouns: the node order used by the graph."""
        return np.vstack([self.r_adj, self.r_noun])


def _lines(path):
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if line.strip():
            yield lineno, line


def load_embeddings(path) -> EmbeddingTable:
    words: list[str] = []
    rows: list[list[float]] = []
    seen: dict[str, int] = {}
    dim = None
    for lineno, line in _lines(path):
        fields = line.split()
        word = fields[0].lower()
        try:
            vec = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise PriorsError(f"line {lineno}: non-numeric field ({exc})") from None
        if not vec:
            raise PriorsError(f"line {lineno}: no vector components")
        if not np.all(np.isfinite(vec)):
            raise PriorsError(f"line {lineno}: non-finite vector component")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise PriorsError(f"line {lineno}: expected {dim} components, found {len(vec)}")
        if word in seen:
            raise PriorsError(f"line {lineno}: duplicate word {word!r} "
                              f"(first seen on line {seen[word]})")
        seen[word] = lineno
        words.append(word)
        rows.append(vec)
    if not words:
        raise PriorsError(f"{path}: no entries")
    return EmbeddingTable(words, np.array(rows, dtype=np.float64))


def load_lexicon(path) -> PosLexicon:
    tags: dict[str, set[str]] = {}
    for lineno, line in _lines(path):
        if "\t" not in line:
            raise PriorsError(f"line {lineno}: expected 'word<TAB>tags'")
        word, raw = line.split("\t", 1)
        word = word.strip().lower()
        entry = tags.setdefault(word, set())
        for tok in raw.split(","):
            tok = tok.strip().lower()
            if tok not in _TAG_ALIASES:
                raise PriorsError(f"line {lineno}: unknown tag {tok!r}")
            entry.add(_TAG_ALIASES[tok])
    return PosLexicon({w: frozenset(t) for w, t in tags.items()})


def build_plm_codebooks(emb: EmbeddingTable, lex: PosLexicon,
                        k_adj_max: int, k_noun_max: int) -> PlmCodebooks:
    """Keep adjectives and nouns present in both inputs, in table order, up to the caps."""
    adj_idx = [i for i, w in enumerate(emb.words) if lex.has(w, ADJ)][:k_adj_max]
    noun_idx = [i for i, w in enumerate(emb.words) if lex.has(w, NOUN)][:k_noun_max]
    if not adj_idx or not noun_idx:
        which = "adjective" if not adj_idx else "noun"
        raise PriorsError(f"empty intersection: no {which} in both table and lexicon")
    return PlmCodebooks(
        adj_words=[emb.words[i] for i in adj_idx],
        r_adj=emb.vectors[adj_idx].copy(),
        noun_words=[emb.words[i] for i in noun_idx],
        r_noun=emb.vectors[noun_idx].copy(),
    )


# ---------------------------------------------------------------------------
# Synthetic resources
# ---------------------------------------------------------------------------

_ADJ_GROUPS = {
    "color": ["red", "orange", "yellow", "green", "blue", "purple", "pink", "brown",
              "black", "white", "gray", "golden", "crimson", "violet", "silver", "teal"],
    "texture": ["striped", "spotted", "smooth", "rough", "shiny", "dull", "fuzzy", "glossy"],
    "shape": ["round", "square", "sharp", "curved", "flat", "long", "thin", "wide"],
}
_NOUN_GROUPS = {
    "bird": ["beak", "wing", "tail", "eye", "head", "breast", "belly", "leg",
             "feather", "crown", "throat", "nape"],
    "object": ["wheel", "door", "window", "roof", "wall", "box", "ball", "cup", "car", "bottle"],
    "scene": ["sky", "tree", "leaf", "grass", "water", "road", "stone", "cloud", "field", "hill"],
}
_COMPATIBLE = {
    "color": ["bird", "object", "scene"],
    "texture": ["bird", "object"],
    "shape": ["object", "scene"],
}
_OTHER_WORDS = ["the", "a", "of", "and", "with", "very", "quickly", "is", "on", "has"]
# color words that are also nouns
_DUAL = ["orange"]


def synthetic_vocabulary() -> tuple[list[str], list[str], list[str]]:
    adjs = [w for g in _ADJ_GROUPS.values() for w in g]
    nouns = [w for g in _NOUN_GROUPS.values() for w in g]
    return adjs, nouns, list(_OTHER_WORDS)


def write_synthetic_resources(out_dir, d_plm: int = 16, seed: int = 0,
                              n_sentences: int = 400) -> dict[str, Path]:
    """Write ``embeddings.txt``, ``lexicon.tsv`` and ``corpus.txt`` into ``out_dir``.

    Embeddings are drawn around one centre per semantic group so that, as in
    real word vectors, related words (two colours, two bird parts) sit closer
    than unrelated ones. The corpus mixes adjective-noun bigrams, drawn from
    a fixed compatibility pattern between groups, with filler words.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    groups = list(_ADJ_GROUPS.items()) + list(_NOUN_GROUPS.items())
    centres = {name: rng.normal(0.0, 1.0, d_plm) for name, _ in groups}

    order: list[tuple[str, np.ndarray]] = []
    for name, words in groups:
        for w in words:
            order.append((w, centres[name] + 0.45 * rng.normal(0.0, 1.0, d_plm)))
    for w in _OTHER_WORDS:
        order.append((w, rng.normal(0.0, 1.0, d_plm)))
    # interleave so table order mixes POS like a frequency-ranked list would
    perm = rng.permutation(len(order))
    order = [order[i] for i in perm]

    emb_lines = [w + " " + " ".join(f"{v:.6f}" for v in vec) for w, vec in order]
    lex_lines = []
    for w, _ in order:
        if w in _DUAL:
            lex_lines.append(f"{w}\ta,n")
        elif any(w in g for g in _ADJ_GROUPS.values()):
            lex_lines.append(f"{w}\ta")
        elif any(w in g for g in _NOUN_GROUPS.values()):
            lex_lines.append(f"{w}\tn")
        else:
            lex_lines.append(f"{w}\tother")

    sentences = []
    adj_names = list(_ADJ_GROUPS)
    for _ in range(n_sentences):
        a_name = adj_names[rng.integers(len(adj_names))]
        n_names = _COMPATIBLE[a_name]
        ag = _ADJ_GROUPS[a_name]
        ng = _NOUN_GROUPS[n_names[rng.integers(len(n_names))]]
        adj = ag[rng.integers(len(ag))]
        noun = ng[rng.integers(len(ng))]
        filler = _OTHER_WORDS[rng.integers(len(_OTHER_WORDS))]
        # a third of sentences put the noun first, which yields no edge
        if rng.random() < 1 / 3:
            sentences.append(f"{filler} {noun} {adj}")
        else:
            sentences.append(f"{filler} {adj} {noun}")

    paths = {
        "embeddings": out / "embeddings.txt",
        "lexicon": out / "lexicon.tsv",
        "corpus": out / "corpus.txt",
    }
    atomic_write_text(paths["embeddings"], "\n".join(emb_lines) + "\n")
    atomic_write_text(paths["lexicon"], "\n".join(lex_lines) + "\n")
    atomic_write_text(paths["corpus"], "\n".join(sentences) + "\n")
    return paths
