import numpy as np
import pytest

from vqct.priors import ADJ, NOUN, EmbeddingTable, PosLexicon, build_plm_codebooks


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def small_codebooks():
    """Three adjectives and three nouns with distinct 4-d priors."""
    words = ["red", "sharp", "round", "beak", "wheel", "sky"]
    rng = np.random.default_rng(0)
    emb = EmbeddingTable(words, rng.random((6, 4)))
    lex = PosLexicon({"red": {ADJ}, "sharp": {ADJ}, "round": {ADJ},
                      "beak": {NOUN}, "wheel": {NOUN}, "sky": {NOUN}})
    return build_plm_codebooks(emb, lex, 10, 10)


@pytest.fixture(scope="session")
def synthetic_resources(tmp_path_factory):
    from vqct.config import TrainConfig
    from vqct.train import load_resources
    return load_resources(TrainConfig(), tmp_path_factory.mktemp("res"))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
