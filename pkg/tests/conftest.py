import numpy as np
import pytest

from nmtree.gradcheck import tiny_config
from nmtree.model import NMTree
from nmtree.params import ParameterStore
from nmtree.parsing import Token, Vocabulary, build_tree

POS = ["NOUN", "ADJ", "ADP", "VERB"]
DEPS = ["root", "amod", "prep", "pobj", "acl"]
WORDS = ["ball", "box", "red", "large", "left-of", "above", "cup"]


def small_vocab():
    return Vocabulary.from_dict({"words": ["<unk>"] + WORDS, "pos": ["<unk>"] + POS,
                                 "deps": ["<unk>"] + DEPS})


def random_tree(rng, n=None, max_nodes=9):
    """Random dependency tree with shuffled token indices."""
    n = n or int(rng.integers(1, max_nodes + 1))
    perm = rng.permutation(n) + 1
    tokens = []
    for i in range(n):
        parent = 0 if i == 0 else int(perm[rng.integers(0, i)])
        tokens.append(Token(int(perm[i]), str(rng.choice(WORDS)), str(rng.choice(POS)), parent,
                            "root" if parent == 0 else str(rng.choice(DEPS[1:]))))
    return build_tree(tokens)


def random_model(seed=0, scale=1.0, **overrides):
    """Tiny model whose parameters are redrawn so biases are nonzero too."""
    config = tiny_config(seed=seed, **overrides)
    model = NMTree(config, small_vocab())
    rng = np.random.default_rng(seed + 77)
    for _, p in model.store.items():
        p.data[...] = rng.normal(scale=scale, size=p.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def zero_store(store: ParameterStore) -> None:
    for _, p in store.items():
        p.data[...] = 0.0


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
