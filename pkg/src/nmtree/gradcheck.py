"""Central finite-difference check of the full model loss gradient.

The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)`` with
``a`` the taped gradient and ``n`` the central difference; the floor keeps
entries whose true gradient is essentially zero from dividing by noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .assembler import draw_noise
from .autograd import Tensor
from .config import Config
from .model import NMTree
from .parsing import Token, Vocabulary, build_tree

STEP = 1e-4
FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def worst(self) -> str:
        return max(self.per_parameter, key=self.per_parameter.get)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference(f: Callable[[], float], value: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``value`` (mutated in place)."""
    grad = np.zeros_like(value)
    flat, gflat = value.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        plus = f()
        flat[k] = orig - h
        minus = f()
        flat[k] = orig
        gflat[k] = (plus - minus) / (2 * h)
    return grad


def check_model_gradients(model: NMTree, loss_fn: Callable[[], Tensor], h: float = STEP,
                          floor: float = FLOOR) -> GradCheckReport:
    store = model.store
    store.zero_grad()
    loss_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in store.items()}

    def value():
        with ag.no_grad():
            return loss_fn().item()

    report = GradCheckReport(0.0)
    for name, p in store.items():
        numeric = finite_difference(value, p.data, h)
        err = float(relative_error(analytic[name], numeric, floor).max()) if p.size else 0.0
        report.per_parameter[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
        report.checked += p.size
    return report


def tiny_config(**overrides) -> Config:
    base = dict(d_x=8, d_h=16, embed_word=8, embed_pos=4, embed_dep=4, attn_hidden=8,
                num_regions=3, precision=64, seed=0)
    base.update(overrides)
    return Config(**base)


def tiny_problem(config: Config | None = None, seed: int = 0):
    """A 5-node tree with two internal nodes, a K=3 scene and fixed Gumbel noise."""
    config = config or tiny_config(seed=seed)
    tokens = [
        Token(1, "red", "ADJ", 2, "amod"),
        Token(2, "ball", "NOUN", 0, "root"),
        Token(3, "left-of", "ADP", 2, "prep"),
        Token(4, "box", "NOUN", 3, "pobj"),
        Token(5, "large", "ADJ", 4, "amod"),
    ]
    tree = build_tree(tokens)
    vocab = Vocabulary.from_dict({
        "words": ["<unk>", "red", "ball", "left-of", "box", "large"],
        "pos": ["<unk>", "ADJ", "NOUN", "ADP"],
        "deps": ["<unk>", "amod", "root", "prep", "pobj"],
    })
    rng = np.random.default_rng(seed + 1000)
    features = rng.normal(size=(config.num_regions, config.d_x))
    noise = draw_noise(tree, rng)
    model = NMTree(config, vocab)
    return model, tree, features, 1, noise


def run_gradcheck(config: Config | None = None, seed: int = 0, h: float = STEP) -> GradCheckReport:
    model, tree, features, gt, noise = tiny_problem(config, seed)

    def loss_fn():
        return model.loss(tree, features, gt, "soft", noise)[0]

    return check_model_gradients(model, loss_fn, h)
