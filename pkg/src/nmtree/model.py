"""The assembled grounding model: embeddings, encoder, assembler and modules
over one ParameterStore."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .assembler import ModuleAssignment, add_assembler_params, assign_modules
from .autograd import Tensor, default_dtype
from .config import Config
from .encoder import add_encoder_params, embed_tree, encode_bidirectional
from .modules import GroundResult, add_module_params, ground_tree
from .params import ParameterStore
from .parsing import ParseTree, Vocabulary


@dataclass
class Forward:
    embeddings: Tensor
    hidden: Tensor
    assignment: ModuleAssignment
    result: GroundResult

    @property
    def root_scores(self) -> Tensor:
        return self.result.root_scores

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.result.root_scores.data))


def grounding_loss(root_scores: Tensor, gt_index: int) -> Tensor:
    """Cross-entropy of the ground-truth region under a softmax over regions."""
    K = root_scores.shape[0]
    if not 0 <= gt_index < K:
        raise IndexError(f"gt index {gt_index} out of range for K={K}")
    return -ag.log_softmax(root_scores)[gt_index]


class NMTree:
    def __init__(self, config: Config, vocab: Vocabulary, store: ParameterStore | None = None):
        self.config = config
        self.vocab = vocab
        if store is None:
            store = ParameterStore(config.dtype)
            rng = np.random.default_rng(config.seed)
            add_encoder_params(store, rng, vocab.sizes,
                               (config.embed_word, config.embed_pos, config.embed_dep), config.d_h)
            add_assembler_params(store, rng, config.embed_dim + 2 * config.d_h)
            add_module_params(store, rng, embed_dim=config.embed_dim, d_h=config.d_h,
                              d_x=config.d_x, attn_hidden=config.attn_hidden)
        self.store = store

    def forward(self, tree: ParseTree, features: np.ndarray, mode: str = "infer",
                noise=None, assignment: ModuleAssignment | None = None) -> Forward:
        """Encode, assemble and ground one expression.

        Pass ``assignment`` to bypass the assembler (e.g. fixed layouts).
        """
        with default_dtype(self.store.dtype):
            E = embed_tree(self.store, tree, self.vocab)
            H = encode_bidirectional(self.store, tree, E)
            if assignment is None:
                assignment = assign_modules(self.store, tree, E, H, self.config.tau, noise, mode)
            result = ground_tree(self.store, tree, E, H, assignment, features)
        return Forward(E, H, assignment, result)

    def loss(self, tree: ParseTree, features: np.ndarray, gt_index: int,
             mode: str = "train", noise=None) -> tuple[Tensor, Forward]:
        fwd = self.forward(tree, features, mode, noise)
        with default_dtype(self.store.dtype):
            return grounding_loss(fwd.root_scores, gt_index), fwd

    def predict(self, tree: ParseTree, features: np.ndarray) -> int:
        with ag.no_grad():
            return self.forward(tree, features, "infer").prediction
