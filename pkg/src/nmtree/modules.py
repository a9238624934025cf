"""Language representations, score functions and the Single/Sum/Comp modules,
plus the bottom-up pass that accumulates region scores to the root."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .assembler import ModuleAssignment, ModuleKind, straight_through_mix
from .autograd import ShapeError, Tensor
from .params import ParameterStore, init_matrix
from .parsing import ParseTree

HEADS = ("s", "p")


def add_module_params(store: ParameterStore, rng: np.random.Generator, *, embed_dim: int,
                      d_h: int, d_x: int, attn_hidden: int) -> None:
    for head in HEADS:
        store.add(f"attn_{head}.W1", init_matrix(rng, attn_hidden, 2 * d_h))
        store.add(f"attn_{head}.b1", np.zeros(attn_hidden))
        store.add(f"attn_{head}.W2", init_matrix(rng, 1, attn_hidden))
        store.add(f"attn_{head}.b2", np.zeros(1))
    store.add("single.W_in", init_matrix(rng, embed_dim, d_x))
    store.add("single.b_in", np.zeros(embed_dim))
    store.add("single.W_out", init_matrix(rng, 1, embed_dim))
    store.add("single.b_out", np.zeros(1))
    store.add("pair.W_in", init_matrix(rng, embed_dim, 2 * d_x))
    store.add("pair.b_in", np.zeros(embed_dim))
    store.add("pair.W_out", init_matrix(rng, 1, embed_dim))
    store.add("pair.b_out", np.zeros(1))


@dataclass
class Scene:
    features: np.ndarray  # (K, d_x)
    gt_index: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"scene needs a (K, d_x) feature matrix, got {self.features.shape}")
        if self.gt_index is not None and not 0 <= self.gt_index < self.features.shape[0]:
            raise ValueError(f"gt_index {self.gt_index} out of range for K={self.K}")

    @property
    def K(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------- attention

def attention_logits(store: ParameterStore, head: str, hidden: Tensor) -> Tensor:
    """Unnormalised attention score for every row of ``hidden``."""
    a = ag.tanh(ag.linear(hidden, store[f"attn_{head}.W1"], store[f"attn_{head}.b1"]))
    out = ag.linear(a, store[f"attn_{head}.W2"], store[f"attn_{head}.b2"])
    return ag.reshape(out, out.shape[:-1])


def node_attention(store: ParameterStore, hidden_subset: Tensor, head: str) -> Tensor:
    """Attention weights over the rows of ``hidden_subset`` (one row per node of N_t)."""
    if head not in HEADS:
        raise ValueError(f"head must be 's' or 'p', got {head!r}")
    return ag.softmax(attention_logits(store, head, hidden_subset))


def language_rep(alpha: Tensor, embeddings_subset: Tensor) -> Tensor:
    return ag.matmul(alpha, embeddings_subset)


# ---------------------------------------------------------------- scores

def _normalized_score(proj: Tensor, y: Tensor, W_out: Tensor, b_out: Tensor) -> Tensor:
    if proj.shape[-1] != y.shape[-1]:
        raise ShapeError(f"projection dim {proj.shape[-1]} does not match language dim {y.shape[-1]}")
    out = ag.linear(ag.l2_normalize(proj * y), W_out, b_out)
    return ag.reshape(out, out.shape[:-1])


def score_single(store: ParameterStore, x, y: Tensor) -> Tensor:
    """Single score for a region vector (scalar) or a (K, d_x) batch (K-vector)."""
    proj = ag.linear(x, store["single.W_in"], store["single.b_in"])
    return _normalized_score(proj, y, store["single.W_out"], store["single.b_out"])


def score_pair(store: ParameterStore, x1, x2, y: Tensor) -> Tensor:
    """Pair score of candidate ``x1`` against context ``x2``.

    ``x1`` may be a (K, d_x) batch with a single context vector ``x2``.
    """
    x1, x2 = ag._lift(x1), ag._lift(x2)
    if x1.data.ndim == 2 and x2.data.ndim == 1:
        x2 = ag.stack([x2] * x1.shape[0])
    pair = ag.concat([x1, x2], axis=-1)
    proj = ag.linear(pair, store["pair.W_in"], store["pair.b_in"])
    return _normalized_score(proj, y, store["pair.W_out"], store["pair.b_out"])


# ---------------------------------------------------------------- modules

def _check_children(children: Sequence[Tensor], K: int) -> None:
    for s in children:
        if s.shape != (K,):
            raise ShapeError(f"child score of shape {s.shape}, expected ({K},)")


def run_single(single_scores: Tensor, children: Sequence[Tensor]) -> Tensor:
    _check_children(children, single_scores.shape[0])
    if not children:
        return single_scores
    return ag.add_n([single_scores, *children])


def run_sum(children: Sequence[Tensor]) -> Tensor:
    if not children:
        raise ValueError("Sum needs at least one child")
    _check_children(children, children[0].shape[0])
    return children[0] if len(children) == 1 else ag.add_n(children)


@dataclass
class CompOutput:
    scores: Tensor
    beta: Tensor
    context: Tensor


def run_comp(store: ParameterStore, single_scores: Tensor, children: Sequence[Tensor],
             regions: Tensor, y_pair: Tensor) -> CompOutput:
    """Soft-select a context region from the accumulated scores, then re-score
    every region against it with the pair function."""
    _check_children(children, single_scores.shape[0])
    beta = ag.softmax(run_single(single_scores, children))
    context = ag.matmul(beta, regions)
    return CompOutput(score_pair(store, regions, context, y_pair), beta, context)


# ---------------------------------------------------------------- tree pass

@dataclass
class NodeRecord:
    node: int
    kind: ModuleKind
    scores: Tensor
    alpha_s: Tensor | None = None
    alpha_p: Tensor | None = None
    beta: Tensor | None = None
    branches: dict = field(default_factory=dict)


@dataclass
class GroundResult:
    root_scores: Tensor
    records: dict[int, NodeRecord]


def ground_tree(store: ParameterStore, tree: ParseTree, embeddings: Tensor, hidden: Tensor,
                assignment: ModuleAssignment, scene: Scene | np.ndarray) -> GroundResult:
    """Post-order evaluation of the assembled tree; returns the root K-vector.

    In train/soft mode every internal node evaluates both Sum and Comp and
    mixes them with its decision weights; in infer mode only the chosen
    module runs.
    """
    feats = scene.features if isinstance(scene, Scene) else np.asarray(scene)
    regions = Tensor(feats.astype(embeddings.data.dtype, copy=False))
    mode = assignment.mode
    for n in tree.ids:
        kind = assignment.kinds.get(n)
        leaf_or_root = n == tree.root or tree.is_leaf(n)
        if kind is None or (leaf_or_root and kind != ModuleKind.SINGLE) or \
                (not leaf_or_root and kind == ModuleKind.SINGLE):
            raise ValueError(f"assignment inconsistent with tree at node {n}: {kind}")
        if mode != "infer" and not leaf_or_root and n not in assignment.decisions:
            raise ValueError(f"mode {mode!r} needs a decision for internal node {n}")

    row = {n: i for i, n in enumerate(tree.ids)}
    att = {}

    def logits_for(head):
        if head not in att:
            att[head] = attention_logits(store, head, hidden)
        return att[head]

    proj_cache = []

    def single_scores(y):
        if not proj_cache:
            proj_cache.append(ag.linear(regions, store["single.W_in"], store["single.b_in"]))
        return _normalized_score(proj_cache[0], y, store["single.W_out"], store["single.b_out"])

    def rep(n, head):
        rows = [row[m] for m in tree.node_set(n)]
        alpha = ag.softmax(ag.take(logits_for(head), rows))
        return alpha, language_rep(alpha, ag.take(embeddings, rows))

    scores: dict[int, Tensor] = {}
    records: dict[int, NodeRecord] = {}
    for n in tree.postorder():
        kids = [scores[c] for c in tree.children[n]]
        kind = assignment.kinds[n]
        rec = NodeRecord(n, kind, None)
        if kind == ModuleKind.SINGLE:
            rec.alpha_s, y_s = rep(n, "s")
            out = run_single(single_scores(y_s), kids)
        else:
            both = mode != "infer"
            branch = {}
            if both or kind == ModuleKind.SUM:
                branch[ModuleKind.SUM] = run_sum(kids)
            if both or kind == ModuleKind.COMP:
                rec.alpha_s, y_s = rep(n, "s")
                rec.alpha_p, y_p = rep(n, "p")
                comp = run_comp(store, single_scores(y_s), kids, regions, y_p)
                rec.beta = comp.beta
                branch[ModuleKind.COMP] = comp.scores
            if both:
                d = assignment.decisions[n]
                out = straight_through_mix(d.z, d.z_soft,
                                           [branch[ModuleKind.SUM], branch[ModuleKind.COMP]], mode)
            else:
                out = branch[kind]
            rec.branches = branch
        rec.scores = out
        scores[n] = out
        records[n] = rec
    return GroundResult(scores[tree.root], records)
