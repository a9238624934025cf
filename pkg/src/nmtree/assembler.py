"""Module assembly: Single on leaves and root, a Sum/Comp choice elsewhere.

The choice is a two-way Gumbel-max sample over the log-softmax of a linear
map of ``[e_t, h_t]``.  Training runs the hard sample forward and routes the
gradient through the tempered softmax relaxation built from the same noise.

Modes:
    ``train``  hard one-hot forward, straight-through gradient
    ``soft``   relaxed weights forward and backward (used for gradient checks)
    ``infer``  noise-free argmax; only the chosen branch is evaluated
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .params import ParameterStore, init_matrix
from .parsing import ParseTree

MODES = ("train", "soft", "infer")
U_CLAMP = 1e-10


class ModuleKind(str, enum.Enum):
    SINGLE = "Single"
    SUM = "Sum"
    COMP = "Comp"


# decision index -> module
CHOICES = (ModuleKind.SUM, ModuleKind.COMP)


@dataclass
class Decision:
    logits: Tensor
    noise: np.ndarray
    tau: float
    z: np.ndarray
    z_soft: Tensor

    @property
    def kind(self) -> ModuleKind:
        return CHOICES[int(np.argmax(self.z))]


@dataclass
class ModuleAssignment:
    kinds: dict[int, ModuleKind]
    decisions: dict[int, Decision] = field(default_factory=dict)
    mode: str = "infer"


def add_assembler_params(store: ParameterStore, rng: np.random.Generator, in_dim: int) -> None:
    store.add("assembler.W", init_matrix(rng, 2, in_dim))
    store.add("assembler.b", np.zeros(2))


def assembler_logits(store: ParameterStore, e: Tensor, h: Tensor) -> Tensor:
    W = store["assembler.W"]
    if e.shape[0] + h.shape[0] != W.shape[1]:
        raise ShapeError(f"assembler input {e.shape[0]}+{h.shape[0]} != {W.shape[1]}")
    return ag.linear(ag.concat([e, h]), W, store["assembler.b"])


def gumbel_from_uniform(u: float) -> float:
    u = min(max(u, U_CLAMP), 1.0 - U_CLAMP)
    return -math.log(-math.log(u))


def sample_gumbel(rng: np.random.Generator) -> float:
    return gumbel_from_uniform(float(rng.random()))


def _one_hot(index: int, n: int = 2) -> np.ndarray:
    z = np.zeros(n)
    z[index] = 1.0
    return z


def gumbel_decision(logits: Tensor, noise, tau: float, mode: str = "train") -> tuple[np.ndarray, Tensor]:
    """Return the hard one-hot ``z`` and the relaxed ``z_soft``.

    ``np.argmax`` picks the lowest index on ties.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    logp = ag.log_softmax(logits)
    if mode == "infer":
        z = _one_hot(int(np.argmax(logp.data)), logits.size).astype(logits.data.dtype)
        return z, Tensor(z.copy())
    g = np.asarray(noise, dtype=logits.data.dtype)
    perturbed = logp + Tensor(g)
    z = _one_hot(int(np.argmax(perturbed.data)), logits.size).astype(logits.data.dtype)
    z_soft = ag.softmax(perturbed * (1.0 / tau))
    return z, z_soft


def straight_through_mix(z: np.ndarray, z_soft: Tensor, branches: Sequence[Tensor],
                         mode: str = "train") -> Tensor:
    """Mix branch outputs; hard ``z`` forward in train mode, ``z_soft`` in soft mode."""
    w = ag.straight_through(z, z_soft) if mode == "train" else z_soft
    return ag.add_n([w[k] * b for k, b in enumerate(branches)])


def forced_assignment(tree: ParseTree, internal_kinds: Mapping[int, ModuleKind] | None = None,
                      default: ModuleKind = ModuleKind.SUM) -> ModuleAssignment:
    """Assignment without sampling, e.g. for oracles and rule-based baselines."""
    kinds = {}
    for n in tree.ids:
        if n == tree.root or tree.is_leaf(n):
            kinds[n] = ModuleKind.SINGLE
        else:
            kinds[n] = ModuleKind((internal_kinds or {}).get(n, default))
    return ModuleAssignment(kinds, {}, "infer")


def internal_nodes(tree: ParseTree) -> list[int]:
    """Non-root, non-leaf nodes in post-order (the order noise is drawn in)."""
    return [n for n in tree.postorder() if n != tree.root and not tree.is_leaf(n)]


def draw_noise(tree: ParseTree, rng: np.random.Generator) -> dict[int, np.ndarray]:
    return {n: np.array([sample_gumbel(rng), sample_gumbel(rng)]) for n in internal_nodes(tree)}


def assign_modules(store: ParameterStore, tree: ParseTree, embeddings: Tensor, hidden: Tensor,
                   tau: float, noise=None, mode: str = "infer") -> ModuleAssignment:
    """Assign a module to every node.

    ``noise`` is a numpy Generator (fresh draws, two per internal node in
    post-order) or a mapping node -> length-2 Gumbel vector.  Ignored in
    infer mode, so inference never touches an rng.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    inner = internal_nodes(tree)
    if mode != "infer":
        if isinstance(noise, np.random.Generator):
            noise = draw_noise(tree, noise)
        elif noise is None:
            raise ValueError(f"mode {mode!r} needs Gumbel noise or an rng")
    row = {n: i for i, n in enumerate(tree.ids)}
    kinds = {n: ModuleKind.SINGLE for n in tree.ids}
    decisions = {}
    for n in inner:
        logits = assembler_logits(store, embeddings[row[n]], hidden[row[n]])
        g = None if mode == "infer" else noise[n]
        z, z_soft = gumbel_decision(logits, g, tau, mode)
        d = Decision(logits, None if g is None else np.asarray(g), tau, z, z_soft)
        decisions[n] = d
        kinds[n] = d.kind
    return ModuleAssignment(kinds, decisions, mode)
