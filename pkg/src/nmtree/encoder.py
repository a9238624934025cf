"""Node embeddings and the bidirectional child-sum tree LSTM."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .params import ParameterStore, init_embedding, init_matrix
from .parsing import ParseTree, Vocabulary

DIRECTIONS = ("up", "down")


def add_encoder_params(store: ParameterStore, rng: np.random.Generator, vocab_sizes,
                       embed_dims, d_h: int) -> None:
    (nw, np_, nd), (ew, ep, ed) = vocab_sizes, embed_dims
    store.add("embed.word", init_embedding(rng, nw, ew))
    store.add("embed.pos", init_embedding(rng, np_, ep))
    store.add("embed.dep", init_embedding(rng, nd, ed))
    e = ew + ep + ed
    for direction in DIRECTIONS:
        p = f"tree_{direction}"
        store.add(f"{p}.W_iou", init_matrix(rng, 3 * d_h, e))
        store.add(f"{p}.U_iou", init_matrix(rng, 3 * d_h, d_h))
        store.add(f"{p}.b_iou", np.zeros(3 * d_h))
        store.add(f"{p}.W_f", init_matrix(rng, d_h, e))
        store.add(f"{p}.U_f", init_matrix(rng, d_h, d_h))
        store.add(f"{p}.b_f", np.zeros(d_h))


def embed_node(store: ParameterStore, indices: tuple[int, int, int]) -> Tensor:
    w, p, d = indices
    return ag.concat([ag.take(store["embed.word"], [w])[0],
                      ag.take(store["embed.pos"], [p])[0],
                      ag.take(store["embed.dep"], [d])[0]])


def embed_tree(store: ParameterStore, tree: ParseTree, vocab: Vocabulary) -> Tensor:
    """Embedding matrix with one row per token, rows in token order."""
    idx = np.array([vocab.encode(t) for t in tree.tokens], dtype=np.intp)
    return ag.concat([ag.take(store["embed.word"], idx[:, 0]),
                      ag.take(store["embed.pos"], idx[:, 1]),
                      ag.take(store["embed.dep"], idx[:, 2])], axis=1)


def _cell(store: ParameterStore, prefix: str, x_iou: Tensor, x_f: Tensor,
          children: Sequence[tuple[Tensor, Tensor]]) -> tuple[Tensor, Tensor]:
    """Gate arithmetic given the precomputed input projections of one node."""
    d_h = store[f"{prefix}.U_f"].shape[0]
    if children:
        h_sum = children[0][1] if len(children) == 1 else ag.add_n([h for _, h in children])
        pre = x_iou + ag.linear(h_sum, store[f"{prefix}.U_iou"])
    else:
        pre = x_iou
    i = ag.sigmoid(pre[:d_h])
    o = ag.sigmoid(pre[d_h:2 * d_h])
    u = ag.tanh(pre[2 * d_h:])
    c = i * u
    if children:
        U_f = store[f"{prefix}.U_f"]
        terms = [c]
        for c_j, h_j in children:
            f_j = ag.sigmoid(x_f + ag.linear(h_j, U_f))
            terms.append(f_j * c_j)
        c = ag.add_n(terms)
    h = o * ag.tanh(c)
    return c, h


def childsum_step(store: ParameterStore, prefix: str, e: Tensor,
                  children: Sequence[tuple[Tensor, Tensor]]) -> tuple[Tensor, Tensor]:
    """One child-sum transition: returns (c, h) for a node with embedding ``e``."""
    W = store[f"{prefix}.W_iou"]
    if e.shape != (W.shape[1],):
        raise ShapeError(f"embedding of shape {e.shape} does not match {prefix} input dim {W.shape[1]}")
    d_h = store[f"{prefix}.U_f"].shape[0]
    for c, h in children:
        if c.shape != (d_h,) or h.shape != (d_h,):
            raise ShapeError(f"child state shapes {c.shape}/{h.shape} do not match d_h={d_h}")
    x_iou = ag.linear(e, W, store[f"{prefix}.b_iou"])
    x_f = ag.linear(e, store[f"{prefix}.W_f"], store[f"{prefix}.b_f"])
    return _cell(store, prefix, x_iou, x_f, children)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fused_tree_lstm(x_iou: Tensor, x_f: Tensor, U_iou: Tensor, U_f: Tensor,
                    order: Sequence[int], preds: Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray]:
    """Whole-tree child-sum pass as one tape node.

    Row ``r`` of the inputs is a node; ``order`` lists rows so that every row
    comes after the rows in ``preds[r]`` whose states it consumes.  Returns
    the hidden matrix (differentiable) and the cell matrix (values only).
    The backward pass is derived by hand and checked against the primitive
    ops in ``childsum_step``.
    """
    xi, xf, Ui, Uf = x_iou.data, x_f.data, U_iou.data, U_f.data
    T, d = xf.shape
    H = np.zeros((T, d), dtype=xi.dtype)
    C = np.zeros((T, d), dtype=xi.dtype)
    saved = {}
    for r in order:
        ps = preds[r]
        if ps:
            hs = H[ps].sum(axis=0)
            pre = xi[r] + Ui @ hs
        else:
            hs = None
            pre = xi[r]
        i = _sig(pre[:d])
        o = _sig(pre[d:2 * d])
        u = np.tanh(pre[2 * d:])
        c = i * u
        f = None
        if ps:
            f = _sig(xf[r] + H[ps] @ Uf.T)  # one row per predecessor
            c = c + (f * C[ps]).sum(axis=0)
        tc = np.tanh(c)
        C[r] = c
        H[r] = o * tc
        saved[r] = (i, o, u, f, tc, hs)

    def backward(g):
        dH = g.copy()
        dC = np.zeros_like(C)
        dxi = np.zeros_like(xi)
        dxf = np.zeros_like(xf)
        gUi = np.zeros_like(Ui)
        gUf = np.zeros_like(Uf)
        for r in reversed(order):
            i, o, u, f, tc, hs = saved[r]
            dh = dH[r]
            dc = dC[r] + dh * o * (1.0 - tc * tc)
            dpre = np.concatenate([dc * u * i * (1.0 - i),
                                   dh * tc * o * (1.0 - o),
                                   dc * i * (1.0 - u * u)])
            dxi[r] = dpre
            ps = preds[r]
            if not ps:
                continue
            gUi += np.outer(dpre, hs)
            dhs = Ui.T @ dpre
            dpf = dc * C[ps] * f * (1.0 - f)  # (n_pred, d)
            dxf[r] = dpf.sum(axis=0)
            gUf += dpf.T @ H[ps]
            dhp = dpf @ Uf + dhs
            for k, j in enumerate(ps):
                dC[j] += dc * f[k]
                dH[j] += dhp[k]
        return dxi, dxf, gUi, gUf

    return ag._make(H, (x_iou, x_f, U_iou, U_f), backward), C


def encode_tree(store: ParameterStore, tree: ParseTree, embeddings: Tensor,
                direction: str, fused: bool = True):
    """Run one direction over the tree; ``embeddings`` rows follow token order.

    Bottom-up consumes every child's state; top-down consumes the parent's
    state only, with the root starting from zeros.  Returns a map
    node -> (c, h).  With ``fused`` the h values come from rows of one
    fused op and c is a constant (no gradient).
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    prefix = f"tree_{direction}"
    row = {n: i for i, n in enumerate(tree.ids)}
    x_iou = ag.linear(embeddings, store[f"{prefix}.W_iou"], store[f"{prefix}.b_iou"])
    x_f = ag.linear(embeddings, store[f"{prefix}.W_f"], store[f"{prefix}.b_f"])
    if direction == "up":
        order = tree.postorder()
        preds = {n: list(tree.children[n]) for n in tree.ids}
    else:
        order = tree.preorder()
        preds = {n: ([tree.parent(n)] if tree.parent(n) != 0 else []) for n in tree.ids}
    if fused:
        H, C = fused_tree_lstm(x_iou, x_f, store[f"{prefix}.U_iou"], store[f"{prefix}.U_f"],
                               [row[n] for n in order],
                               [[row[p] for p in preds[n]] for n in tree.ids])
        return {n: (Tensor(C[row[n]]), H[row[n]]) for n in tree.ids}
    states: dict[int, tuple[Tensor, Tensor]] = {}
    for n in order:
        states[n] = _cell(store, prefix, x_iou[row[n]], x_f[row[n]], [states[p] for p in preds[n]])
    return states


def encode_direction(store: ParameterStore, tree: ParseTree, embeddings: Tensor,
                     direction: str) -> Tensor:
    """Hidden matrix of one direction, rows in token order (fused path)."""
    prefix = f"tree_{direction}"
    row = {n: i for i, n in enumerate(tree.ids)}
    x_iou = ag.linear(embeddings, store[f"{prefix}.W_iou"], store[f"{prefix}.b_iou"])
    x_f = ag.linear(embeddings, store[f"{prefix}.W_f"], store[f"{prefix}.b_f"])
    if direction == "up":
        order = tree.postorder()
        preds = [[row[c] for c in tree.children[n]] for n in tree.ids]
    else:
        order = tree.preorder()
        preds = [[row[tree.parent(n)]] if tree.parent(n) != 0 else [] for n in tree.ids]
    H, _ = fused_tree_lstm(x_iou, x_f, store[f"{prefix}.U_iou"], store[f"{prefix}.U_f"],
                           [row[n] for n in order], preds)
    return H


def node_context(h_up: Tensor, h_down: Tensor) -> Tensor:
    return ag.concat([h_up, h_down])


def encode_bidirectional(store: ParameterStore, tree: ParseTree, embeddings: Tensor,
                         fused: bool = True) -> Tensor:
    """Hidden matrix ``[h_up; h_down]`` with one row per token (token order)."""
    if fused:
        return ag.concat([encode_direction(store, tree, embeddings, "up"),
                          encode_direction(store, tree, embeddings, "down")], axis=1)
    up = encode_tree(store, tree, embeddings, "up", fused=False)
    down = encode_tree(store, tree, embeddings, "down", fused=False)
    return ag.stack([node_context(up[n][1], down[n][1]) for n in tree.ids])
