"""Pure-Python scalar re-implementation of the model forward pass.

Deliberately shares no code with the package: plain lists, ``math`` and
explicit loops.  Parameters are read once as nested lists.
"""

import math


def _vec(a):
    return [float(v) for v in a]


def _mat(a):
    return [[float(v) for v in row] for row in a]


def matvec(W, x):
    return [sum(w * v for w, v in zip(row, x)) for row in W]


def vadd(*vs):
    return [sum(items) for items in zip(*vs)]


def vmul(a, b):
    return [x * y for x, y in zip(a, b)]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax(v):
    m = max(v)
    ex = [math.exp(x - m) for x in v]
    z = sum(ex)
    return [x / z for x in ex]


def l2norm(v, eps=1e-12):
    n = math.sqrt(sum(x * x for x in v))
    n = max(n, eps)
    return [x / n for x in v]


class ScalarModel:
    def __init__(self, store):
        self.p = {}
        for name, t in store.items():
            d = t.data
            self.p[name] = _mat(d) if d.ndim == 2 else _vec(d)

    # embeddings -------------------------------------------------------
    def embed(self, idx):
        w, p, d = idx
        return self.p["embed.word"][w] + self.p["embed.pos"][p] + self.p["embed.dep"][d]

    # tree lstm --------------------------------------------------------
    def cell(self, prefix, e, children):
        P = self.p
        d = len(P[f"{prefix}.b_f"])
        h_sum = [0.0] * d
        for _, h in children:
            h_sum = vadd(h_sum, h)
        pre = vadd(matvec(P[f"{prefix}.W_iou"], e), matvec(P[f"{prefix}.U_iou"], h_sum),
                   P[f"{prefix}.b_iou"])
        i = [sigmoid(x) for x in pre[:d]]
        o = [sigmoid(x) for x in pre[d:2 * d]]
        u = [math.tanh(x) for x in pre[2 * d:]]
        c = vmul(i, u)
        wf = vadd(matvec(P[f"{prefix}.W_f"], e), P[f"{prefix}.b_f"])
        for c_j, h_j in children:
            f = [sigmoid(x) for x in vadd(wf, matvec(P[f"{prefix}.U_f"], h_j))]
            c = vadd(c, vmul(f, c_j))
        h = vmul(o, [math.tanh(x) for x in c])
        return c, h

    def encode(self, nodes, heads, emb):
        """nodes: ids; heads: id -> parent id (0 root); emb: id -> vector."""
        kids = {n: sorted(m for m in nodes if heads[m] == n) for n in nodes}
        root = next(n for n in nodes if heads[n] == 0)
        up = {}

        def go_up(n):
            for k in kids[n]:
                go_up(k)
            up[n] = self.cell("tree_up", emb[n], [up[k] for k in kids[n]])

        go_up(root)
        down = {}

        def go_down(n):
            pred = [down[heads[n]]] if heads[n] != 0 else []
            down[n] = self.cell("tree_down", emb[n], pred)
            for k in kids[n]:
                go_down(k)

        go_down(root)
        return up, down, kids, root

    # language + scores ------------------------------------------------
    def attn_logit(self, head, h):
        P = self.p
        a = [math.tanh(x) for x in vadd(matvec(P[f"attn_{head}.W1"], h), P[f"attn_{head}.b1"])]
        return matvec(P[f"attn_{head}.W2"], a)[0] + P[f"attn_{head}.b2"][0]

    def score_single(self, x, y):
        P = self.p
        v = l2norm(vmul(vadd(matvec(P["single.W_in"], x), P["single.b_in"]), y))
        return matvec(P["single.W_out"], v)[0] + P["single.b_out"][0]

    def score_pair(self, x1, x2, y):
        P = self.p
        v = l2norm(vmul(vadd(matvec(P["pair.W_in"], list(x1) + list(x2)), P["pair.b_in"]), y))
        return matvec(P["pair.W_out"], v)[0] + P["pair.b_out"][0]

    def ground(self, nodes, heads, idx, regions, kinds):
        """Root score list for an assignment ``kinds`` (id -> 'Single'|'Sum'|'Comp')."""
        emb = {n: self.embed(idx[n]) for n in nodes}
        up, down, kids, root = self.encode(nodes, heads, emb)
        hid = {n: up[n][1] + down[n][1] for n in nodes}
        regions = [list(map(float, r)) for r in regions]
        K = len(regions)
        trace = {}

        def subtree(n):
            out = [n]
            for k in kids[n]:
                out += subtree(k)
            return out

        def rep(n, head):
            ns = subtree(n)
            alpha = softmax([self.attn_logit(head, hid[m]) for m in ns])
            y = [0.0] * len(emb[n])
            for a, m in zip(alpha, ns):
                y = vadd(y, [a * v for v in emb[m]])
            return y

        def run(n):
            child_scores = [run(k) for k in kids[n]]
            acc = [sum(s[i] for s in child_scores) for i in range(K)]
            kind = kinds[n]
            if kind == "Sum":
                out = acc
            else:
                y_s = rep(n, "s")
                single = [self.score_single(x, y_s) for x in regions]
                if kind == "Single":
                    out = [a + b for a, b in zip(single, acc)]
                else:
                    beta = softmax([a + b for a, b in zip(single, acc)])
                    xbar = [sum(beta[i] * regions[i][j] for i in range(K))
                            for j in range(len(regions[0]))]
                    y_p = rep(n, "p")
                    out = [self.score_pair(x, xbar, y_p) for x in regions]
                    trace[n] = {"beta": beta, "xbar": xbar}
            return out

        return run(root), trace
