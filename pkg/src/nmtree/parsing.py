"""Dependency-tree ingestion: a five-column CoNLL-U subset, validated trees,
pruning of function-word nodes, and vocabularies over words/POS/labels.

Columns are ``ID FORM UPOS HEAD DEPREL`` separated by tabs.  Blank lines end a
sentence, ``#`` lines are comments, and multiword ranges (``3-4``) are skipped.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

DEFAULT_PRUNE_POS = frozenset({"DET", "PUNCT", "SYM"})
OOV = "<unk>"


class ConlluError(ValueError):
    pass


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    word: str
    pos: str
    head: int
    dep: str

    def __post_init__(self):
        if self.head == self.index:
            raise TreeError(f"token {self.index} is its own head")


def parse_conllu(text: str) -> list[list[Token]]:
    sentences: list[list[Token]] = []
    current: list[Token] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if line.startswith("#"):
            continue
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        cols = line.split("\t")
        if len(cols) < 5:
            raise ConlluError(f"line {lineno}: expected 5 tab-separated columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            index = int(cols[0])
            head = int(cols[3])
        except ValueError:
            raise ConlluError(f"line {lineno}: non-integer ID or HEAD ({cols[0]!r}, {cols[3]!r})") from None
        try:
            current.append(Token(index, cols[1], cols[2], head, cols[4]))
        except TreeError as exc:
            raise ConlluError(f"line {lineno}: {exc}") from None
    if current:
        sentences.append(current)
    return sentences


def format_conllu(sentences: Iterable[Sequence[Token]]) -> str:
    blocks = []
    for tokens in sentences:
        lines = [f"{t.index}\t{t.word}\t{t.pos}\t{t.head}\t{t.dep}" for t in tokens]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


@dataclass
class ParseTree:
    """A validated rooted tree.  Node ids are the tokens' 1-based indices."""

    tokens: list[Token]
    root: int
    children: dict[int, list[int]] = field(repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def ids(self) -> list[int]:
        return [t.index for t in self.tokens]

    def token(self, node: int) -> Token:
        return self._by_id[node]

    def __post_init__(self):
        self._by_id = {t.index: t for t in self.tokens}

    def parent(self, node: int) -> int:
        return self._by_id[node].head

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def node_set(self, node: int) -> list[int]:
        """``node`` plus all its descendants, in token order."""
        out = []
        stack = [node]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.children[n])
        return sorted(out)

    def postorder(self) -> list[int]:
        order = []
        stack = [(self.root, False)]
        while stack:
            n, done = stack.pop()
            if done:
                order.append(n)
                continue
            stack.append((n, True))
            for c in reversed(self.children[n]):
                stack.append((c, False))
        return order

    def preorder(self) -> list[int]:
        order = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            order.append(n)
            stack.extend(reversed(self.children[n]))
        return order

    def depth(self) -> int:
        best = 0
        stack = [(self.root, 1)]
        while stack:
            n, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self.children[n])
        return best

    def to_conllu(self) -> str:
        return format_conllu([self.tokens])


def build_tree(tokens: Sequence[Token]) -> ParseTree:
    if not tokens:
        raise TreeError("cannot build a tree from zero tokens")
    tokens = sorted(tokens, key=lambda t: t.index)
    by_id = {}
    for t in tokens:
        if t.index in by_id:
            raise TreeError(f"duplicate token index {t.index}")
        by_id[t.index] = t
    roots = [t.index for t in tokens if t.head == 0]
    if not roots:
        raise TreeError("no root token (HEAD=0)")
    if len(roots) > 1:
        raise TreeError(f"multiple roots: {roots}")
    children: dict[int, list[int]] = {t.index: [] for t in tokens}
    for t in tokens:
        if t.head == 0:
            continue
        if t.head not in by_id:
            raise TreeError(f"token {t.index} points to missing head {t.head}")
        children[t.head].append(t.index)
    for t in tokens:
        # walk to the root; a walk longer than the sentence means a cycle
        seen = {t.index}
        cur = t.head
        while cur != 0:
            if cur in seen:
                raise TreeError(f"cycle through token {t.index}")
            seen.add(cur)
            cur = by_id[cur].head
    reached = set()
    stack = [roots[0]]
    while stack:
        n = stack.pop()
        reached.add(n)
        stack.extend(children[n])
    if len(reached) != len(tokens):
        missing = sorted(set(by_id) - reached)
        raise TreeError(f"tokens unreachable from root: {missing}")
    return ParseTree(list(tokens), roots[0], children)


def prune_tree(tree: ParseTree, prune_pos: Iterable[str] = DEFAULT_PRUNE_POS) -> ParseTree:
    """Drop nodes whose POS is in ``prune_pos``; orphans go to the nearest kept ancestor.

    Token indices are kept as-is, so surviving lines re-serialize unchanged
    except for HEAD when a parent was removed.  If the root itself would be
    removed, the tree is returned unchanged.
    """
    prune_pos = frozenset(prune_pos)
    if tree.token(tree.root).pos in prune_pos:
        return tree
    removed = {t.index for t in tree.tokens if t.pos in prune_pos}
    if not removed:
        return tree
    kept = []
    for t in tree.tokens:
        if t.index in removed:
            continue
        head = t.head
        while head in removed:
            head = tree.token(head).head
        kept.append(t if head == t.head else replace(t, head=head))
    return build_tree(kept)


def trees_isomorphic(a: ParseTree, b: ParseTree) -> bool:
    """Same labeled shape: compare canonical (word, pos, dep, sorted children) forms."""

    def canon(tree: ParseTree, n: int):
        t = tree.token(n)
        return (t.word, t.pos, t.dep, tuple(sorted(canon(tree, c) for c in tree.children[n])))

    return canon(a, a.root) == canon(b, b.root)


@dataclass(frozen=True)
class Vocabulary:
    """String -> index maps for words, POS tags and dependency labels; index 0 is OOV."""

    words: dict[str, int]
    pos: dict[str, int]
    deps: dict[str, int]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.words), len(self.pos), len(self.deps)

    def encode(self, token: Token) -> tuple[int, int, int]:
        return (self.words.get(token.word, 0), self.pos.get(token.pos, 0),
                self.deps.get(token.dep, 0))

    def to_dict(self) -> dict:
        def ordered(m):
            return [k for k, _ in sorted(m.items(), key=lambda kv: kv[1])]
        return {"words": ordered(self.words), "pos": ordered(self.pos), "deps": ordered(self.deps)}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        def index(items):
            if not items or items[0] != OOV:
                raise ValueError("vocabulary list must start with the OOV entry")
            return {s: i for i, s in enumerate(items)}
        return cls(index(d["words"]), index(d["pos"]), index(d["deps"]))


def _build_map(counts: Counter, min_count: int) -> dict[str, int]:
    items = sorted((k for k, c in counts.items() if c >= min_count and k != OOV),
                   key=lambda k: (-counts[k], k))
    out = {OOV: 0}
    for k in items:
        out[k] = len(out)
    return out


def build_vocab(corpus: Iterable[ParseTree], min_count: int = 2) -> Vocabulary:
    words, pos, deps = Counter(), Counter(), Counter()
    n = 0
    for tree in corpus:
        n += 1
        for t in tree.tokens:
            words[t.word] += 1
            pos[t.pos] += 1
            deps[t.dep] += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(_build_map(words, min_count), _build_map(pos, min_count),
                      _build_map(deps, min_count))


def encode_node(vocab: Vocabulary, token: Token) -> tuple[int, int, int]:
    return vocab.encode(token)
