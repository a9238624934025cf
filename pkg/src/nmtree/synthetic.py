"""Synthetic compositional grounding: random scenes of attributed regions and
dependency-parsed referring expressions with a set-semantics resolver.

Grammar::

    NP  -> [color] [size] CATEGORY [REL NP]

Modifiers hang off the head noun as ``amod``; a relation word hangs off the
head noun (``prep`` for the four directions, ``acl`` for ``nearest-to``) and
takes the object noun as ``pobj``.  Positions use image coordinates: ``x``
grows rightward, ``y`` grows downward, so ``above`` means a smaller ``y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import Config
from .parsing import ParseTree, Token, build_tree, format_conllu, prune_tree

RELATIONS = ("left-of", "right-of", "above", "below", "nearest-to")
RELATION_TAGS = {
    "left-of": ("ADP", "prep"),
    "right-of": ("ADP", "prep"),
    "above": ("ADP", "prep"),
    "below": ("ADP", "prep"),
    "nearest-to": ("VERB", "acl"),
}
MIN_DISTANCE = 0.05
MAX_TRIES = 1000


class OracleError(ValueError):
    pass


class _Ambiguous:
    def __repr__(self) -> str:
        return "AMBIGUOUS"


AMBIGUOUS = _Ambiguous()


def _sig9(v: float) -> float:
    return float(f"{v:.9g}")


@dataclass(frozen=True)
class Region:
    category: str
    color: str
    size: str
    x: float
    y: float

    def to_dict(self) -> dict:
        return {"category": self.category, "color": self.color, "size": self.size,
                "x": self.x, "y": self.y}


@dataclass
class SynthExample:
    regions: list[Region]
    tokens: list[Token]
    target: int
    metadata: dict = field(default_factory=dict)

    @property
    def words(self) -> list[str]:
        return [t.word for t in self.tokens]

    def tree(self) -> ParseTree:
        return build_tree(self.tokens)

    def to_json(self) -> str:
        return json.dumps({
            "scene": {"regions": [r.to_dict() for r in self.regions]},
            "expression": [{"id": t.index, "form": t.word, "upos": t.pos, "head": t.head,
                            "deprel": t.dep} for t in self.tokens],
            "target": self.target,
            "metadata": self.metadata,
        }, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> SynthExample:
        regions = [Region(r["category"], r["color"], r["size"], float(r["x"]), float(r["y"]))
                   for r in d["scene"]["regions"]]
        tokens = [Token(int(t["id"]), t["form"], t["upos"], int(t["head"]), t["deprel"])
                  for t in d["expression"]]
        return cls(regions, tokens, int(d["target"]), dict(d.get("metadata", {})))


# ---------------------------------------------------------------- scenes

def gen_scene(rng: np.random.Generator, K: int, config: Config) -> list[Region]:
    if K < 2:
        raise ValueError(f"a scene needs at least 2 regions, got {K}")
    points: list[tuple[float, float]] = []
    while len(points) < K:
        x, y = _sig9(float(rng.random())), _sig9(float(rng.random()))
        if all(math.hypot(x - px, y - py) >= MIN_DISTANCE for px, py in points):
            points.append((x, y))
    regions = []
    for x, y in points:
        regions.append(Region(config.categories[rng.integers(len(config.categories))],
                              config.colors[rng.integers(len(config.colors))],
                              config.sizes[rng.integers(len(config.sizes))], x, y))
    return regions


# ---------------------------------------------------------------- phrases

@dataclass
class Phrase:
    category: str
    color: str | None = None
    size: str | None = None
    relation: str | None = None
    obj: Phrase | None = None

    def num_relations(self) -> int:
        return 0 if self.obj is None else 1 + self.obj.num_relations()


def render(phrase: Phrase, determiners: bool = False) -> list[Token]:
    tokens: list[Token] = []

    def emit(p: Phrase, head: int, dep: str) -> None:
        start = len(tokens) + 1
        mods = [(w, "ADJ") for w in (p.color, p.size) if w is not None]
        noun = start + len(mods) + (1 if determiners else 0)
        if determiners:
            tokens.append(Token(len(tokens) + 1, "the", "DET", noun, "det"))
        for w, pos in mods:
            tokens.append(Token(len(tokens) + 1, w, pos, noun, "amod"))
        tokens.append(Token(noun, p.category, "NOUN", head, dep))
        if p.obj is not None:
            pos, rel_dep = RELATION_TAGS[p.relation]
            rel = len(tokens) + 1
            tokens.append(Token(rel, p.relation, pos, noun, rel_dep))
            emit(p.obj, rel, "pobj")

    emit(phrase, 0, "root")
    return tokens


# ---------------------------------------------------------------- oracle

def _holds(relation: str, cand: Region, obj: Region) -> bool:
    if relation == "left-of":
        return cand.x < obj.x
    if relation == "right-of":
        return cand.x > obj.x
    if relation == "above":
        return cand.y < obj.y
    if relation == "below":
        return cand.y > obj.y
    raise OracleError(f"unknown relation {relation!r}")


def apply_relation(relation: str, candidates: set[int], objects: set[int],
                   regions: Sequence[Region]) -> set[int]:
    cands = candidates - objects
    if relation == "nearest-to":
        if not cands or not objects:
            return set()

        def dist(i):
            return min(math.hypot(regions[i].x - regions[o].x, regions[i].y - regions[o].y)
                       for o in objects)

        return {min(sorted(cands), key=dist)}
    return {i for i in cands if any(_holds(relation, regions[i], regions[o]) for o in objects)}


def denote(tree: ParseTree, node: int, regions: Sequence[Region], config: Config) -> set[int]:
    """Set of region indices a noun node refers to."""
    tok = tree.token(node)
    if tok.word not in config.categories:
        raise OracleError(f"token {tok.index} ({tok.word!r}) is not a category noun")
    out = {i for i, r in enumerate(regions) if r.category == tok.word}
    for c in tree.children[node]:
        child = tree.token(c)
        if child.word in config.colors:
            out = {i for i in out if regions[i].color == child.word}
        elif child.word in config.sizes:
            out = {i for i in out if regions[i].size == child.word}
        elif child.word in RELATIONS:
            objs = [o for o in tree.children[c] if tree.token(o).pos != "DET"]
            if len(objs) != 1:
                raise OracleError(f"relation {child.word!r} needs exactly one object, got {len(objs)}")
            out = apply_relation(child.word, out, denote(tree, objs[0], regions, config), regions)
        elif child.pos == "DET":
            continue
        else:
            raise OracleError(f"unknown token {child.word!r}")
    return out


def oracle_resolve(tree: ParseTree, regions: Sequence[Region], config: Config):
    """Unique referent index, or ``AMBIGUOUS`` when zero or several regions survive."""
    found = denote(tree, tree.root, regions, config)
    return next(iter(found)) if len(found) == 1 else AMBIGUOUS


def _denote_phrase(p: Phrase, regions: Sequence[Region]) -> set[int]:
    out = {i for i, r in enumerate(regions) if r.category == p.category
           and (p.color is None or r.color == p.color) and (p.size is None or r.size == p.size)}
    if p.obj is not None:
        out = apply_relation(p.relation, out, _denote_phrase(p.obj, regions), regions)
    return out


def _bare(p: Phrase) -> Phrase:
    return Phrase(p.category, p.color, p.size)


# ---------------------------------------------------------------- generation

def _random_phrase(rng: np.random.Generator, region: Region) -> Phrase:
    color = region.color if rng.random() < 0.5 else None
    size = region.size if rng.random() < 0.5 else None
    return Phrase(region.category, color, size)


def _gen_phrase(rng: np.random.Generator, regions: Sequence[Region], depth: int) -> tuple[Phrase, int] | None:
    """Phrase of ``depth`` with a unique referent.  Relational phrases must need
    their relation: the head noun group alone is ambiguous."""
    K = len(regions)
    for _ in range(MAX_TRIES):
        target = int(rng.integers(K))
        head = _random_phrase(rng, regions[target])
        if depth == 1:
            if _denote_phrase(head, regions) == {target}:
                return head, target
            continue
        if len(_denote_phrase(head, regions)) < 2:
            continue
        sub = _gen_phrase(rng, [r for r in regions], depth - 1)
        if sub is None:
            return None
        obj, obj_idx = sub
        if obj_idx == target:
            continue
        head.relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
        head.obj = obj
        if _denote_phrase(head, regions) == {target}:
            return head, target
    return None


def gen_expression(rng: np.random.Generator, regions: Sequence[Region], depth: int,
                   config: Config) -> SynthExample | None:
    """One example over a fixed scene, or None after too many rejections."""
    if depth not in (1, 2, 3):
        raise ValueError(f"depth must be 1, 2 or 3, got {depth}")
    found = _gen_phrase(rng, regions, depth)
    if found is None:
        return None
    phrase, target = found
    tokens = render(phrase, config.determiners)
    meta = {"depth": depth, "relations": phrase.num_relations()}
    return SynthExample(list(regions), tokens, target, meta)


def generate_example(seed: int, index: int, config: Config) -> SynthExample:
    """Example ``index`` of the stream for ``seed``; independent of other indices."""
    rng = np.random.default_rng([seed, index])
    depth = int(rng.integers(1, config.max_depth + 1))
    while True:
        regions = gen_scene(rng, config.num_regions, config)
        ex = gen_expression(rng, regions, depth, config)
        if ex is not None:
            ex.metadata.update(seed=seed, index=index)
            return ex


def generate_dataset(seed: int, num: int, config: Config, start: int = 0) -> list[SynthExample]:
    return [generate_example(seed, i, config) for i in range(start, start + num)]


# ---------------------------------------------------------------- features

def feature_layout(config: Config) -> dict[str, slice]:
    C, L, S = len(config.categories), len(config.colors), len(config.sizes)
    return {"category": slice(0, C), "color": slice(C, C + L), "size": slice(C + L, C + L + S),
            "position": slice(C + L + S, C + L + S + 2)}


def featurize_region(region: Region, config: Config, rng: np.random.Generator | None = None,
                     noise: float | None = None) -> np.ndarray:
    layout = feature_layout(config)
    need = layout["position"].stop
    if config.d_x < need:
        raise ValueError(f"d_x={config.d_x} too small; need at least {need}")
    v = np.zeros(config.d_x)
    v[layout["category"].start + config.categories.index(region.category)] = 1.0
    v[layout["color"].start + config.colors.index(region.color)] = 1.0
    v[layout["size"].start + config.sizes.index(region.size)] = 1.0
    v[layout["position"]] = (region.x, region.y)
    sigma = config.feature_noise if noise is None else noise
    if sigma > 0:
        if rng is None:
            raise ValueError("feature noise needs an rng")
        v = v + rng.normal(0.0, sigma, size=config.d_x)
    return v


def featurize_scene(example: SynthExample, config: Config) -> np.ndarray:
    """Region features with noise seeded by the example's (seed, index)."""
    meta = example.metadata
    rng = np.random.default_rng([int(meta.get("seed", 0)), int(meta.get("index", 0)), 1])
    return np.stack([featurize_region(r, config, rng) for r in example.regions])


def decode_region(vec: np.ndarray, config: Config) -> tuple[str, str, str]:
    layout = feature_layout(config)
    return (config.categories[int(np.argmax(vec[layout["category"]]))],
            config.colors[int(np.argmax(vec[layout["color"]]))],
            config.sizes[int(np.argmax(vec[layout["size"]]))])


# ---------------------------------------------------------------- I/O

class DatasetError(ValueError):
    pass


def write_dataset(path: str | Path, examples: Iterable[SynthExample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(ex.to_json() + "\n")
            n += 1
    return n


def read_dataset(path: str | Path) -> list[SynthExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                for key in ("scene", "expression", "target"):
                    if key not in d:
                        raise KeyError(key)
                out.append(SynthExample.from_dict(d))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed example ({exc})") from None
    return out


def validate_dataset(examples: Sequence[SynthExample], config: Config) -> list[tuple[int, str]]:
    """(position, message) for every example whose target disagrees with the oracle."""
    problems = []
    for i, ex in enumerate(examples):
        try:
            got = oracle_resolve(prune_tree(ex.tree()), ex.regions, config)
        except (OracleError, ValueError) as exc:
            problems.append((i, str(exc)))
            continue
        if got is AMBIGUOUS:
            problems.append((i, "expression is ambiguous in its scene"))
        elif got != ex.target:
            problems.append((i, f"target {ex.target} but oracle resolves to {got}"))
    return problems


def export_conllu(examples: Iterable[SynthExample]) -> str:
    return format_conllu(ex.tokens for ex in examples)
