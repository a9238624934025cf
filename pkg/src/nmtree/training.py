"""Training loop, Top-1 evaluation and checkpoint persistence."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .assembler import ModuleKind
from .config import Config
from .model import NMTree
from .params import Adam, OptimizerState, ParameterStore
from .parsing import ParseTree, Vocabulary, build_vocab, prune_tree
from .synthetic import SynthExample, featurize_scene

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Example:
    tree: ParseTree
    features: np.ndarray
    target: int
    uid: int = 0


def prepare(examples: Iterable[SynthExample], config: Config) -> list[Example]:
    """Pruned trees plus noisy region features for each synthetic example."""
    out = []
    for i, ex in enumerate(examples):
        uid = int(ex.metadata.get("index", i))
        out.append(Example(prune_tree(ex.tree()), featurize_scene(ex, config), ex.target, uid))
    return out


def vocab_for(examples: Sequence[Example], config: Config) -> Vocabulary:
    return build_vocab((e.tree for e in examples), config.min_count)


@dataclass
class EpochStats:
    mean_loss: float
    accuracy: float
    steps: int


class NonFiniteLoss(FloatingPointError):
    pass


def train_epoch(model: NMTree, dataset: Sequence[Example], config: Config,
                rng: np.random.Generator, optimizer: Adam, lr: float) -> EpochStats:
    """One pass over ``dataset`` in seeded random mini-batches.

    The batch gradient is the mean of per-example gradients; one Adam step
    per batch.  Gumbel noise for each internal node is drawn from ``rng`` on
    every visit.
    """
    if not dataset:
        raise ValueError("empty training set")
    order = rng.permutation(len(dataset))
    store = model.store
    total_loss, correct, steps = 0.0, 0, 0
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        store.zero_grad()
        scale = 1.0 / len(batch)
        for i in batch:
            ex = dataset[int(i)]
            loss, fwd = model.loss(ex.tree, ex.features, ex.target, "train", rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss on example {ex.uid}")
            (loss * scale).backward()
            total_loss += value
            correct += int(fwd.prediction == ex.target)
        optimizer.step(store, lr)
        steps += 1
    n = len(dataset)
    return EpochStats(total_loss / n, correct / n, steps)


def predict_all(model: NMTree, dataset: Sequence[Example], threads: int = 1) -> list[int]:
    def run(ex):
        return model.predict(ex.tree, ex.features)

    if threads <= 1:
        return [run(ex) for ex in dataset]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, dataset))


def evaluate_top1(model: NMTree, dataset: Sequence[Example], threads: int = 1) -> float:
    """Fraction of examples whose noise-free argmax region equals the target."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict_all(model, dataset, threads)
    return sum(int(p == ex.target) for p, ex in zip(preds, dataset)) / len(dataset)


def module_frequencies(model: NMTree, dataset: Sequence[Example]) -> dict:
    """Inference-time Sum/Comp counts for internal nodes, keyed by POS and by dep label."""
    by_pos: dict[str, Counter] = defaultdict(Counter)
    by_dep: dict[str, Counter] = defaultdict(Counter)
    with ag.no_grad():
        for ex in dataset:
            fwd = model.forward(ex.tree, ex.features, "infer")
            for n, d in fwd.assignment.decisions.items():
                tok = ex.tree.token(n)
                by_pos[tok.pos][d.kind.value] += 1
                by_dep[tok.dep][d.kind.value] += 1
    return {"pos": {k: dict(v) for k, v in sorted(by_pos.items())},
            "dep": {k: dict(v) for k, v in sorted(by_dep.items())}}


def relation_comp_fraction(freqs: dict) -> float | None:
    """Share of ADP/VERB internal nodes assembled as Comp."""
    total = comp = 0
    for pos in ("ADP", "VERB"):
        counts = freqs["pos"].get(pos, {})
        total += sum(counts.values())
        comp += counts.get(ModuleKind.COMP.value, 0)
    return comp / total if total else None


def fit(config: Config, train: Sequence[Example], val: Sequence[Example] | None = None,
        vocab: Vocabulary | None = None, on_epoch: Callable[[dict], None] | None = None,
        epochs: int | None = None) -> tuple[NMTree, list[dict]]:
    """Train from scratch; returns the model and the per-epoch log records."""
    vocab = vocab or vocab_for(train, config)
    model = NMTree(config, vocab)
    rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(config.lr)
    history = []
    best, stale = -1.0, 0
    for epoch in range(epochs or config.epochs):
        lr = config.lr_at(epoch)
        stats = train_epoch(model, train, config, rng, optimizer, lr)
        record = {"epoch": epoch + 1, "mean_loss": stats.mean_loss, "train_acc": stats.accuracy,
                  "val_acc": evaluate_top1(model, val) if val else None, "lr": lr}
        history.append(record)
        log.info("epoch %d loss %.4f train %.3f val %s", epoch + 1, stats.mean_loss,
                 stats.accuracy, record["val_acc"])
        if on_epoch:
            on_epoch(record)
        if config.early_stop_patience and record["val_acc"] is not None:
            if record["val_acc"] > best:
                best, stale = record["val_acc"], 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    return model, history


# ---------------------------------------------------------------- checkpoints

class CheckpointError(ValueError):
    pass


def _blob_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def save_checkpoint(path: str | Path, model: NMTree, epoch: int = 0) -> None:
    """Write ``path`` (JSON manifest) and ``path`` with ``.bin`` (raw little-endian values).

    The blob holds each parameter then its Adam moments, in name order.
    """
    path = Path(path)
    store = model.store
    dtype = np.dtype(store.dtype).newbyteorder("<")
    entries, chunks, offset = [], [], 0
    for name, p in store.items():
        st = store.states.get(name)
        arrays = [p.data] + ([st.m, st.v] if st is not None else [])
        entry = {"name": name, "shape": list(p.shape), "offset": offset,
                 "step_count": st.step_count if st is not None else None}
        for a in arrays:
            raw = np.ascontiguousarray(a, dtype=dtype).tobytes()
            chunks.append(raw)
            offset += len(raw)
        entries.append(entry)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "dtype": "float64" if dtype.itemsize == 8 else "float32",
        "epoch": epoch,
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "parameters": entries,
        "blob_bytes": offset,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _blob_path(path).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")


def _expected_shapes(config: Config, vocab: Vocabulary) -> dict[str, tuple]:
    return {name: p.shape for name, p in NMTree(config, vocab).store.items()}


def load_checkpoint(path: str | Path) -> tuple[NMTree, int]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from None
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {manifest.get('version')!r} != {CHECKPOINT_VERSION}")
    config = Config.from_dict(manifest["config"])
    vocab = Vocabulary.from_dict(manifest["vocab"])
    dtype = np.dtype(manifest["dtype"]).newbyteorder("<")
    try:
        blob = _blob_path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read parameter blob: {exc}") from None
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"blob has {len(blob)} bytes, manifest expects {manifest['blob_bytes']}")
    expected = _expected_shapes(config, vocab)
    entries = {e["name"]: e for e in manifest["parameters"]}
    missing = sorted(set(expected) - set(entries))
    if missing:
        raise CheckpointError(f"checkpoint is missing parameter(s): {', '.join(missing)}")
    extra = sorted(set(entries) - set(expected))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected parameter(s): {', '.join(extra)}")
    store = ParameterStore(config.dtype)
    for name in sorted(expected):
        e = entries[name]
        shape = tuple(e["shape"])
        if shape != expected[name]:
            raise CheckpointError(f"parameter {name!r} has shape {shape}, model expects {expected[name]}")
        count = int(np.prod(shape))
        n_arrays = 1 if e["step_count"] is None else 3
        end = e["offset"] + n_arrays * count * dtype.itemsize
        if end > len(blob):
            raise CheckpointError(f"blob truncated while reading {name!r}")
        arrays = np.frombuffer(blob, dtype=dtype, count=n_arrays * count, offset=e["offset"])
        arrays = arrays.astype(config.dtype).reshape((n_arrays,) + shape)
        store.add(name, arrays[0].copy())
        if n_arrays == 3:
            store.states[name] = OptimizerState(arrays[1].copy(), arrays[2].copy(), int(e["step_count"]))
    return NMTree(config, vocab, store), int(manifest.get("epoch", 0))
