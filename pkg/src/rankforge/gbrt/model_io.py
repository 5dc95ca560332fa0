"""Line-oriented text serialization of :class:`Ensemble`.

Layout (whitespace separated, one record per line)::

    rankforge-model 1
    objective xe_ndcg
    learning_rate <float>
    num_features <d>
    edges <feature> <count> <e_0> ... <e_{count-1}>     # d lines
    num_trees <T>
    tree <t> <num_nodes>
    <node> <feature> <bin> <left> <right> <value>       # num_nodes lines
    end

Floats are written with 17 significant digits so reloading is bit-exact.
Raw split thresholds are not stored; they are recovered from the edges.
"""

import os

import numpy as np

from ..exceptions import ModelFormatError
from .boosting import Ensemble
from .tree import RegressionTree

__all__ = ["FORMAT_VERSION", "dumps_model", "loads_model", "save_model", "load_model"]

MAGIC = "rankforge-model"
FORMAT_VERSION = 1


def _f(x):
    return format(float(x), ".17g")


def dumps_model(ensemble: Ensemble) -> str:
    out = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"objective {ensemble.objective}",
        f"learning_rate {_f(ensemble.learning_rate)}",
        f"num_features {ensemble.num_features}",
    ]
    for j, e in enumerate(ensemble.bin_edges):
        out.append(" ".join([f"edges {j} {len(e)}"] + [_f(v) for v in e]))
    out.append(f"num_trees {len(ensemble.trees)}")
    for t, tree in enumerate(ensemble.trees):
        out.append(f"tree {t} {tree.num_nodes}")
        for k in range(tree.num_nodes):
            out.append(
                f"{k} {tree.feature[k]} {tree.bin[k]} {tree.left[k]} {tree.right[k]} "
                f"{_f(tree.value[k])}"
            )
    out.append("end")
    return "\n".join(out) + "\n"


def _expect(tokens, key, n=None):
    if not tokens or tokens[0] != key or (n is not None and len(tokens) != n):
        raise ModelFormatError(f"expected '{key}' record, got {' '.join(tokens)!r}")
    return tokens


def loads_model(text: str) -> Ensemble:
    lines = iter([ln.split() for ln in text.splitlines() if ln.strip()])
    try:
        head = next(lines)
        if len(head) != 2 or head[0] != MAGIC:
            raise ModelFormatError("not a rankforge model file")
        if head[1] != str(FORMAT_VERSION):
            raise ModelFormatError(
                f"model format version {head[1]} is not supported (expected {FORMAT_VERSION})"
            )
        objective = _expect(next(lines), "objective", 2)[1]
        lr = float(_expect(next(lines), "learning_rate", 2)[1])
        d = int(_expect(next(lines), "num_features", 2)[1])
        edges = []
        for j in range(d):
            tok = _expect(next(lines), "edges")
            if int(tok[1]) != j or len(tok) != 3 + int(tok[2]):
                raise ModelFormatError(f"bad edges record for feature {j}")
            edges.append(np.array([float(v) for v in tok[3:]]))
        n_trees = int(_expect(next(lines), "num_trees", 2)[1])
        trees = []
        for t in range(n_trees):
            tok = _expect(next(lines), "tree", 3)
            n_nodes = int(tok[2])
            rows = [next(lines) for _ in range(n_nodes)]
            if any(len(r) != 6 for r in rows):
                raise ModelFormatError(f"bad node record in tree {t}")
            feature = np.array([int(r[1]) for r in rows], dtype=np.int64)
            bins = np.array([int(r[2]) for r in rows], dtype=np.int64)
            threshold = np.zeros(n_nodes)
            for k in np.flatnonzero(feature >= 0):
                threshold[k] = edges[feature[k]][bins[k]]
            trees.append(RegressionTree(
                feature, bins, threshold,
                np.array([int(r[3]) for r in rows], dtype=np.int64),
                np.array([int(r[4]) for r in rows], dtype=np.int64),
                np.array([float(r[5]) for r in rows]),
            ))
        _expect(next(lines), "end", 1)
    except StopIteration:
        raise ModelFormatError("truncated model file") from None
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt model file: {exc}") from None
    return Ensemble(trees, lr, edges, d, objective)


def save_model(ensemble: Ensemble, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(ensemble))
    os.replace(tmp, path)


def load_model(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
