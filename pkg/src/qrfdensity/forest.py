"""Regression random forest whose leaves keep their training-row indices.

Keeping the indices (instead of only the leaf mean) is what lets a forest be
queried for a full weight vector over the training targets, from which the
mean prediction, the conditional CDF and every quantile follow.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import (
    EmptyInput,
    InvalidParameter,
    IoError,
    NoOobSamples,
    UnsupportedFormat,
)

FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, index: int) -> int:
    """SplitMix64 finalizer applied to (seed, index); order independent per tree."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ForestConfig:
    ntree: int = 500
    mtry: int | None = None  # None -> max(M // 3, 1)
    min_node_size: int = 5
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.ntree < 1:
            raise InvalidParameter("ntree must be >= 1")
        if self.min_node_size < 1:
            raise InvalidParameter("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidParameter("mtry must be >= 1")
        if not 0 <= self.seed <= _MASK64:
            raise InvalidParameter("seed must be a 64-bit unsigned integer")

    def resolved_mtry(self, n_features: int) -> int:
        mtry = max(n_features // 3, 1) if self.mtry is None else self.mtry
        if mtry > n_features:
            raise InvalidParameter(f"mtry={mtry} exceeds number of features {n_features}")
        return mtry


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat pre-order node arrays; ``feature[i] == -1`` marks a leaf.

    ``leaf_indices[i]`` holds the sorted unique training rows that landed in
    leaf ``i`` (empty for split nodes). ``inbag`` counts how often each
    training row was drawn for this tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_indices: tuple[np.ndarray, ...]
    inbag: np.ndarray
    tree_seed: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def apply(self, X) -> np.ndarray:
        """Leaf node id reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def leaf_means(self, targets: np.ndarray) -> np.ndarray:
        out = np.full(self.n_nodes, np.nan)
        for i in np.flatnonzero(self.is_leaf):
            out[i] = targets[self.leaf_indices[i]].mean()
        return out

    def oob_rows(self) -> np.ndarray:
        return np.flatnonzero(self.inbag == 0)

    def same_as(self, other: "Tree") -> bool:
        return (
            self.tree_seed == other.tree_seed
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.inbag, other.inbag)
            and len(self.leaf_indices) == len(other.leaf_indices)
            and all(np.array_equal(a, b) for a, b in zip(self.leaf_indices, other.leaf_indices))
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    train_targets: np.ndarray
    train_features: np.ndarray
    config: ForestConfig
    feature_names: tuple[str, ...]

    @property
    def n_train(self) -> int:
        return len(self.train_targets)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def same_as(self, other: "Forest") -> bool:
        return (
            self.config == other.config
            and self.feature_names == other.feature_names
            and np.array_equal(self.train_targets, other.train_targets)
            and np.array_equal(self.train_features, other.train_features)
            and len(self.trees) == len(other.trees)
            and all(a.same_as(b) for a, b in zip(self.trees, other.trees))
        )


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: tuple[str, ...]
    pct_inc_mse: np.ndarray
    ranks: np.ndarray
    trees_used: int = 0

    def rows(self) -> list[tuple[str, int, float]]:
        """(feature, rank, %IncMSE) in the original feature order."""
        return [(n, int(r), float(v)) for n, r, v in zip(self.feature_names, self.ranks, self.pct_inc_mse)]


# --- growing -----------------------------------------------------------------

def _best_split(X, y, idx, features, min_leaf):
    """Lowest total child SSE over candidate features; ties keep the first found.

    Both children must hold at least ``min_leaf`` rows.
    """
    best = None  # (sse, feature, threshold)
    for f in features:
        xv = X[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1]) + 1  # left-child sizes
        valid = valid[(valid >= min_leaf) & (valid <= len(xs) - min_leaf)]
        if valid.size == 0:
            continue
        ys = y[idx][order]
        ys = ys - ys.mean()
        n = len(ys)
        cs = np.cumsum(ys)
        cs2 = np.cumsum(ys * ys)
        n_left = valid.astype(float)
        sum_l, sq_l = cs[valid - 1], cs2[valid - 1]
        sum_r, sq_r = cs[-1] - sum_l, cs2[-1] - sq_l
        sse = (sq_l - sum_l**2 / n_left) + (sq_r - sum_r**2 / (n - n_left))
        k = int(np.argmin(sse))
        if best is None or sse[k] < best[0]:
            i = valid[k]
            thr = 0.5 * (xs[i - 1] + xs[i])
            if not xs[i - 1] <= thr < xs[i]:
                thr = xs[i - 1]
            best = (sse[k], int(f), float(thr))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig, mtry: int, tree_seed: int) -> Tree:
    n, m = X.shape
    rng = np.random.Generator(np.random.PCG64(tree_seed))
    if config.bootstrap:
        sample = rng.integers(0, n, size=n)
    else:
        sample = np.arange(n)
    inbag = np.bincount(sample, minlength=n).astype(np.int32)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaves: list[np.ndarray] = []
    empty = np.empty(0, dtype=np.int64)

    # (rows, parent id, True if right child); right pushed first so pre-order holds
    stack = [(np.sort(sample), -1, False)]
    while stack:
        idx, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        split = None
        if len(idx) >= 2 * config.min_node_size and np.ptp(y[idx]) > 0:
            candidates = np.sort(rng.choice(m, size=mtry, replace=False))
            split = _best_split(X, y, idx, candidates, config.min_node_size)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        if split is None:
            leaves.append(np.unique(idx))
            continue
        _, f, thr = split
        feature[node], threshold[node] = f, thr
        leaves.append(empty)
        goes_left = X[idx, f] <= thr
        stack.append((idx[~goes_left], node, True))
        stack.append((idx[goes_left], node, False))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_indices=tuple(leaves),
        inbag=inbag,
        tree_seed=tree_seed,
    )


def _grow_chunk(args):
    X, y, config, mtry, seeds = args
    return [_grow_tree(X, y, config, mtry, s) for s in seeds]


def fit(train: Dataset, config: ForestConfig = ForestConfig(), n_jobs: int = 1) -> Forest:
    """Grow ``config.ntree`` CART regression trees.

    Tree ``i`` is seeded from ``mix_seed(config.seed, i)``, so the result does
    not depend on ``n_jobs`` or on scheduling.
    """
    X = np.asarray(train.features, dtype=float)
    y = np.asarray(train.target, dtype=float)
    if len(y) == 0:
        raise EmptyInput("training set is empty")
    mtry = config.resolved_mtry(X.shape[1])
    seeds = [mix_seed(config.seed, i) for i in range(config.ntree)]

    if n_jobs > 1 and config.ntree > 1:
        chunks = [seeds[i::n_jobs] for i in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(_grow_chunk, [(X, y, config, mtry, c) for c in chunks]))
        trees = [None] * config.ntree
        for j, chunk in enumerate(grown):
            trees[j::n_jobs] = chunk
    else:
        trees = [_grow_tree(X, y, config, mtry, s) for s in seeds]

    return Forest(
        trees=tuple(trees),
        train_targets=_readonly(y),
        train_features=_readonly(X),
        config=config,
        feature_names=tuple(train.feature_names),
    )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --- weights and predictions -------------------------------------------------

def _as_queries(forest: Forest, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != forest.n_features:
        raise InvalidParameter(f"query has {X.shape[1]} coordinates, forest expects {forest.n_features}")
    return X


def tree_weights(tree: Tree, x, n_train: int) -> np.ndarray:
    """1/|leaf| on every training row sharing x's leaf, 0 elsewhere."""
    leaf = int(tree.apply(np.asarray(x, dtype=float).reshape(1, -1))[0])
    members = tree.leaf_indices[leaf]
    w = np.zeros(n_train)
    w[members] = 1.0 / len(members)
    return w


def forest_weights_matrix(forest: Forest, X) -> np.ndarray:
    """Weight vectors for many query rows at once, shape (n_queries, n_train)."""
    X = _as_queries(forest, X)
    W = np.zeros((len(X), forest.n_train))
    for tree in forest.trees:
        leaf_of = tree.apply(X)
        for leaf in np.unique(leaf_of):
            rows = np.flatnonzero(leaf_of == leaf)
            members = tree.leaf_indices[leaf]
            W[np.ix_(rows, members)] += 1.0 / len(members)
    W /= len(forest.trees)
    return W


def forest_weights(forest: Forest, x) -> np.ndarray:
    """Mean of the per-tree weight vectors at a single query point."""
    return forest_weights_matrix(forest, np.asarray(x, dtype=float).reshape(1, -1))[0]


def predict_mean(forest: Forest, x) -> float:
    return float(forest_weights(forest, x) @ forest.train_targets)


def predict_mean_many(forest: Forest, X) -> np.ndarray:
    return forest_weights_matrix(forest, X) @ forest.train_targets


# --- importance ----------------------------------------------------------------

def permutation_importance(forest: Forest, train: Dataset) -> ImportanceReport:
    """Out-of-bag permutation importance, reported as a relative MSE increase.

    For each tree and feature, the tree's OOB rows have that feature shuffled
    (seeded from the tree seed and feature index) and the OOB MSE is compared
    with the unshuffled one. Trees without OOB rows, or with a zero OOB MSE,
    are skipped.
    """
    X = np.asarray(train.features, dtype=float)
    y = np.asarray(train.target, dtype=float)
    if X.shape != forest.train_features.shape:
        raise InvalidParameter("train does not match the data the forest was fitted on")
    m = X.shape[1]
    ratios = np.zeros(m)
    used = 0
    for t, tree in enumerate(forest.trees):
        oob = tree.oob_rows()
        if oob.size == 0:
            continue
        values = tree.leaf_means(forest.train_targets)
        base = float(np.mean((y[oob] - values[tree.apply(X[oob])]) ** 2))
        if base == 0.0:
            continue
        used += 1
        for j in range(m):
            rng = np.random.Generator(np.random.PCG64(mix_seed(tree.tree_seed, j)))
            Xp = X[oob].copy()
            Xp[:, j] = Xp[rng.permutation(oob.size), j]
            perm = float(np.mean((y[oob] - values[tree.apply(Xp)]) ** 2))
            ratios[j] += (perm - base) / base
    if used == 0:
        raise NoOobSamples("no tree has out-of-bag rows; fit with bootstrap enabled")
    ratios /= used
    order = np.argsort(-ratios, kind="stable")
    ranks = np.empty(m, dtype=np.int64)
    ranks[order] = np.arange(1, m + 1)
    return ImportanceReport(tuple(forest.feature_names), ratios, ranks, used)


# --- partial dependence ----------------------------------------------------------

def default_grid(data: Dataset, feature: int, points: int = 25) -> np.ndarray:
    col = data.features[:, feature]
    return np.linspace(col.min(), col.max(), points)


def partial_dependence(forest: Forest, data: Dataset, feature: int, grid: Sequence[float] | None = None):
    """Average prediction over ``data`` with ``feature`` pinned at each grid value."""
    if grid is None:
        grid = default_grid(data, feature)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyInput("grid is empty")
    base = np.asarray(data.features, dtype=float)
    n = len(base)
    stacked = np.repeat(base[None], len(grid), axis=0)
    stacked[:, :, feature] = grid[:, None]
    preds = predict_mean_many(forest, stacked.reshape(-1, base.shape[1])).reshape(len(grid), n)
    return list(zip(grid.tolist(), preds.mean(axis=1).tolist()))


def partial_dependence_2d(forest: Forest, data: Dataset, feature_a: int, feature_b: int,
                          grid_a: Sequence[float] | None = None,
                          grid_b: Sequence[float] | None = None) -> np.ndarray:
    """Matrix ``[i, j]`` = mean prediction with a = grid_a[i] and b = grid_b[j]."""
    grid_a = default_grid(data, feature_a) if grid_a is None else np.asarray(grid_a, dtype=float)
    grid_b = default_grid(data, feature_b) if grid_b is None else np.asarray(grid_b, dtype=float)
    if grid_a.size == 0 or grid_b.size == 0:
        raise EmptyInput("grid is empty")
    base = np.asarray(data.features, dtype=float)
    n, m = base.shape
    stacked = np.broadcast_to(base, (grid_a.size, grid_b.size, n, m)).copy()
    stacked[..., feature_a] = grid_a[:, None, None]
    stacked[..., feature_b] = grid_b[None, :, None]
    preds = predict_mean_many(forest, stacked.reshape(-1, m))
    return preds.reshape(grid_a.size, grid_b.size, n).mean(axis=2)


# --- persistence -------------------------------------------------------------------

def _tree_to_dict(tree: Tree) -> dict:
    nodes = []
    for i in range(tree.n_nodes):
        if tree.feature[i] < 0:
            nodes.append({"id": i, "leaf": tree.leaf_indices[i].tolist()})
        else:
            nodes.append({
                "id": i,
                "feature": int(tree.feature[i]),
                "threshold": float(tree.threshold[i]),
                "left": int(tree.left[i]),
                "right": int(tree.right[i]),
            })
    return {"tree_seed": tree.tree_seed, "inbag": tree.inbag.tolist(), "nodes": nodes}


def _tree_from_dict(d: dict) -> Tree:
    nodes = d["nodes"]
    if [nd["id"] for nd in nodes] != list(range(len(nodes))):
        raise UnsupportedFormat("tree nodes must be listed in pre-order with ids 0..k-1")
    k = len(nodes)
    feature = np.full(k, -1, dtype=np.int64)
    threshold = np.zeros(k)
    left = np.full(k, -1, dtype=np.int64)
    right = np.full(k, -1, dtype=np.int64)
    leaves = []
    for i, nd in enumerate(nodes):
        if "leaf" in nd:
            leaves.append(np.asarray(nd["leaf"], dtype=np.int64))
            continue
        feature[i], threshold[i] = nd["feature"], nd["threshold"]
        left[i], right[i] = nd["left"], nd["right"]
        leaves.append(np.empty(0, dtype=np.int64))
    return Tree(
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        leaf_indices=tuple(leaves),
        inbag=np.asarray(d["inbag"], dtype=np.int32),
        tree_seed=int(d["tree_seed"]),
    )


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": asdict(forest.config),
        "feature_names": list(forest.feature_names),
        "train_targets": forest.train_targets.tolist(),
        "train_features": forest.train_features.tolist(),
        "trees": [_tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(d: dict) -> Forest:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"unknown model format_version {version!r}")
    names = tuple(d["feature_names"])
    features = np.asarray(d["train_features"], dtype=float).reshape(-1, len(names))
    return Forest(
        trees=tuple(_tree_from_dict(t) for t in d["trees"]),
        train_targets=_readonly(d["train_targets"]),
        train_features=_readonly(features),
        config=ForestConfig(**d["config"]),
        feature_names=names,
    )


def save(forest: Forest, path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(forest), separators=(",", ":")) + "\n", encoding="utf-8")


def load(path) -> Forest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UnsupportedFormat(f"model {path} is not valid JSON: {exc}") from exc
    return forest_from_dict(doc)
