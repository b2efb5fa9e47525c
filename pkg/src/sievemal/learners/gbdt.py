"""Second-order gradient boosting with depth-wise binary trees.

Per round: g = p - y, h = p(1-p); splits maximize
gain = 1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)] and leaves take
weight -G/(H+l). Split candidates come from per-feature quantile bins
(up to 255 cut points) accumulated with weighted bincounts, which keeps
a 100x721 training run in the seconds range without changing semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateData
from .common import TrainConfig, log_loss, logistic_grad_hess, sigmoid32

MAX_BINS = 255


@dataclass(frozen=True)
class Tree:
    """Flattened binary tree; feature == -1 marks a leaf."""
    feature: np.ndarray    # int32
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64 leaf weights

    def predict_margin(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            node = 0
            while self.feature[node] >= 0:
                if X[i, self.feature[node]] <= self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[i] = self.value[node]
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int32),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.int32),
            right=np.array(d["right"], dtype=np.int32),
            value=np.array(d["value"], dtype=np.float64),
        )


@dataclass(frozen=True)
class GbdtModel:
    trees: tuple
    eta: float
    base_score: float
    config: TrainConfig
    n_features: int
    train_log_loss: tuple = ()

    def decision_margin(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.eta * tree.predict_margin(X)
        return margin

    def to_dict(self) -> dict:
        return {
            "kind": "gbdt",
            "eta": self.eta,
            "base_score": float(self.base_score),
            "n_features": self.n_features,
            "config": self.config.to_dict(),
            "train_log_loss": [float(v) for v in self.train_log_loss],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            eta=d["eta"],
            base_score=d["base_score"],
            config=TrainConfig.from_dict(d["config"]),
            n_features=d["n_features"],
            train_log_loss=tuple(d.get("train_log_loss", ())),
        )


def _bin_features(X: np.ndarray):
    """Quantile cut points per feature; binned[i,f] = index of first cut >= x."""
    n, d = X.shape
    cuts = []
    binned = np.empty((n, d), dtype=np.int32)
    for f in range(d):
        col = X[:, f]
        uniq = np.unique(col)
        if len(uniq) > MAX_BINS:
            qs = np.quantile(col, np.linspace(0, 1, MAX_BINS + 1)[1:-1])
            uniq = np.unique(qs)
        cuts_f = uniq.astype(np.float64)
        cuts.append(cuts_f)
        binned[:, f] = np.searchsorted(cuts_f, col, side="left")
    return cuts, binned


class _TreeBuilder:
    def __init__(self, cfg: TrainConfig):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.cfg = cfg

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
        )


def _best_split(binned, cuts, idx, g, h, columns, cfg):
    """Strict argmax over (gain); ties resolved to the smaller feature, then bin."""
    G = g[idx].sum()
    H = h[idx].sum()
    lam = cfg.reg_lambda
    parent = G * G / (H + lam)
    best = None  # (gain, feature, bin_index)
    sub = binned[idx]
    for f in columns:
        nb = len(cuts[f]) + 1
        if nb < 2:
            continue
        b = sub[:, f]
        gs = np.bincount(b, weights=g[idx], minlength=nb)
        hs = np.bincount(b, weights=h[idx], minlength=nb)
        GL = np.cumsum(gs)[:-1]
        HL = np.cumsum(hs)[:-1]
        GR = G - GL
        HR = H - HL
        ok = (HL >= cfg.min_child_hessian) & (HR >= cfg.min_child_hessian)
        if not ok.any():
            continue
        gains = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - parent)
        gains[~ok] = -np.inf
        bi = int(np.argmax(gains))
        gain = gains[bi]
        if gain > 1e-12 and (best is None or gain > best[0]):
            best = (float(gain), int(f), bi)
    return best, G, H


def _grow_tree(binned, cuts, g, h, columns, cfg) -> Tree:
    tb = _TreeBuilder(cfg)
    root = tb.add_node()
    frontier = [(root, np.arange(binned.shape[0]), 0)]
    lam = cfg.reg_lambda
    while frontier:
        node, idx, depth = frontier.pop(0)
        split = None
        if depth < cfg.max_depth:
            split, G, H = _best_split(binned, cuts, idx, g, h, columns, cfg)
        else:
            G, H = g[idx].sum(), h[idx].sum()
        if split is None:
            tb.value[node] = -G / (H + lam)
            continue
        _, f, bi = split
        tb.feature[node] = f
        tb.threshold[node] = float(cuts[f][bi])
        mask = binned[idx, f] <= bi
        li = tb.add_node()
        ri = tb.add_node()
        tb.left[node] = li
        tb.right[node] = ri
        frontier.append((li, idx[mask], depth + 1))
        frontier.append((ri, idx[~mask], depth + 1))
    return tb.build()


def train_gbdt(X, y, cfg: TrainConfig) -> GbdtModel:
    """Boosted logistic-loss trees; deterministic given (X, y, cfg)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DegenerateData("empty training matrix")
    if len(np.unique(y)) < 2:
        raise DegenerateData("training labels contain a single class")

    n, d = X.shape
    cuts, binned = _bin_features(X)
    rng = np.random.default_rng(cfg.seed)
    prior = y.mean()
    base_score = float(np.log(prior / (1.0 - prior)))
    margin = np.full(n, base_score)
    n_cols = max(1, int(np.ceil(cfg.colsample * d)))

    trees = []
    losses = []
    for _ in range(cfg.n_trees):
        g, h = logistic_grad_hess(margin, y)
        columns = np.sort(rng.choice(d, size=n_cols, replace=False))
        tree = _grow_tree(binned, cuts, g, h, columns, cfg)
        trees.append(tree)
        margin += cfg.eta * tree.predict_margin(X)
        losses.append(log_loss(margin, y))

    return GbdtModel(trees=tuple(trees), eta=cfg.eta, base_score=base_score,
                     config=cfg, n_features=d, train_log_loss=tuple(losses))


def predict_gbdt(model: GbdtModel, X) -> np.ndarray:
    """Scores in [0, 1]; float32 sigmoid so saturated margins yield exactly 1.0."""
    return sigmoid32(model.decision_margin(X))
