"""Gradient-boosted-trees classifier predicting grid collapse (the done flag)
from a (state, action) pair, used by the surrogate environment in place of
the unsolvable-power-flow test.

Boosting follows the usual second-order formulation on logistic loss with
exact greedy splits over sorted unique feature values.  Hyperparameters
default to the tuned values this model card ships with: 2 estimators of
depth 5, learning rate 1, row subsampling 0.8658, no column subsampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid_model import NetworkSpec
from .oracle_env import OracleEnv


@dataclass
class GbtParams:
    n_estimators: int = 2
    max_depth: int = 5
    learning_rate: float = 1.0
    subsample: float = 0.8658
    colsample_bytree: float = 1.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    base_score: float = 0.5


class _Tree:
    """Flat-array regression tree: internal nodes carry (feature, threshold),
    leaves carry the boosting weight."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.value) - 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        value = np.asarray(self.value)
        node = np.zeros(x.shape[0], np.int64)
        active = feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            f = feature[node[idx]]
            goes_left = x[idx, f] <= threshold[node[idx]]
            node[idx] = np.where(goes_left, left[node[idx]], right[node[idx]])
            active = feature[node] >= 0
        return value[node]


def _best_split(x_col, g, h, reg_lambda, min_child_weight):
    """Exact greedy scan over one feature; returns (gain, threshold) or None."""
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    gs = np.cumsum(g[order])
    hs = np.cumsum(h[order])
    g_tot, h_tot = gs[-1], hs[-1]
    # candidate boundaries between distinct consecutive values
    cut = np.flatnonzero(xs[1:] > xs[:-1])
    if cut.size == 0:
        return None
    gl, hl = gs[cut], hs[cut]
    gr, hr = g_tot - gl, h_tot - hl
    ok = (hl >= min_child_weight) & (hr >= min_child_weight)
    if not np.any(ok):
        return None
    gain = (gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda)
            - g_tot ** 2 / (h_tot + reg_lambda))
    gain = np.where(ok, gain, -np.inf)
    best = int(np.argmax(gain))
    if not np.isfinite(gain[best]) or gain[best] <= 1e-12:
        return None
    thr = 0.5 * (xs[cut[best]] + xs[cut[best] + 1])
    return float(gain[best]), thr


def _grow_tree(x, g, h, params: GbtParams, columns) -> _Tree:
    tree = _Tree()

    def build(rows, depth):
        g_sum = g[rows].sum()
        h_sum = h[rows].sum()
        if depth >= params.max_depth or rows.size < 2:
            return tree.add_leaf(-g_sum / (h_sum + params.reg_lambda))
        best = None
        for f in columns:
            found = _best_split(x[rows, f], g[rows], h[rows],
                                params.reg_lambda, params.min_child_weight)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], f, found[1])
        if best is None:
            return tree.add_leaf(-g_sum / (h_sum + params.reg_lambda))
        _, f, thr = best
        node = tree.add_split(f, thr)
        goes_left = x[rows, f] <= thr
        tree.left[node] = build(rows[goes_left], depth + 1)
        tree.right[node] = build(rows[~goes_left], depth + 1)
        return node

    build(np.arange(x.shape[0]), 0)
    return tree


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class GbtModel:
    params: GbtParams = field(default_factory=GbtParams)
    trees: list = field(default_factory=list)
    fitted: bool = False

    def fit(self, x: np.ndarray, y: np.ndarray, seed: int = 0) -> "GbtModel":
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        classes = np.unique(y)
        if classes.size < 2:
            raise ValueError(f"dataset holds a single class {classes.tolist()}; cannot fit")
        rng = np.random.default_rng(seed)
        base = np.log(self.params.base_score / (1.0 - self.params.base_score))
        f = np.full(x.shape[0], base)
        n_cols = x.shape[1]
        self.trees = []
        for _ in range(self.params.n_estimators):
            p = _sigmoid(f)
            g = p - y
            h = p * (1.0 - p)
            rows = np.arange(x.shape[0])
            if self.params.subsample < 1.0:
                take = max(1, int(round(self.params.subsample * rows.size)))
                rows = np.sort(rng.choice(rows, size=take, replace=False))
            cols = np.arange(n_cols)
            if self.params.colsample_bytree < 1.0:
                take = max(1, int(round(self.params.colsample_bytree * n_cols)))
                cols = np.sort(rng.choice(cols, size=take, replace=False))
            tree = _grow_tree(x[rows], g[rows], h[rows], self.params, cols)
            self.trees.append(tree)
            f = f + self.params.learning_rate * tree.predict(x)
        self.fitted = True
        return self

    def decision(self, x: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("model is not fitted")
        x = np.atleast_2d(np.asarray(x, float))
        base = np.log(self.params.base_score / (1.0 - self.params.base_score))
        f = np.full(x.shape[0], base)
        for tree in self.trees:
            f += self.params.learning_rate * tree.predict(x)
        return f

    def predict(self, x: np.ndarray):
        """(probability, label) with the decision threshold at 0.5."""
        prob = _sigmoid(self.decision(x))
        return prob, (prob > 0.5).astype(np.int64)

    # -- structured-text model file ------------------------------------------

    def save(self, path):
        doc = {
            "kind": "gbt-terminal-classifier",
            "params": vars(self.params),
            "trees": [{
                "feature": t.feature, "threshold": t.threshold,
                "left": t.left, "right": t.right, "value": t.value,
            } for t in self.trees],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path) -> "GbtModel":
        with open(path) as fh:
            doc = json.load(fh)
        model = cls(params=GbtParams(**doc["params"]))
        for td in doc["trees"]:
            tree = _Tree()
            tree.feature = [int(v) for v in td["feature"]]
            tree.threshold = [float(v) for v in td["threshold"]]
            tree.left = [int(v) for v in td["left"]]
            tree.right = [int(v) for v in td["right"]]
            tree.value = [float(v) for v in td["value"]]
            model.trees.append(tree)
        model.fitted = True
        return model


def fit_gbt(features: np.ndarray, labels: np.ndarray,
            params: GbtParams | None = None, seed: int = 0) -> GbtModel:
    return GbtModel(params=params or GbtParams()).fit(features, labels, seed=seed)


def build_terminal_dataset(spec: NetworkSpec, target_size: int, seed: int,
                           terminal_fraction: float = 0.5,
                           max_transitions: int | None = None,
                           rollout_horizon: int = 288):
    """Random-policy rollouts, balanced between collapse and non-collapse rows.

    Keeps every transition that enters a terminal state plus a random
    selection of non-terminal transitions.  Features are
    [state vector, action vector]; the label marks grid collapse.
    """
    rng = np.random.default_rng(seed)
    env = OracleEnv(spec, horizon=rollout_horizon, reset_mode="uniform-random")
    low, high = spec.action_bounds()
    want_terminal = int(round(target_size * terminal_fraction))
    want_normal = target_size - want_terminal
    budget = max_transitions if max_transitions is not None else 60 * target_size

    terminal_rows = []
    normal_rows = []
    seen_normal = 0
    obs = env.reset(seed=int(rng.integers(2 ** 31)))
    steps = 0
    while len(terminal_rows) < want_terminal and steps < budget:
        action = rng.uniform(low, high)
        row = np.concatenate([obs, action])
        obs, _, done, truncated, _ = env.step(action)
        steps += 1
        if done:
            terminal_rows.append(row)
        else:
            # reservoir sample so kept non-terminal rows are uniform over the run
            seen_normal += 1
            if len(normal_rows) < want_normal:
                normal_rows.append(row)
            else:
                j = int(rng.integers(seen_normal))
                if j < want_normal:
                    normal_rows[j] = row
        if done or truncated:
            obs = env.reset(seed=int(rng.integers(2 ** 31)))

    if len(terminal_rows) < want_terminal:
        rate = len(terminal_rows) / max(1, steps)
        raise RuntimeError(
            f"only {len(terminal_rows)}/{want_terminal} terminal transitions found in "
            f"{steps} random steps (collapse rate {rate:.4f}); use a smaller target "
            "or harsher action ranges / weaker branches in the network config")
    if len(normal_rows) < want_normal:
        raise RuntimeError("not enough non-terminal transitions collected")

    features = np.vstack(terminal_rows + normal_rows)
    labels = np.concatenate([np.ones(len(terminal_rows)), np.zeros(len(normal_rows))])
    perm = rng.permutation(labels.size)
    return features[perm], labels[perm]
