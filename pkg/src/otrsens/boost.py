"""Deterministic gradient-boosted regression trees of depth 2.

A small, seedless stand-in for a flexible regression learner: squared-error
boosting over depth-2 trees whose candidate thresholds come from per-feature
quantile histograms. No subsampling, no randomness anywhere — two fits on the
same data are bit-identical, which the reproducibility contract requires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 300
    learning_rate: float = 0.1
    n_bins: int = 32
    min_leaf: int = 10


def _best_split(col, resid, order, min_leaf, thresholds):
    """Best variance-reducing threshold for one feature on one node.

    Returns (gain, threshold) or None. `order` is an argsort of col so the
    cumulative scan is O(n) after sorting once per node/feature.
    """
    cs = col[order]
    rs = resid[order]
    n = cs.shape[0]
    cum = np.concatenate([[0.0], np.cumsum(rs)])
    # position of each candidate threshold in the sorted column
    pos = np.searchsorted(cs, thresholds, side="right")
    ok = (pos >= min_leaf) & (pos <= n - min_leaf)
    if not np.any(ok):
        return None
    pos = pos[ok]
    thr = thresholds[ok]
    left_sum = cum[pos]
    right_sum = cum[-1] - left_sum
    score = left_sum**2 / pos + right_sum**2 / (n - pos)
    base = cum[-1] ** 2 / n
    gains = score - base
    k = int(np.argmax(gains))
    if gains[k] <= 1e-12:
        return None
    return float(gains[k]), float(thr[k])


def _fit_node(F, resid, idx, min_leaf, thresholds):
    """Best (feature, threshold) split of the rows in idx, or None."""
    best = None
    for j in range(F.shape[1]):
        col = F[idx, j]
        order = np.argsort(col, kind="stable")
        found = _best_split(col, resid[idx], order, min_leaf, thresholds[j])
        if found is None:
            continue
        gain, thr = found
        if best is None or gain > best[0] + 1e-15:
            best = (gain, j, thr)
    return best


@dataclass(frozen=True)
class _Tree:
    """Depth-2 tree stored as flat arrays: root split, optional child splits,
    and the (up to four) leaf values."""

    root_feat: int
    root_thr: float
    left_feat: int  # -1 means leaf
    left_thr: float
    right_feat: int
    right_thr: float
    values: np.ndarray  # (4,) leaf means: LL, LR, RL, RR

    def predict(self, F):
        go_right = F[:, self.root_feat] > self.root_thr
        out = np.empty(F.shape[0])
        left = ~go_right
        if self.left_feat < 0:
            out[left] = self.values[0]
        else:
            lr = F[left, self.left_feat] > self.left_thr
            out[left] = np.where(lr, self.values[1], self.values[0])
        if self.right_feat < 0:
            out[go_right] = self.values[2]
        else:
            rr = F[go_right, self.right_feat] > self.right_thr
            out[go_right] = np.where(rr, self.values[3], self.values[2])
        return out


def _grow_tree(F, resid, min_leaf, thresholds):
    n = F.shape[0]
    root = _fit_node(F, resid, np.arange(n), min_leaf, thresholds)
    if root is None:
        return None
    _, rj, rt = root
    left_idx = np.where(F[:, rj] <= rt)[0]
    right_idx = np.where(F[:, rj] > rt)[0]
    vals = np.zeros(4)
    lf, lt = -1, 0.0
    child = _fit_node(F, resid, left_idx, min_leaf, thresholds)
    if child is None:
        vals[0] = resid[left_idx].mean()
    else:
        _, lf, lt = child
        ll = left_idx[F[left_idx, lf] <= lt]
        lr = left_idx[F[left_idx, lf] > lt]
        vals[0] = resid[ll].mean()
        vals[1] = resid[lr].mean()
    rf, rt2 = -1, 0.0
    child = _fit_node(F, resid, right_idx, min_leaf, thresholds)
    if child is None:
        vals[2] = resid[right_idx].mean()
    else:
        _, rf, rt2 = child
        rl = right_idx[F[right_idx, rf] <= rt2]
        rr = right_idx[F[right_idx, rf] > rt2]
        vals[2] = resid[rl].mean()
        vals[3] = resid[rr].mean()
    return _Tree(rj, rt, lf, lt, rf, rt2, vals)


class BoostedStumps:
    """Fitted ensemble: base score plus learning-rate-scaled depth-2 trees."""

    def __init__(self, base, trees, lr):
        self.base = base
        self.trees = trees
        self.lr = lr

    def predict(self, F):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        out = np.full(F.shape[0], self.base)
        for t in self.trees:
            out += self.lr * t.predict(F)
        return out


def fit_boosted(F, target, config: BoostConfig = BoostConfig()):
    """Squared-error gradient boosting; deterministic for fixed inputs."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    target = np.asarray(target, dtype=float)
    n = F.shape[0]
    if n != target.shape[0]:
        raise ValueError("feature/target length mismatch")
    # quantile histogram edges, fixed once per fit
    qs = np.linspace(0, 1, config.n_bins + 1)[1:-1]
    thresholds = [np.unique(np.quantile(F[:, j], qs)) for j in range(F.shape[1])]
    base = float(target.mean())
    pred = np.full(n, base)
    trees = []
    for _ in range(config.n_rounds):
        resid = target - pred
        tree = _grow_tree(F, resid, config.min_leaf, thresholds)
        if tree is None:
            break
        trees.append(tree)
        pred += config.learning_rate * tree.predict(F)
    return BoostedStumps(base, trees, config.learning_rate)
