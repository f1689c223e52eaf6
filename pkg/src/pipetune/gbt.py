"""Gradient-boosted decision trees with regression and pairwise ranking objectives.

Trees are depth-limited binary trees grown by exact greedy search over sorted
unique feature values. Both objectives share one builder through per-row
gradient/hessian statistics: squared error uses unit hessians and zero
regularization, which reduces the split gain to variance reduction and leaf
values to mean residuals; the pairwise ranking objective accumulates logistic
gradients over within-group preference pairs and takes Newton leaf steps.
Determinism: ties in split gain break to the lowest feature index, then the
lowest threshold, and all randomness flows from explicit seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin

from .validation import check_matrix, check_vector

_MIN_GAIN = 1e-12
_SERIAL_VERSION = 1


class NoPairsError(ValueError):
    """Ranking supervision is empty: no within-group pair has distinct targets."""


@dataclass
class _Tree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


class _SplitContext:
    """Per-fit value binning shared by every tree grown on one matrix.

    Features with at most ``max_bins`` distinct values get one bin per value
    (the greedy scan over boundaries is then exact); denser features are
    quantile-binned at actual data values. A node accumulates its
    gradient/hessian histograms over all features at once, so the scan runs
    over cumulative bin sums instead of per-node sorts. Bin order is
    feature-major then value-ascending, which makes the first index among
    tied gains exactly the required tie-break (lowest feature index, then
    lowest threshold). Split thresholds are the bin upper-edge values and
    rows with feature value <= threshold go left.
    """

    def __init__(self, X: np.ndarray, max_bins: int = 256):
        self.X = X
        n, n_features = X.shape
        cuts: list[np.ndarray] = []
        for f in range(n_features):
            uniq = np.unique(X[:, f])
            if len(uniq) <= max_bins:
                cuts.append(uniq[:-1])
            else:
                qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
                cuts.append(np.unique(np.quantile(X[:, f], qs, method="lower")))
        sizes = np.asarray([len(c) + 1 for c in cuts])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        total = int(sizes.sum())
        self.total_bins = total
        codes = np.empty((n, n_features), dtype=np.int64)
        thresholds = np.zeros(total)
        is_last = np.zeros(total, dtype=bool)
        bin_feature = np.zeros(total, dtype=np.int64)
        for f, cut in enumerate(cuts):
            codes[:, f] = np.searchsorted(cut, X[:, f], side="left")
            off = self.offsets[f]
            bin_feature[off : off + sizes[f]] = f
            is_last[off + sizes[f] - 1] = True
            thresholds[off : off + len(cut)] = cut
        self.codes = codes
        self.flat_codes = codes + self.offsets[None, :]
        self.bin_feature = bin_feature
        self.is_last = is_last
        self.thresholds = thresholds
        # cumulative-sum base per bin: last bin of the previous feature
        self.base = self.offsets[bin_feature] - 1
        self.base_clipped = np.maximum(self.base, 0)
        self.has_base = (self.base >= 0).astype(np.float64)
        self.n_features = n_features

    def best_split(self, rows, g, h, reg_lambda, min_leaf):
        """Best (gain, feature, local bin) over the node's rows, or None.

        Large nodes accumulate histograms over the global bins in one
        bincount; small nodes sort their own codes instead, which costs
        O(m log m) per feature and wins once the node is much smaller than
        the bin table. Both paths scan the same candidate boundaries.
        """
        m = len(rows)
        if 3 * m * self.n_features < self.total_bins:
            return self._best_split_sorted(rows, g, h, reg_lambda, min_leaf)
        sub = self.flat_codes[rows].ravel()
        hist = np.empty((3, self.total_bins))
        hist[0] = np.bincount(sub, minlength=self.total_bins)
        hist[1] = np.bincount(
            sub, weights=np.repeat(g[rows], self.n_features), minlength=self.total_bins
        )
        hist[2] = np.bincount(
            sub, weights=np.repeat(h[rows], self.n_features), minlength=self.total_bins
        )
        cum = np.cumsum(hist, axis=1)
        left = cum - cum[:, self.base_clipped] * self.has_base
        cnt_l, g_l, h_l = left
        g_tot, h_tot = g[rows].sum(), h[rows].sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = (
                g_l**2 / (h_l + reg_lambda)
                + (g_tot - g_l) ** 2 / (h_tot - h_l + reg_lambda)
                - g_tot**2 / (h_tot + reg_lambda)
            )
        valid = ~self.is_last & (cnt_l >= min_leaf) & (m - cnt_l >= min_leaf)
        gain = np.where(valid, gain, -np.inf)
        b = int(gain.argmax())  # first max = lowest feature, lowest threshold
        best = gain[b]
        if not np.isfinite(best) or best <= _MIN_GAIN:
            return None
        f = int(self.bin_feature[b])
        return best, f, b - int(self.offsets[f])

    def _best_split_sorted(self, rows, g, h, reg_lambda, min_leaf):
        codes = self.codes[rows]
        order = np.argsort(codes, axis=0, kind="stable")
        cs = np.take_along_axis(codes, order, axis=0)
        g_l = np.cumsum(g[rows][order], axis=0)[:-1]
        h_l = np.cumsum(h[rows][order], axis=0)[:-1]
        g_tot, h_tot = g[rows].sum(), h[rows].sum()
        m = len(rows)
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = (
                g_l**2 / (h_l + reg_lambda)
                + (g_tot - g_l) ** 2 / (h_tot - h_l + reg_lambda)
                - g_tot**2 / (h_tot + reg_lambda)
            )
        pos = np.arange(1, m).reshape(-1, 1)
        valid = (cs[:-1] < cs[1:]) & (pos >= min_leaf) & (m - pos >= min_leaf)
        gain = np.where(valid, gain, -np.inf)
        best = gain.max()
        if not np.isfinite(best) or best <= _MIN_GAIN:
            return None
        ties = np.argwhere(gain == best)
        p, f = min(ties.tolist(), key=lambda t: (t[1], t[0]))
        # same-gain boundaries inside an empty-bin run share a partition; the
        # histogram path picks the lowest boundary bin, so match it here
        local_bin = int(cs[p, f])
        return float(best), int(f), local_bin

    def grow(self, g, h, rows, max_depth, min_leaf, reg_lambda) -> _Tree:
        feature, threshold, left, right, value = [], [], [], [], []

        def add_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        root = add_node()
        stack = [(rows, 0, root)]
        while stack:
            node_rows, depth, node = stack.pop()
            split = None
            if depth < max_depth and len(node_rows) >= 2 * min_leaf:
                split = self.best_split(node_rows, g, h, reg_lambda, min_leaf)
            if split is None:
                value[node] = -g[node_rows].sum() / (h[node_rows].sum() + reg_lambda)
                continue
            _, f, local_bin = split
            go_left = self.codes[node_rows, f] <= local_bin
            rows_l, rows_r = node_rows[go_left], node_rows[~go_left]
            feature[node] = f
            threshold[node] = float(self.thresholds[self.offsets[f] + local_bin])
            left[node] = add_node()
            right[node] = add_node()
            stack.append((rows_r, depth + 1, right[node]))
            stack.append((rows_l, depth + 1, left[node]))
        return _Tree(
            np.asarray(feature, dtype=np.int64),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=np.float64),
        )


class GBTRegressor(BaseEstimator, RegressorMixin):
    """Boosted regression trees under squared error.

    With ``subsample=1.0`` training is fully deterministic and the training
    MSE is non-increasing per round (recorded in ``train_loss_curve_``).
    Fewer than ``min_leaf`` training rows yield a constant model at the
    target mean.
    """

    def __init__(
        self,
        rounds: int = 200,
        depth: int = 4,
        learning_rate: float = 0.1,
        min_leaf: int = 5,
        reg_lambda: float = 0.0,
        subsample: float = 1.0,
        max_bins: int = 256,
        seed: int = 0,
    ):
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.reg_lambda = reg_lambda
        self.subsample = subsample
        self.max_bins = max_bins
        self.seed = seed

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_vector(y, n_rows=len(X))
        if len(y) == 0:
            raise ValueError("cannot fit on zero rows")
        self.n_features_in_ = X.shape[1]
        self.base_score_ = float(y.mean())
        self.trees_: list[_Tree] = []
        pred = np.full(len(y), self.base_score_)
        self.train_loss_curve_ = [float(((pred - y) ** 2).mean())]
        if len(y) < self.min_leaf:
            return self
        rng = np.random.default_rng(self.seed)
        context = _SplitContext(X, self.max_bins)
        all_rows = np.arange(len(y))
        for _ in range(self.rounds):
            grad = pred - y
            hess = np.ones_like(grad)
            if self.subsample < 1.0:
                keep = rng.random(len(y)) < self.subsample
                rows = np.flatnonzero(keep) if keep.sum() >= 2 else all_rows
            else:
                rows = all_rows
            tree = context.grow(
                grad, hess, rows, self.depth, self.min_leaf, self.reg_lambda
            )
            pred = pred + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_curve_.append(float(((pred - y) ** 2).mean()))
        return self

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X, n_features=self.n_features_in_)
        pred = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
        return pred


def _group_pairs(y: np.ndarray, groups: np.ndarray) -> dict:
    """Ordered preference pairs (winner, loser) per group, as global rows."""
    pairs = {}
    for gid in np.unique(groups):
        rows = np.flatnonzero(groups == gid)
        yg = y[rows]
        wi, lj = np.nonzero(yg[:, None] > yg[None, :])
        if len(wi):
            pairs[gid] = (rows[wi], rows[lj])
    return pairs


class GBTPairwiseRanker(BaseEstimator):
    """Boosted trees trained on within-group pairwise logistic preferences.

    ``pair_mode`` controls supervision per round: "all" uses every ordered
    pair with distinct targets, "sample" draws ``pairs_per_row * group_size``
    pairs with replacement (the source of seed-to-seed ensemble diversity),
    and "auto" uses all pairs for groups of at most ``group_size_cutoff``
    rows and sampling above that.
    """

    def __init__(
        self,
        rounds: int = 200,
        depth: int = 4,
        learning_rate: float = 0.1,
        min_leaf: int = 5,
        reg_lambda: float = 1.0,
        pair_mode: str = "auto",
        pairs_per_row: int = 64,
        group_size_cutoff: int = 64,
        max_bins: int = 256,
        seed: int = 0,
    ):
        self.rounds = rounds
        self.depth = depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.reg_lambda = reg_lambda
        self.pair_mode = pair_mode
        self.pairs_per_row = pairs_per_row
        self.group_size_cutoff = group_size_cutoff
        self.max_bins = max_bins
        self.seed = seed

    def fit(self, X, y, groups: Sequence):
        if self.pair_mode not in ("auto", "all", "sample"):
            raise ValueError(f"unknown pair_mode {self.pair_mode!r}")
        X = check_matrix(X)
        y = check_vector(y, n_rows=len(X))
        groups = np.asarray(groups)
        if len(groups) != len(y):
            raise ValueError("groups must align with rows")
        all_pairs = _group_pairs(y, groups)
        if not all_pairs:
            raise NoPairsError("no within-group pair has distinct targets")
        self.n_features_in_ = X.shape[1]
        self.base_score_ = 0.0
        self.trees_: list[_Tree] = []

        group_rows = {gid: np.flatnonzero(groups == gid) for gid in all_pairs}
        sampled = {
            gid: (
                self.pair_mode == "sample"
                or (
                    self.pair_mode == "auto"
                    and len(group_rows[gid]) > self.group_size_cutoff
                )
            )
            for gid in all_pairs
        }
        rng = np.random.default_rng(self.seed)
        context = _SplitContext(X, self.max_bins)
        all_rows = np.arange(len(y))
        pred = np.zeros(len(y))
        self.train_loss_curve_ = [self._pair_loss(pred, all_pairs)]
        for _ in range(self.rounds):
            grad = np.zeros(len(y))
            hess = np.zeros(len(y))
            for gid, (wi, lj) in all_pairs.items():
                if sampled[gid]:
                    k = self.pairs_per_row * len(group_rows[gid])
                    take = rng.integers(0, len(wi), size=k)
                    w, l = wi[take], lj[take]
                    weight = len(wi) / k  # keep gradient scale comparable
                else:
                    w, l = wi, lj
                    weight = 1.0
                q = expit(pred[l] - pred[w])
                hq = np.maximum(q * (1.0 - q), 1e-16)
                np.add.at(grad, w, -weight * q)
                np.add.at(grad, l, weight * q)
                np.add.at(hess, w, weight * hq)
                np.add.at(hess, l, weight * hq)
            tree = context.grow(
                grad, hess, all_rows, self.depth, self.min_leaf, self.reg_lambda
            )
            pred = pred + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
            self.train_loss_curve_.append(self._pair_loss(pred, all_pairs))
        return self

    @staticmethod
    def _pair_loss(pred: np.ndarray, pairs: dict) -> float:
        total, count = 0.0, 0
        for wi, lj in pairs.values():
            total += np.logaddexp(0.0, pred[lj] - pred[wi]).sum()
            count += len(wi)
        return float(total / count)

    def predict(self, X) -> np.ndarray:
        X = check_matrix(X, n_features=self.n_features_in_)
        pred = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
        return pred


@dataclass(frozen=True)
class Ensemble:
    """Seed-varied models with identical settings; predicts mean and spread."""

    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Per-row mean and population variance across member predictions."""
        preds = np.stack([m.predict(X) for m in self.members], axis=0)
        var = preds.var(axis=0)
        if len(preds):
            # identical members must report exactly zero spread
            var[preds.max(axis=0) == preds.min(axis=0)] = 0.0
        return preds.mean(axis=0), var


def fit_regressor_ensemble(X, y, n_members: int, seed: int, **params) -> Ensemble:
    members = tuple(
        GBTRegressor(seed=seed + i, **params).fit(X, y) for i in range(n_members)
    )
    return Ensemble(members)


def fit_ranker_ensemble(X, y, groups, n_members: int, seed: int, **params) -> Ensemble:
    members = tuple(
        GBTPairwiseRanker(seed=seed + i, **params).fit(X, y, groups)
        for i in range(n_members)
    )
    return Ensemble(members)


def _tree_to_dict(tree: _Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
    }


def _tree_from_dict(obj: dict) -> _Tree:
    return _Tree(
        np.asarray(obj["feature"], dtype=np.int64),
        np.asarray(obj["threshold"], dtype=np.float64),
        np.asarray(obj["left"], dtype=np.int64),
        np.asarray(obj["right"], dtype=np.int64),
        np.asarray(obj["value"], dtype=np.float64),
    )


def model_to_dict(model) -> dict:
    kind = "ranker" if isinstance(model, GBTPairwiseRanker) else "regressor"
    return {
        "version": _SERIAL_VERSION,
        "kind": kind,
        "params": model.get_params(),
        "n_features_in": model.n_features_in_,
        "base_score": model.base_score_,
        "trees": [_tree_to_dict(t) for t in model.trees_],
    }


def model_from_dict(obj: dict):
    if obj.get("version") != _SERIAL_VERSION:
        raise ValueError(f"unsupported model version {obj.get('version')!r}")
    cls = GBTPairwiseRanker if obj["kind"] == "ranker" else GBTRegressor
    model = cls(**obj["params"])
    model.n_features_in_ = obj["n_features_in"]
    model.base_score_ = obj["base_score"]
    model.trees_ = [_tree_from_dict(t) for t in obj["trees"]]
    return model


def ensemble_to_dict(ensemble: Ensemble) -> dict:
    return {
        "version": _SERIAL_VERSION,
        "members": [model_to_dict(m) for m in ensemble.members],
    }


def ensemble_from_dict(obj: dict) -> Ensemble:
    return Ensemble(tuple(model_from_dict(m) for m in obj["members"]))
