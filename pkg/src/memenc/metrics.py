"""Membership and classification metrics, plus a 2-D PCA for plots."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .nn import MlpModel, accuracy


@dataclass
class ScoreSet:
    """Membership scores with 0/1 labels (positives are encoded members)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")
        if self.scores.size == 0:
            raise ValueError("empty score set")

    @classmethod
    def from_pools(cls, member_scores, nonmember_scores) -> "ScoreSet":
        m = np.asarray(member_scores, dtype=np.float64).ravel()
        nm = np.asarray(nonmember_scores, dtype=np.float64).ravel()
        return cls(np.concatenate([m, nm]),
                   np.concatenate([np.ones(len(m), int), np.zeros(len(nm), int)]))


def precision_recall(s: ScoreSet, threshold: float = 0.5) -> tuple[float, float]:
    """Records with ``score >= threshold`` are predicted members.

    Precision is 1.0 when nothing is predicted positive (a warning is
    emitted); recall is 0.0 when there are no positives.
    """
    pred = s.scores >= threshold
    pos = s.labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    if tp + fp == 0:
        warnings.warn("no records predicted as members; precision set to 1.0", stacklevel=2)
        precision = 1.0
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def auc(s: ScoreSet) -> float:
    """Rank AUC: P(pos > neg) + 0.5 P(tie), via midranks (exact)."""
    pos = s.labels == 1
    n_pos = int(pos.sum())
    n_neg = s.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s.scores)  # average ranks for ties
    # twice the Mann-Whitney U; midranks are multiples of 0.5, so this is an integer
    u2 = 2.0 * ranks[pos].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def auc_bruteforce(s: ScoreSet) -> float:
    """O(n_pos * n_neg) pairwise count; reference implementation."""
    p = s.scores[s.labels == 1]
    n = s.scores[s.labels == 0]
    if p.size == 0 or n.size == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    wins = np.sum(p[:, None] > n[None, :])
    ties = np.sum(p[:, None] == n[None, :])
    return float((2 * wins + ties) / (2.0 * p.size * n.size))


def test_accuracy(model: MlpModel, x, y) -> float:
    return accuracy(model, x, y)


test_accuracy.__test__ = False  # keep pytest from collecting it


def pca2(vectors, max_iter: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Project rows onto the top two principal components.

    Power iteration with deflation on the covariance matrix.  Each
    component's sign is chosen so its largest-magnitude loading is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError("pca2 needs at least 3 vectors of dimension >= 2")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    if not np.any(cov):
        raise ValueError("all vectors are identical")
    comps = _top_components(cov, 2, max_iter, tol)
    return xc @ comps.T


def _top_components(cov, k, max_iter, tol):
    d = cov.shape[0]
    a = cov.copy()
    comps = []
    for i in range(k):
        # deterministic start that is not orthogonal to any axis
        v = np.linspace(1.0, 2.0, d) + i
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = a @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            # compare up to sign flips from negative eigenvalues of the deflated matrix
            if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
                v = w
                break
            v = w
        lam = float(v @ cov @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        a = a - lam * np.outer(v, v)
    return np.array(comps)
