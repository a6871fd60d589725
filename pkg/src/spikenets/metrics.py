"""Evaluation criteria for estimated networks against ground truth.

Support-recovery and coverage metrics are computed over off-diagonal
entries only (self-edges are not part of the edge set); the relative
error of the interaction matrix uses all entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .infer import CIMatrix


@dataclass
class EvalReport:
    """One scored comparison of an estimate against ground truth."""

    rmse_gamma: float
    mse_beta: float
    mse_f: float
    auc: float
    avgcov_s: float
    avgcov_sc: float
    avglen_s: float
    avglen_sc: float
    rep_count: int = 1

    COLUMNS = ("rmse_gamma", "mse_beta", "mse_f", "auc",
               "avgcov_s", "avgcov_sc", "avglen_s", "avglen_sc")

    def row(self) -> list[float]:
        return [getattr(self, c) for c in self.COLUMNS]


def rmse_gamma(est: np.ndarray, truth: np.ndarray) -> float:
    """Relative squared Frobenius error ||est - truth||_F^2 / ||truth||_F^2."""
    truth = np.asarray(truth, dtype=float)
    denom = float((truth * truth).sum())
    if denom == 0.0:
        raise ValueError("ground-truth matrix is identically zero")
    diff = np.asarray(est, dtype=float) - truth
    return float((diff * diff).sum()) / denom


def mse_vector(est: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared difference; for trend curves, averaged over t and neurons."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    diff = est - truth
    return float((diff * diff).mean())


def _offdiag_mask(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)


def auc_support(scores: np.ndarray, truth_support: np.ndarray) -> float:
    """Rank-based AUC for edge detection over off-diagonal entries.

    Ties count one half, which is the Mann-Whitney convention; exact zeros
    produced by the penalty therefore contribute 0.5 against each other.
    """
    scores = np.asarray(scores, dtype=float)
    truth_support = np.asarray(truth_support, dtype=bool)
    mask = _offdiag_mask(scores.shape[0])
    s = scores[mask]
    labels = truth_support[mask]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one edge and one non-edge off the diagonal")
    ranks = rankdata(s)  # average ranks on ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def coverage_stats(cis: CIMatrix, truth: np.ndarray) -> tuple[float, float, float, float]:
    """(avgcov_s, avgcov_sc, avglen_s, avglen_sc) over off-diagonal entries.

    s is the true support, s^c its complement; coverage is the fraction of
    intervals containing the true value, length the mean interval width.
    """
    truth = np.asarray(truth, dtype=float)
    mask = _offdiag_mask(truth.shape[0])
    s_mask = mask & (truth != 0.0)
    sc_mask = mask & (truth == 0.0)
    if not s_mask.any() or not sc_mask.any():
        raise ValueError("both the support and its complement must be nonempty")
    covered = (cis.lower <= truth) & (truth <= cis.upper)
    length = cis.upper - cis.lower
    return (float(covered[s_mask].mean()), float(covered[sc_mask].mean()),
            float(length[s_mask].mean()), float(length[sc_mask].mean()))


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Plain mean across Monte Carlo replications."""
    if not reports:
        raise ValueError("no reports to aggregate")
    cols = {c: float(np.mean([getattr(r, c) for r in reports])) for c in EvalReport.COLUMNS}
    return EvalReport(rep_count=len(reports), **cols)
