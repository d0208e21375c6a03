"""Evaluation metrics: debiased Sinkhorn divergence and counterfactual RMSE.

The divergence uses the quadratic cost C(x, y) = 0.5 * ||x - y||^2 with
entropic regularization eps = blur**2, so the blur parameter has length
units. Iterations run in the log domain and stop at marginal error below
1e-6 or after 500 rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import Degenerate, ShapeMismatch

MAX_ITERS = 500
MARGINAL_TOL = 1e-6


def _half_sq_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    return 0.5 * np.maximum(sq, 0.0)


def _ot_cross(C: np.ndarray, eps: float) -> float:
    """Entropic OT value between uniform measures via log-domain Sinkhorn."""
    n, m = C.shape
    log_a = -np.log(n)
    log_b = -np.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(MAX_ITERS):
        f = -eps * logsumexp(log_b + (g[None, :] - C) / eps, axis=1)
        g = -eps * logsumexp(log_a + (f[:, None] - C) / eps, axis=0)
        # After the g update the column marginals are exact; check rows.
        log_pi_rows = logsumexp(
            (f[:, None] + g[None, :] - C) / eps + log_a + log_b, axis=1
        )
        err = np.abs(np.exp(log_pi_rows) - np.exp(log_a)).sum()
        if err < MARGINAL_TOL:
            break
    return float(f.mean() + g.mean())


def _ot_self(C: np.ndarray, eps: float) -> float:
    """Entropic OT of a uniform measure against itself (symmetric iteration)."""
    n = C.shape[0]
    log_a = -np.log(n)
    f = np.zeros(n)
    for _ in range(MAX_ITERS):
        t = -eps * logsumexp(log_a + (f[None, :] - C) / eps, axis=1)
        new_f = 0.5 * (f + t)
        delta = np.abs(new_f - f).max()
        f = new_f
        if delta < MARGINAL_TOL * eps:
            break
    return float(2.0 * f.mean())


def sinkhorn_divergence(x: np.ndarray, y: np.ndarray, blur: float = 0.05) -> float:
    """Debiased divergence S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2.

    Symmetric, nonnegative, zero for identical sample sets.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise Degenerate("sinkhorn divergence needs nonempty sample sets")
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatch(f"dims differ: {x.shape[1]} vs {y.shape[1]}")
    eps = float(blur) ** 2
    cross = _ot_cross(_half_sq_cost(x, y), eps)
    self_x = _ot_self(_half_sq_cost(x, x), eps)
    self_y = _ot_self(_half_sq_cost(y, y), eps)
    return max(cross - 0.5 * self_x - 0.5 * self_y, 0.0)


def ctf_rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root mean square of elementwise errors."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def ctf_wd(
    model,
    dataset,
    blur: float = 0.05,
    max_pool: int = 2048,
    seed: int = 0,
) -> float:
    """Divergence between pooled model counterfactual outcomes and pooled truths.

    Pools are subsampled deterministically to max_pool rows to bound the
    cost matrix.
    """
    from .inference import batch_counterfactual_outcomes

    if not dataset.records:
        raise Degenerate("dataset has no counterfactual records")
    pred = batch_counterfactual_outcomes(model, dataset.records)
    truth = np.stack([r.v_counterfactual_flat for r in dataset.records])
    if pred.shape[0] > max_pool:
        idx = np.random.default_rng(seed).choice(pred.shape[0], max_pool, replace=False)
        pred, truth = pred[idx], truth[idx]
    return sinkhorn_divergence(pred, truth, blur=blur)


@dataclass
class MetricsReport:
    """Evaluation summary keyed by (dataset, model family, seed)."""

    dataset: str
    model_family: str
    seed: int
    blur: float
    obs_wd: float
    ctf_rmse: float
    ctf_wd: float
    n_obs: int
    n_cf: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("obs_wd", "ctf_rmse", "ctf_wd"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_family": self.model_family,
            "seed": self.seed,
            "blur": self.blur,
            "metrics": {
                "obs_wd": self.obs_wd,
                "ctf_rmse": self.ctf_rmse,
                "ctf_wd": self.ctf_wd,
            },
            "counts": {"n_obs": self.n_obs, "n_cf": self.n_cf},
            "config": self.config,
        }

    CSV_HEADER = "dataset,model_family,seed,blur,obs_wd,ctf_rmse,ctf_wd,n_obs,n_cf"

    def to_csv_row(self) -> str:
        return (
            f"{self.dataset},{self.model_family},{self.seed},{self.blur},"
            f"{self.obs_wd!r},{self.ctf_rmse!r},{self.ctf_wd!r},{self.n_obs},{self.n_cf}"
        )
