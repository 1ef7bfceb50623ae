"""Replicate metrics and Rubin-style pooling of repeated fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UsageError

Z95 = 1.96


def ate_bias(estimate, truth):
    return float(estimate) - float(truth)


def rmse(estimates, truth):
    """Root mean squared error of per-replicate ATE estimates."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.size == 0:
        raise UsageError("rmse needs at least one replicate")
    return float(np.sqrt(np.mean((estimates - float(truth)) ** 2)))


def cate_bias(predicted, true):
    predicted, true = _paired(predicted, true)
    return float(np.mean(predicted - true))


def cate_rmse(predicted, true):
    predicted, true = _paired(predicted, true)
    return float(np.sqrt(np.mean((predicted - true) ** 2)))


def _paired(predicted, true):
    predicted = np.asarray(predicted, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if predicted.shape != true.shape:
        raise DimensionError(
            f"CATE vectors differ in shape: {predicted.shape} vs {true.shape}"
        )
    if predicted.size == 0:
        raise UsageError("CATE metrics need at least one unit")
    return predicted, true


def within_run_variance(cate):
    """U_j = (1/n) * (1/(n-1)) * sum (tau_i - tau_bar)^2, i.e. var(cate)/n."""
    cate = np.asarray(cate, dtype=np.float64)
    if cate.size < 2:
        raise UsageError(f"within-run variance needs n >= 2, got {cate.size}")
    return float(cate.var(ddof=1) / cate.size)


@dataclass
class PooledEstimate:
    m: int
    taus: np.ndarray
    us: np.ndarray
    tau_bar: float
    u_bar: float
    between: float
    total: float
    ci_low: float
    ci_high: float


def rubin_pool(runs):
    """Combine m repeated fits: T = U_bar + (1 + 1/m) * B.

    Runs are sorted before aggregation, which makes the result exactly
    order-invariant (not just up to float reassociation).
    """
    runs = sorted((float(t), float(u)) for t, u in runs)
    m = len(runs)
    if m < 2:
        raise UsageError(f"pooling needs at least 2 runs, got {m}")
    taus = np.array([t for t, _ in runs])
    us = np.array([u for _, u in runs])
    tau_bar = float(taus.mean())
    u_bar = float(us.mean())
    between = float(taus.var(ddof=1))
    total = u_bar + (1.0 + 1.0 / m) * between
    half = Z95 * np.sqrt(total)
    return PooledEstimate(
        m=m,
        taus=taus,
        us=us,
        tau_bar=tau_bar,
        u_bar=u_bar,
        between=between,
        total=total,
        ci_low=tau_bar - half,
        ci_high=tau_bar + half,
    )


# ---------------------------------------------------------------------------
# per-replicate records and their summary rows


@dataclass
class ReplicateRecord:
    scenario: str
    method: str
    replicate: int
    seed: int
    ate: float = np.nan
    ate_bias: float = np.nan
    cate_bias: float = np.nan
    cate_rmse: float = np.nan
    wall_time: float = 0.0
    error: str = ""  # non-empty marks a failed replicate

    @property
    def failed(self):
        return bool(self.error)


def summarize(records):
    """One summary row from the successful records of one (scenario, method).

    Bias is summarized as mean/median/SD to mirror the reported tables;
    SD uses the sample convention and is NaN for a single replicate.
    CATE columns are NaN for methods that only produce an ATE.
    """
    if not records:
        raise UsageError("cannot summarize zero records")
    ok = [r for r in records if not r.failed]
    failures = len(records) - len(ok)
    row = {
        "scenario": records[0].scenario,
        "method": records[0].method,
        "replicates": len(ok),
        "failures": failures,
    }
    stats = {
        "ate_bias_mean": np.nan,
        "ate_bias_median": np.nan,
        "ate_bias_sd": np.nan,
        "ate_rmse_mean": np.nan,
        "cate_bias_mean": np.nan,
        "cate_bias_sd": np.nan,
        "cate_rmse_mean": np.nan,
    }
    if ok:
        biases = np.array([r.ate_bias for r in ok])
        stats["ate_bias_mean"] = float(biases.mean())
        stats["ate_bias_median"] = float(np.median(biases))
        stats["ate_bias_sd"] = float(biases.std(ddof=1)) if len(ok) > 1 else np.nan
        stats["ate_rmse_mean"] = float(np.sqrt(np.mean(biases**2)))
        cb = np.array([r.cate_bias for r in ok])
        cr = np.array([r.cate_rmse for r in ok])
        if not np.all(np.isnan(cb)):
            stats["cate_bias_mean"] = float(np.nanmean(cb))
            stats["cate_bias_sd"] = (
                float(np.nanstd(cb, ddof=1)) if np.sum(~np.isnan(cb)) > 1 else np.nan
            )
        if not np.all(np.isnan(cr)):
            stats["cate_rmse_mean"] = float(np.nanmean(cr))
    row.update(stats)
    return row
