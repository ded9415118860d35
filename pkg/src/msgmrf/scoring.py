"""Probabilistic prediction scores and the validation-set splitter."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm

from .errors import EmptySet, MalformedRow, MissingColumn, NonPositiveStd

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-location predictive mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).reshape(-1)
        s = np.asarray(self.std, dtype=float).reshape(-1)
        if m.shape != s.shape:
            raise ValueError("mean and std must have equal length")
        if np.any(~(s > 0)):
            raise NonPositiveStd("predictive std must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    def __len__(self):
        return self.mean.size

    def subset(self, idx) -> "PredictiveSummary":
        return PredictiveSummary(self.mean[idx], self.std[idx])

    @classmethod
    def from_samples(cls, means, noise_var) -> "PredictiveSummary":
        """Law of total variance over posterior samples.

        ``means`` and ``noise_var`` are ``(n_samples, n_points)``; the
        predictive variance is the variance of the sampled means plus the
        average noise variance.
        """
        means = np.asarray(means, dtype=float)
        noise_var = np.asarray(noise_var, dtype=float)
        mu = means.mean(axis=0)
        var = means.var(axis=0) + noise_var.mean(axis=0)
        return cls(mu, np.sqrt(var))


@dataclass(frozen=True)
class ValidationSplit:
    near_data: np.ndarray
    far_data: np.ndarray
    held_out_box: np.ndarray


def _check_std(std):
    std = np.asarray(std, dtype=float)
    if np.any(~(std > 0)):
        raise NonPositiveStd("std must be positive")
    return std


def rmspe(pred: PredictiveSummary, truth) -> float:
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size == 0:
        raise EmptySet("no validation points")
    if truth.size != len(pred):
        raise ValueError("prediction and truth lengths differ")
    return float(np.sqrt(np.mean((pred.mean - truth) ** 2)))


def crps_gaussian(mean, std, truth):
    """Closed-form CRPS of a Gaussian predictive distribution (elementwise)."""
    std = _check_std(std)
    z = (np.asarray(truth, dtype=float) - np.asarray(mean, dtype=float)) / std
    out = std * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out) if np.ndim(out) == 0 else out


def interval_score(mean, std, truth, alpha: float = 0.1):
    """Interval score of the central ``1 - alpha`` interval (elementwise)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    std = _check_std(std)
    mean = np.asarray(mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    q = norm.ppf(1.0 - alpha / 2.0)
    lo, hi = mean - q * std, mean + q * std
    out = (hi - lo) + (2.0 / alpha) * np.maximum(lo - truth, 0.0) \
        + (2.0 / alpha) * np.maximum(truth - hi, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def coverage(mean, std, truth, level: float = 0.9) -> float:
    """Fraction of truths inside the central ``level`` predictive interval."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size == 0:
        raise EmptySet("no validation points")
    std = _check_std(std)
    q = norm.ppf(0.5 + level / 2.0)
    inside = np.abs(truth - np.asarray(mean, dtype=float).reshape(-1)) <= q * std.reshape(-1)
    return float(np.mean(inside))


def score_all(pred: PredictiveSummary, truth) -> dict:
    truth = np.asarray(truth, dtype=float).reshape(-1)
    return {
        "RMSPE": rmspe(pred, truth),
        "CRPS": float(np.mean(crps_gaussian(pred.mean, pred.std, truth))),
        "IS90": float(np.mean(interval_score(pred.mean, pred.std, truth, 0.1))),
        "Cov90": coverage(pred.mean, pred.std, truth, 0.9),
    }


def split_validation(train_locations, validation_locations, box=None, vicinity=None) -> ValidationSplit:
    """Split validation points into near-data, far-from-data and held-out box.

    ``box`` is ``((xmin, xmax), (ymin, ymax))`` (or ``(xmin, xmax)`` in 1D)
    and ``vicinity`` the half-width per axis of the box searched around each
    validation point for a training point.
    """
    val = np.atleast_2d(np.asarray(validation_locations, dtype=float))
    if val.shape[0] == 1 and np.ndim(validation_locations) == 1:
        val = val.T
    n = val.shape[0]
    d = val.shape[1]
    in_box = np.zeros(n, dtype=bool)
    if box is not None:
        b = np.asarray(box, dtype=float).reshape(d, 2)
        in_box = np.all((val >= b[:, 0]) & (val <= b[:, 1]), axis=1)
    rest = np.flatnonzero(~in_box)
    near = np.zeros(n, dtype=bool)
    train = np.asarray(train_locations, dtype=float)
    if train.size and rest.size:
        train = train.reshape(-1, d)
        half = np.broadcast_to(np.asarray(1.0 if vicinity is None else vicinity, dtype=float), (d,))
        # scale axes so the vicinity box becomes the unit Chebyshev ball
        tree = cKDTree(train / half)
        dist, _ = tree.query(val[rest] / half, k=1, p=np.inf)
        near[rest] = dist <= 1.0 + 1e-12
    return ValidationSplit(np.flatnonzero(near), np.flatnonzero(~near & ~in_box),
                           np.flatnonzero(in_box))


def write_score_table(path, rows) -> None:
    """CSV with columns ``dataset, model, RMSPE, CRPS, IS90, Cov90``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "model", "RMSPE", "CRPS", "IS90", "Cov90"])
        for r in rows:
            w.writerow([r["dataset"], r["model"]] + [f"{r[k]:.6g}" for k in ("RMSPE", "CRPS", "IS90", "Cov90")])


def read_external_predictions(path):
    """Read ``location_id, mean, std`` rows produced by another model.

    Returns ``(location_ids, PredictiveSummary)``.
    """
    ids, means, stds = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        for col in ("location_id", "mean", "std"):
            if col not in header:
                raise MissingColumn(f"column {col!r} missing from {path}")
        ix = [header.index(c) for c in ("location_id", "mean", "std")]
        for line_no, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                ids.append(int(row[ix[0]]))
                means.append(float(row[ix[1]]))
                stds.append(float(row[ix[2]]))
            except (ValueError, IndexError) as exc:
                raise MalformedRow(line_no, ",".join(row)) from exc
    return np.asarray(ids, dtype=np.int64), PredictiveSummary(np.asarray(means), np.asarray(stds))
