"""Autocorrelation, effective sample size and thinning for chain traces."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrace


@dataclass(frozen=True)
class ChainTrace:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))

    def __len__(self):
        return self.values.size


def _values(trace):
    return trace.values if isinstance(trace, ChainTrace) else np.asarray(trace, dtype=float).ravel()


def autocorrelation(trace, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag``.

    Mean-centred, biased estimator (every lag divided by ``n``), computed
    with an FFT.
    """
    x = _values(trace)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n})")
    d = x - x.mean()
    var = float(np.dot(d, d))
    if not var > 0 or not np.isfinite(var):
        raise DegenerateTrace("trace has zero variance")
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:max_lag + 1]
    return acov / var


def effective_sample_size(trace) -> float:
    """Single-chain ESS with paired-sum truncation.

    ``n / (1 + 2 sum_{t=1}^{T} rho_t)``, the sum stopping before the first
    lag ``T`` with ``rho_T + rho_{T+1} < 0``; the result is clipped to
    ``(0, n]``.
    """
    x = _values(trace)
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 values")
    rho = autocorrelation(x, n - 1)
    s = 0.0
    t = 1
    while t + 1 < n:
        if rho[t] + rho[t + 1] < 0:
            break
        s += rho[t]
        t += 1
    denom = 1.0 + 2.0 * s
    ess = n / denom if denom > 0 else float(n)
    return float(min(max(ess, np.finfo(float).tiny), n))


def thin(trace, factor: int):
    """Every ``factor``-th value, starting from the first."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if isinstance(trace, ChainTrace):
        return ChainTrace(trace.values[::factor], trace.label)
    return np.asarray(trace)[::factor]


def write_ess_report(path, traces) -> None:
    """CSV with columns ``label, n, n_eff``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "n", "n_eff"])
        for tr in traces:
            w.writerow([tr.label, len(tr), f"{effective_sample_size(tr):.6g}"])
