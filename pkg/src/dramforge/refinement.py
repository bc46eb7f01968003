"""Autocorrelation analysis and recursive chain refinement.

The refinement loop estimates the integrated autocorrelation time of the
verbose chain, thins by that stride, and repeats until the remaining
sample is statistically indistinguishable from uncorrelated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# A pass stops the recursion once tau drops to this threshold.
STOP_TAU = 1.05
# Series shorter than this are not worth re-estimating.
MIN_REFINE_SIZE = 10


@dataclass
class RefinedSample:
    """Decorrelated sample with the tau estimate history that produced it."""

    states: np.ndarray  # (n, ndim)
    logf: np.ndarray  # (n,)
    iac_history: list[float]
    source_burnin: int

    def __len__(self) -> int:
        return self.states.shape[0]


def weighted_acf(values, weights, max_lag: int) -> np.ndarray:
    """Autocorrelation of the verbose expansion of a weighted series.

    Works directly on the run-length encoding; the expansion is never
    materialized. Lag-k covariances use the unbiased 1/(N-k) scaling so a
    short strongly-repeating chain thins by its full dwell length.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=np.int64).reshape(-1)
    if values.size != weights.size:
        raise ValueError("values and weights must have equal length")
    if np.any(weights < 1):
        raise ValueError("weights must be integers >= 1")
    total = int(weights.sum())
    if total < 2:
        raise ValueError("weighted series must expand to at least 2 elements")
    if not 0 <= max_lag < total:
        raise ValueError(f"max_lag must lie in [0, {total - 1}], got {max_lag}")

    mean = float((weights * values).sum()) / total
    dev = values - mean
    c0 = float((weights * dev * dev).sum()) / total
    rho = np.zeros(max_lag + 1)
    rho[0] = 1.0
    if c0 == 0.0:
        return rho

    starts = np.concatenate(([0], np.cumsum(weights)[:-1]))
    ends = starts + weights
    nruns = values.size
    for k in range(1, max_lag + 1):
        # Runs overlapping run i's window shifted by k; a window of length
        # w_i spans only a handful of runs, so pair count stays O(runs).
        lo = np.searchsorted(ends, starts + k, side="right")
        hi = np.searchsorted(starts, ends + k, side="left")
        counts = hi - lo
        keep = counts > 0
        if not np.any(keep):
            continue
        reps = counts[keep]
        i_idx = np.repeat(np.nonzero(keep)[0], reps)
        offsets = np.concatenate(([0], np.cumsum(reps)[:-1]))
        j_idx = np.arange(reps.sum()) - np.repeat(offsets, reps) + np.repeat(lo[keep], reps)
        overlap = np.minimum(ends[i_idx] + k, ends[j_idx]) - np.maximum(
            starts[i_idx] + k, starts[j_idx]
        )
        ck = float((overlap * dev[i_idx] * dev[j_idx]).sum()) / (total - k)
        rho[k] = ck / c0
    return rho


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """FFT autocorrelation of a plain series, same scaling as weighted_acf."""
    x = np.asarray(series, dtype=float).reshape(-1)
    n = x.size
    if n < 2:
        raise ValueError("series must have at least 2 elements")
    max_lag = min(max_lag, n - 1)
    dev = x - x.mean()
    c0 = float(dev @ dev) / n
    rho = np.zeros(max_lag + 1)
    rho[0] = 1.0
    if c0 == 0.0:
        return rho
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(dev, m)
    raw = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1]
    lags = np.arange(1, max_lag + 1)
    rho[1:] = raw[1:] / (n - lags) / c0
    return rho


def integrated_autocorrelation(acf: np.ndarray) -> float:
    """Initial-positive-sequence tau: 1 + 2 * sum of leading positive lags."""
    acf = np.asarray(acf, dtype=float).reshape(-1)
    if acf.size == 0 or acf[0] != 1.0:
        raise ValueError("acf must start with rho(0) == 1")
    tau = 1.0
    for k in range(1, acf.size):
        if acf[k] <= 0.0:
            break
        tau += 2.0 * acf[k]
    return max(tau, 1.0)


def _series_tau(states: np.ndarray, logf: np.ndarray) -> float:
    """Worst-case tau across every coordinate series and the logf series."""
    n = states.shape[0]
    max_lag = n - 1
    tau = 1.0
    for col in range(states.shape[1]):
        tau = max(tau, integrated_autocorrelation(autocorrelation(states[:, col], max_lag)))
    tau = max(tau, integrated_autocorrelation(autocorrelation(logf, max_lag)))
    return tau


def refine(chain, burnin: int) -> RefinedSample:
    """Recursively thin the post-burn-in verbose chain until decorrelated.

    Each pass measures tau (the max over coordinates and logf), records
    it, and keeps every ceil(tau)-th verbose element starting at index 0.
    The recursion stops once tau <= 1.05, once the series is too short to
    re-estimate, or if a noisy estimate stops decreasing.
    """
    if burnin < 0 or burnin >= chain.n_rows:
        raise ValueError(f"burnin row {burnin} out of range for {chain.n_rows} rows")
    weights = chain.weight[burnin:]
    states = np.repeat(chain.states[burnin:], weights, axis=0)
    logf = np.repeat(chain.logf[burnin:], weights)
    history: list[float] = []
    if states.shape[0] < 2:
        return RefinedSample(states, logf, history, burnin)
    while True:
        tau = _series_tau(states, logf)
        if history and tau >= history[-1]:
            break
        history.append(tau)
        if tau <= STOP_TAU:
            break
        stride = math.ceil(tau)
        states = states[::stride]
        logf = logf[::stride]
        if states.shape[0] < MIN_REFINE_SIZE:
            break
    return RefinedSample(states, logf, history, burnin)


def effective_sample_size(chain, burnin: int) -> float:
    """Post-burn-in verbose length divided by the first-pass tau."""
    weights = chain.weight[burnin:]
    n = int(weights.sum())
    if n < 2:
        return float(n)
    states = np.repeat(chain.states[burnin:], weights, axis=0)
    logf = np.repeat(chain.logf[burnin:], weights)
    return n / _series_tau(states, logf)
