"""Parallel execution models and their post-processing statistics.

Fork-join single-chain cycles live in the sampler (the coordinator owns
the chain); this module adds the geometric rank-contribution model, the
zero-overhead speedup curve, the optimal worker count, perfect-parallel
multi-chain runs, and the two-sample KS machinery that compares refined
samples across chains.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import SimSpec, TargetDensity, UsageError
from .sampler import SimulationOutputs, WorkerMsg, fork_join_cycle, worker_attempt

SPEEDUP_ASYMPTOTE_FRACTION = 0.99

__all__ = [
    "ContributionStats",
    "MultiChainReport",
    "WorkerMsg",
    "compare_refined_samples",
    "contribution_stats",
    "fit_geometric",
    "fork_join_cycle",
    "ks_two_sample",
    "kolmogorov_sf",
    "optimal_num_workers",
    "predict_speedup",
    "run_multi_chain",
    "worker_attempt",
]


@dataclass
class ContributionStats:
    """Per-rank accepted-step counts with their geometric fit."""

    counts: np.ndarray  # counts[k-1] = accepted steps won by rank k
    fitted_p: float
    fit_distance: float


def fit_geometric(stats: ContributionStats) -> ContributionStats:
    """Maximum-likelihood geometric fit to the rank histogram.

    p_hat = total_steps / sum(k * count_k); the fit distance is the total
    variation between the normalized histogram and the fitted law,
    including the fitted tail mass beyond the largest observed rank.
    """
    counts = np.asarray(stats.counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise UsageError("fit_geometric requires at least one accepted step")
    ranks = np.arange(1, counts.size + 1)
    p_hat = float(total / (ranks * counts).sum())
    empirical = counts / total
    fitted = p_hat * (1.0 - p_hat) ** (ranks - 1)
    tail = (1.0 - p_hat) ** counts.size
    tv = 0.5 * (np.abs(empirical - fitted).sum() + tail)
    return ContributionStats(counts=stats.counts, fitted_p=p_hat, fit_distance=float(tv))


def contribution_stats(process_ids, n_workers: int) -> ContributionStats:
    """Histogram chain rows by contributing rank and fit the geometric law."""
    pids = np.asarray(process_ids, dtype=np.int64)
    counts = np.bincount(pids, minlength=n_workers + 1)[1 : n_workers + 1]
    return fit_geometric(ContributionStats(counts=counts, fitted_p=1.0, fit_distance=0.0))


def predict_speedup(mu: float, n: int) -> float:
    """Zero-overhead fork-join speedup S(n), normalized so S(1) == 1.

    With per-candidate acceptance mu, a cycle of n workers advances the
    chain by min(Geometric(mu), n) serial steps, so the expected advance
    is (1 - (1-mu)^n) / mu.
    """
    if not 0.0 < mu <= 1.0:
        raise UsageError("mu must lie in (0, 1]")
    if n < 1:
        raise UsageError("worker count must be positive")
    q = 1.0 - mu
    if q == 0.0:
        return 1.0
    return (1.0 - q**n) / (1.0 - q)


def optimal_num_workers(mu: float) -> int:
    """Smallest n whose expected cycle advance reaches 99% of the 1/mu cap."""
    if not 0.0 < mu <= 1.0:
        raise UsageError("mu must lie in (0, 1]")
    if mu == 1.0:
        return 1
    q = 1.0 - mu
    shortfall = 1.0 - SPEEDUP_ASYMPTOTE_FRACTION
    n = max(1, math.ceil(math.log(shortfall) / math.log(q) - 1e-12))
    while 1.0 - q**n < SPEEDUP_ASYMPTOTE_FRACTION:
        n += 1
    while n > 1 and 1.0 - q ** (n - 1) >= SPEEDUP_ASYMPTOTE_FRACTION:
        n -= 1
    return n


def kolmogorov_sf(x: float) -> float:
    """Survival function of the Kolmogorov distribution.

    Alternating series 2 * sum (-1)^(j-1) exp(-2 j^2 x^2); terms below
    1e-18 stop the sum. Near zero the value saturates at 1.
    """
    if x <= 0.0:
        return 1.0
    if x < 0.01:
        return 1.0
    total = 0.0
    sign = 1.0
    for j in range(1, 100_001):
        term = math.exp(-2.0 * j * j * x * x)
        total += sign * term
        sign = -sign
        if term < 1e-18:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value.

    D is the sup distance between empirical CDFs; the p-value evaluates
    the Kolmogorov distribution at sqrt(na*nb/(na+nb)) * D.
    """
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size < 5 or b.size < 5:
        raise UsageError("ks_two_sample needs at least 5 points per sample")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.abs(cdf_a - cdf_b).max())
    m_eff = a.size * b.size / (a.size + b.size)
    return d, kolmogorov_sf(math.sqrt(m_eff) * d)


@dataclass
class PairTest:
    chain_a: int
    chain_b: int
    dimension: int
    statistic: float
    p_value: float


@dataclass
class MultiChainReport:
    """Cross-chain convergence verdict from pairwise per-dimension KS tests."""

    tests: list[PairTest]
    n_tests: int
    alpha: float
    flagged: bool
    degenerate: bool

    @property
    def min_p(self) -> float:
        return min((t.p_value for t in self.tests), default=1.0)


def compare_refined_samples(samples: list[np.ndarray], alpha: float = 0.05) -> MultiChainReport:
    """Pairwise per-dimension KS tests with a Bonferroni-corrected flag.

    ``samples`` holds one (n_i, ndim) refined sample per chain. The run
    is flagged as non-converged when any corrected p-value drops below
    ``alpha``. Bitwise-identical pairs indicate duplicated streams and
    raise the ``degenerate`` flag with a warning instead.
    """
    if len(samples) < 2:
        raise UsageError("convergence comparison needs at least two chains")
    arrays = [np.asarray(s, dtype=float).reshape(len(s), -1) for s in samples]
    ndim = arrays[0].shape[1]
    if any(arr.shape[1] != ndim for arr in arrays):
        raise UsageError("refined samples must share dimensionality")
    tests: list[PairTest] = []
    degenerate = False
    for i in range(len(arrays)):
        for j in range(i + 1, len(arrays)):
            pair_ds = []
            for dim in range(ndim):
                d, p = ks_two_sample(arrays[i][:, dim], arrays[j][:, dim])
                pair_ds.append(d)
                tests.append(PairTest(i + 1, j + 1, dim + 1, d, p))
            if max(pair_ds) == 0.0:
                degenerate = True
    n_tests = len(tests)
    flagged = any(min(t.p_value * n_tests, 1.0) < alpha for t in tests)
    if degenerate:
        warnings.warn(
            "degenerate duplication: chains are bitwise identical "
            "(identical seed and stream assignment)",
            stacklevel=2,
        )
        flagged = False
    return MultiChainReport(
        tests=tests, n_tests=n_tests, alpha=alpha, flagged=flagged, degenerate=degenerate
    )


def write_convergence_report(report: MultiChainReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# dramforge multi-chain convergence v1\n")
        fh.write(f"n_tests = {report.n_tests}\n")
        fh.write(f"alpha = {report.alpha}\n")
        fh.write(f"flagged = {report.flagged}\n")
        fh.write(f"degenerate = {report.degenerate}\n")
        fh.write("chainA,chainB,dimension,D,p\n")
        for t in report.tests:
            fh.write(
                f"{t.chain_a},{t.chain_b},{t.dimension},{t.statistic:.17g},{t.p_value:.17g}\n"
            )


def run_multi_chain(
    spec: SimSpec,
    target: TargetDensity,
    n_chains: int,
    stream_ids: list[int] | None = None,
) -> tuple[list[SimulationOutputs], MultiChainReport]:
    """Run independent chains and test their refined samples against each other.

    Chain k runs serially on RNG stream ``stream_ids[k-1]`` (rank k by
    default) with output prefix ``<prefix>_c<k>``. Passing duplicated
    stream ids reproduces the degenerate-duplication misconfiguration.
    """
    if n_chains < 2:
        raise UsageError("run_multi_chain needs n_chains >= 2")
    if stream_ids is None:
        stream_ids = list(range(1, n_chains + 1))
    if len(stream_ids) != n_chains:
        raise UsageError("stream_ids must provide one stream per chain")
    outputs: list[SimulationOutputs] = []
    for rank, stream in zip(range(1, n_chains + 1), stream_ids):
        sub = spec.with_updates(
            output_prefix=f"{spec.output_prefix}_c{rank}",
            parallelism="none",
            num_workers=1,
        )
        outputs.append(_run_on_stream(sub, target, stream))
    report = compare_refined_samples([out.refined.states for out in outputs])
    write_convergence_report(report, f"{spec.output_prefix}_convergence.txt")
    return outputs, report


def _run_on_stream(spec: SimSpec, target: TargetDensity, stream: int) -> SimulationOutputs:
    from . import sampler as _sampler
    from .chainio import inspect_outputs
    from .core import RunAlreadyComplete, SplitMix64

    status, _ = inspect_outputs(spec)
    if status == "complete":
        raise RunAlreadyComplete(
            f"outputs for prefix {spec.output_prefix!r} already hold a complete run"
        )
    if status == "incomplete":
        # The checkpoint carries its own stream assignment.
        return _sampler.resume(spec, target)
    state = _sampler.init_state(spec, target)
    state.rngs = [SplitMix64(spec.seed, stream)]
    run = _sampler._Run(spec, target, state)
    run.checkpoint()
    return run.drive()
