"""Deterministic RNG, log-density targets, and the simulation specification.

The random generator is fixed to SplitMix64 plus a cached Box-Muller
transform. Both are closed-form recurrences, so the number of raw draws
consumed by any operation never depends on platform or on rejection luck.
That fixed consumption is what lets an interrupted run resume bit-for-bit
from a checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_INV_2POW53 = 1.0 / (1 << 53)
TWO_PI = 2.0 * math.pi


class DramforgeError(Exception):
    """Base class for all library errors."""


class UsageError(DramforgeError):
    """Invalid arguments, configuration, or call sequence."""


class NumericalError(DramforgeError):
    """Unrecoverable numerical failure (NaN target, singular covariance)."""


class ResumeRefused(DramforgeError):
    """Restart protocol cannot or must not proceed."""


class RunAlreadyComplete(ResumeRefused):
    """Output files for this prefix already hold a finished run."""


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 stream with Box-Muller Gaussian deviates.

    ``stream_id`` selects a decorrelated substream of the same seed, used
    to give every worker rank its own reproducible sequence. The second
    Box-Muller deviate is cached so Gaussian draws consume a fixed number
    of raw outputs; the cache is part of the serialized state.
    """

    __slots__ = ("state", "stream_id", "gauss_cache")

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= seed <= MASK64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= stream_id <= MASK64:
            raise UsageError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.state = (seed ^ ((stream_id * GOLDEN_GAMMA) & MASK64)) & MASK64
        self.stream_id = stream_id
        self.gauss_cache: float | None = None

    def next_uint64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix64(self.state)

    def uniform(self) -> float:
        """Next deviate in [0, 1), from the top 53 bits of the stream."""
        # Top-53-bit truncation keeps the result strictly below 1.0, which
        # a rounded 64-bit division would not. The mix is inlined; this is
        # the innermost call of the whole sampler.
        s = (self.state + GOLDEN_GAMMA) & MASK64
        self.state = s
        z = ((s ^ (s >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return ((z ^ (z >> 31)) >> 11) * _INV_2POW53

    def gauss(self) -> float:
        """Next standard normal deviate (Box-Muller, no rejection loop)."""
        if self.gauss_cache is not None:
            g = self.gauss_cache
            self.gauss_cache = None
            return g
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        theta = TWO_PI * u2
        self.gauss_cache = r * math.sin(theta)
        return r * math.cos(theta)

    def getstate(self) -> tuple[int, int, float | None]:
        return (self.state, self.stream_id, self.gauss_cache)

    def setstate(self, state: tuple[int, int, float | None]) -> None:
        self.state, self.stream_id, self.gauss_cache = state

    @classmethod
    def from_state(cls, state: tuple[int, int, float | None]) -> "SplitMix64":
        rng = cls.__new__(cls)
        rng.setstate(tuple(state))
        return rng

    def copy(self) -> "SplitMix64":
        return SplitMix64.from_state(self.getstate())

    def __repr__(self) -> str:
        return f"SplitMix64(state={self.state:#x}, stream_id={self.stream_id})"


class TargetDensity:
    """A natural-log density (possibly unnormalized) on R^ndim.

    ``log_density`` maps a length-``ndim`` float array to a real; ``-inf``
    means the point is outside the support and is always rejected. NaN is
    treated as a caller bug and makes the sampler abort.
    """

    __slots__ = ("ndim", "log_density")

    def __init__(self, ndim: int, log_density):
        if ndim < 1:
            raise UsageError(f"ndim must be positive, got {ndim}")
        self.ndim = int(ndim)
        self.log_density = log_density

    def __call__(self, point: np.ndarray) -> float:
        return float(self.log_density(point))


@dataclass(frozen=True)
class BuiltinTarget:
    """CLI-selectable test target: kind plus kind-specific parameters."""

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in ("mvn", "rosenbrock", "gauss_mixture"):
            raise UsageError(f"unknown builtin target kind {self.kind!r}")


def _check_spd(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise UsageError(f"{what} covariance must be a square matrix")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
        raise UsageError(f"{what} covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise UsageError(f"{what} covariance must be positive definite") from None
    return cov


def mvn_target(mean, cov=None) -> TargetDensity:
    """Multivariate normal log-density up to its additive constant.

    With zero mean and identity covariance this is exactly -0.5 * sum(x**2).
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    ndim = mean.size
    if cov is None:
        cov = np.eye(ndim)
    cov = _check_spd(cov, "mvn")
    if cov.shape[0] != ndim:
        raise UsageError("mvn mean and covariance dimensions disagree")
    identity = bool(np.array_equal(cov, np.eye(ndim)))
    prec = np.linalg.inv(cov)

    if identity:
        def log_density(x):
            d = x - mean
            return -0.5 * float(d @ d)
    else:
        def log_density(x):
            d = x - mean
            return -0.5 * float(d @ (prec @ d))

    return TargetDensity(ndim, log_density)


def rosenbrock_target(ndim: int, scale: float = 100.0) -> TargetDensity:
    """Banana-shaped Rosenbrock log-density, a stiff sampler stress test."""
    if ndim < 2:
        raise UsageError("rosenbrock target needs ndim >= 2")
    if scale <= 0:
        raise UsageError("rosenbrock scale must be positive")

    def log_density(x):
        a = x[1:] - x[:-1] ** 2
        b = 1.0 - x[:-1]
        return -float(scale * (a @ a) + b @ b)

    return TargetDensity(ndim, log_density)


def mixture_target(weights, means, covs) -> TargetDensity:
    """Gaussian mixture log-density with fully normalized components."""
    weights = np.asarray(weights, dtype=float).reshape(-1)
    means = [np.asarray(m, dtype=float).reshape(-1) for m in means]
    if len(means) != weights.size or len(covs) != weights.size:
        raise UsageError("mixture weights, means, and covariances must align")
    if weights.size == 0:
        raise UsageError("mixture needs at least one component")
    if np.any(weights <= 0):
        raise UsageError("mixture weights must be positive")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise UsageError("mixture weights must sum to 1")
    ndim = means[0].size
    precs, lognorms = [], []
    for m, c in zip(means, covs):
        if m.size != ndim:
            raise UsageError("mixture component dimensions disagree")
        c = _check_spd(c, "mixture component")
        precs.append(np.linalg.inv(c))
        sign, logdet = np.linalg.slogdet(c)
        lognorms.append(-0.5 * (ndim * math.log(TWO_PI) + logdet))
    logw = np.log(weights)

    def log_density(x):
        terms = np.empty(weights.size)
        for i, (m, p) in enumerate(zip(means, precs)):
            d = x - m
            terms[i] = logw[i] + lognorms[i] - 0.5 * float(d @ (p @ d))
        peak = terms.max()
        if peak == -math.inf:
            return -math.inf
        return float(peak + math.log(np.exp(terms - peak).sum()))

    return TargetDensity(ndim, log_density)


def build_target(target: BuiltinTarget) -> TargetDensity:
    """Instantiate a density evaluator for a builtin target record."""
    p = target.params
    if target.kind == "mvn":
        return mvn_target(p["mean"], p.get("cov"))
    if target.kind == "rosenbrock":
        return rosenbrock_target(p["ndim"], p.get("scale", 100.0))
    return mixture_target(p["weights"], p["means"], p["covs"])


def eval_builtin(target: BuiltinTarget, point: np.ndarray) -> float:
    """Evaluate a builtin target's log-density at one point."""
    density = build_target(target)
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.size != density.ndim:
        raise UsageError(
            f"point has {point.size} coordinates, target expects {density.ndim}"
        )
    return density(point)


CHAIN_FORMATS = ("compact", "verbose")
FILE_ENCODINGS = ("ascii", "binary")
PARALLELISM_MODES = ("none", "single_chain", "multi_chain")

# (name, kind) for every SimSpec field, in echo order. Kinds drive the
# report/config serialization: int, u64, float, str, point, window.
SIMSPEC_FIELDS = (
    ("ndim", "int"),
    ("chain_size", "int"),
    ("start_point", "point"),
    ("seed", "u64"),
    ("output_prefix", "str"),
    ("chain_format", "str"),
    ("file_encoding", "str"),
    ("adaptation_period", "int"),
    ("greedy_adaptation_count", "int"),
    ("dr_stage_count", "int"),
    ("dr_scale_factor", "float"),
    ("proposal_scale", "float"),
    ("cov_epsilon", "float"),
    ("parallelism", "str"),
    ("num_workers", "int"),
    ("target_acceptance_window", "window"),
)


@dataclass
class SimSpec:
    """Complete simulation specification with defaulted fields resolved.

    Pass ``None`` (or omit) to take a default; ``provenance`` records, per
    field, whether the final value came from the user or from a default.
    ``chain_size`` counts verbose iterations: the start point occupies the
    first slot and every later slot is one proposal attempt, so the chain
    row weights always sum to exactly ``chain_size``.
    """

    ndim: int
    output_prefix: str
    chain_size: int | None = None
    start_point: np.ndarray | None = None
    seed: int | None = None
    chain_format: str | None = None
    file_encoding: str | None = None
    adaptation_period: int | None = None
    greedy_adaptation_count: int | None = None
    dr_stage_count: int | None = None
    dr_scale_factor: float | None = None
    proposal_scale: float | None = None
    cov_epsilon: float | None = None
    parallelism: str | None = None
    num_workers: int | None = None
    target_acceptance_window: tuple[float, float] | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        defaults = {
            "chain_size": 10_000,
            "start_point": None,  # zeros, filled after ndim check
            "seed": 0,
            "chain_format": "compact",
            "file_encoding": "ascii",
            "adaptation_period": None,  # 100 * ndim
            "greedy_adaptation_count": 0,
            "dr_stage_count": 1,
            "dr_scale_factor": 0.5,
            "proposal_scale": None,  # 2.38 / sqrt(ndim)
            "cov_epsilon": 1e-12,
            "parallelism": "none",
            "num_workers": 1,
            "target_acceptance_window": None,
        }
        self.ndim = int(self.ndim)
        if self.ndim < 1:
            raise UsageError(f"ndim must be positive, got {self.ndim}")
        if not isinstance(self.output_prefix, str) or not self.output_prefix:
            raise UsageError("output_prefix must be a nonempty path string")
        prov = dict(self.provenance)
        prov.setdefault("ndim", "user")
        prov.setdefault("output_prefix", "user")
        for name, default in defaults.items():
            if getattr(self, name) is None and name != "target_acceptance_window":
                prov.setdefault(name, "default")
            else:
                prov.setdefault(name, "user")
        if self.chain_size is None:
            self.chain_size = defaults["chain_size"]
        if self.start_point is None:
            self.start_point = np.zeros(self.ndim)
        if self.seed is None:
            self.seed = defaults["seed"]
        if self.chain_format is None:
            self.chain_format = defaults["chain_format"]
        if self.file_encoding is None:
            self.file_encoding = defaults["file_encoding"]
        if self.adaptation_period is None:
            self.adaptation_period = 100 * self.ndim
        if self.greedy_adaptation_count is None:
            self.greedy_adaptation_count = defaults["greedy_adaptation_count"]
        if self.dr_stage_count is None:
            self.dr_stage_count = defaults["dr_stage_count"]
        if self.dr_scale_factor is None:
            self.dr_scale_factor = defaults["dr_scale_factor"]
        if self.proposal_scale is None:
            self.proposal_scale = 2.38 / math.sqrt(self.ndim)
        if self.cov_epsilon is None:
            self.cov_epsilon = defaults["cov_epsilon"]
        if self.parallelism is None:
            self.parallelism = defaults["parallelism"]
        if self.num_workers is None:
            self.num_workers = defaults["num_workers"]
        self.provenance = prov

        self.chain_size = int(self.chain_size)
        self.seed = int(self.seed)
        self.adaptation_period = int(self.adaptation_period)
        self.greedy_adaptation_count = int(self.greedy_adaptation_count)
        self.dr_stage_count = int(self.dr_stage_count)
        self.num_workers = int(self.num_workers)
        self.dr_scale_factor = float(self.dr_scale_factor)
        self.proposal_scale = float(self.proposal_scale)
        self.cov_epsilon = float(self.cov_epsilon)
        self.start_point = np.asarray(self.start_point, dtype=float).reshape(-1)
        self._validate()

    def _validate(self):
        if self.chain_size < 1:
            raise UsageError(f"chain_size must be positive, got {self.chain_size}")
        if not 0 <= self.seed <= MASK64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        if self.start_point.size != self.ndim:
            raise UsageError(
                f"start_point has {self.start_point.size} coordinates, expected {self.ndim}"
            )
        if not np.all(np.isfinite(self.start_point)):
            raise UsageError("start_point coordinates must be finite")
        if self.chain_format not in CHAIN_FORMATS:
            raise UsageError(f"chain_format must be one of {CHAIN_FORMATS}")
        if self.file_encoding not in FILE_ENCODINGS:
            raise UsageError(f"file_encoding must be one of {FILE_ENCODINGS}")
        if self.adaptation_period < 1:
            raise UsageError("adaptation_period must be positive")
        if self.greedy_adaptation_count < 0:
            raise UsageError("greedy_adaptation_count must be nonnegative")
        if not 0 <= self.dr_stage_count <= 2:
            raise UsageError("dr_stage_count must be 0, 1, or 2 (maximum supported 2)")
        if not 0.0 < self.dr_scale_factor < 1.0:
            raise UsageError("dr_scale_factor must lie strictly in (0, 1)")
        if self.proposal_scale <= 0:
            raise UsageError("proposal_scale must be positive")
        if self.cov_epsilon <= 0:
            raise UsageError("cov_epsilon must be positive")
        if self.parallelism not in PARALLELISM_MODES:
            raise UsageError(f"parallelism must be one of {PARALLELISM_MODES}")
        if self.num_workers < 1:
            raise UsageError("num_workers must be positive")
        if self.target_acceptance_window is not None:
            lo, hi = self.target_acceptance_window
            if not (0.0 < lo < hi < 1.0):
                raise UsageError(
                    "target_acceptance_window must be a pair 0 < lo < hi < 1"
                )
            self.target_acceptance_window = (float(lo), float(hi))

    def __eq__(self, other):
        if not isinstance(other, SimSpec):
            return NotImplemented
        for name, _ in SIMSPEC_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if name == "start_point":
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    def with_updates(self, **changes) -> "SimSpec":
        """Copy with the given fields replaced (provenance marked user)."""
        prov = dict(self.provenance)
        for name in changes:
            prov[name] = "user"
        return replace(self, provenance=prov, **changes)

    def mismatched_fields(self, other: "SimSpec") -> list[str]:
        names = []
        for name, _ in SIMSPEC_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            same = np.array_equal(a, b) if name == "start_point" else a == b
            if not same:
                names.append(name)
        return names
