"""The DRAM main loop.

One iteration proposes a candidate, optionally retries rejection through
up to two shrunken delayed-rejection stages, and either starts a new
chain row or increments the live row's repeat weight. Adaptation,
checkpointing, and file flushes all share the same cadence so a crash
can lose at most one adaptation period of work.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import refinement
from .chainio import (
    ChainRow,
    ChainWriter,
    CompactChain,
    ParallelStats,
    ProgressWriter,
    ReportStats,
    RestartCheckpoint,
    RestartWriter,
    checkpoint_proposal,
    chain_byte_size,
    inspect_outputs,
    output_paths,
    read_chain,
    read_restart,
    rewrite_restart,
    write_chain,
    write_report,
    write_sample,
)
from .core import (
    NumericalError,
    ResumeRefused,
    RunAlreadyComplete,
    SimSpec,
    SplitMix64,
    TargetDensity,
    UsageError,
)
from .proposal import (
    ProposalState,
    adaptation_measure,
    factorize,
    initial_proposal,
    log_kernel,
    propose,
    update_mean_cov,
)

_LN2 = math.log(2.0)
PROGRESS_EVERY = 1000


@dataclass
class AdaptationRecord:
    iteration: int
    measure: float


@dataclass(slots=True)
class _Verdict:
    accepted: bool
    point: np.ndarray | None = None
    logf: float = -math.inf
    stage: int = 0
    stages_attempted: int = 1


MSG_KINDS = ("proposal_batch", "state_update", "shutdown")


@dataclass(slots=True)
class WorkerMsg:
    """One message on the coordinator/worker channel.

    ``proposal_batch`` flows worker to coordinator and carries the full
    DR attempt outcome plus its RNG consumption (stages attempted, each
    costing ndim Gaussians and one uniform on that worker's stream).
    ``state_update`` broadcasts a new chain head; ``shutdown`` ends a
    worker. The in-process backend delivers state updates by sharing the
    head directly, but the payloads are complete enough for a
    distributed transport to serialize instead.
    """

    rank: int
    kind: str
    payload: object = None

    def __post_init__(self):
        if self.rank < 1:
            raise UsageError("worker ranks are 1-based")
        if self.kind not in MSG_KINDS:
            raise UsageError(f"message kind must be one of {MSG_KINDS}")


class _RowStore:
    """Columnar accumulator for emitted chain rows."""

    def __init__(self, ndim: int):
        self.ndim = ndim
        self.process_id: list[int] = []
        self.dr_stage: list[int] = []
        self.mean_accept_rate: list[float] = []
        self.adaptation_measure: list[float] = []
        self.burnin_loc: list[int] = []
        self.weight: list[int] = []
        self.logf: list[float] = []
        self.states: list[np.ndarray] = []

    @property
    def n(self) -> int:
        return len(self.weight)

    def to_chain(self) -> CompactChain:
        states = (
            np.array(self.states, dtype=float).reshape(-1, self.ndim)
            if self.states
            else np.zeros((0, self.ndim))
        )
        return CompactChain(
            self.ndim,
            self.process_id,
            self.dr_stage,
            self.mean_accept_rate,
            self.adaptation_measure,
            self.burnin_loc,
            self.weight,
            self.logf,
            states,
        )

    @classmethod
    def from_chain(cls, chain: CompactChain) -> "_RowStore":
        store = cls(chain.ndim)
        store.process_id = chain.process_id.tolist()
        store.dr_stage = chain.dr_stage.tolist()
        store.mean_accept_rate = chain.mean_accept_rate.tolist()
        store.adaptation_measure = chain.adaptation_measure.tolist()
        store.burnin_loc = chain.burnin_loc.tolist()
        store.weight = chain.weight.tolist()
        store.logf = chain.logf.tolist()
        store.states = [chain.states[i].copy() for i in range(chain.n_rows)]
        return store


@dataclass
class SamplerState:
    """Live Markov-chain state plus run bookkeeping.

    ``iteration`` counts verbose slots: the start point occupies slot 1,
    so the sum of emitted row weights plus ``pending_weight`` always
    equals ``iteration``.
    """

    current: np.ndarray
    current_logf: float
    iteration: int
    accepted_count: int
    proposal: ProposalState
    rngs: list[SplitMix64]
    pending_weight: int
    adaptation_history: list[AdaptationRecord]
    live_dr_stage: int
    live_process_id: int
    rows: _RowStore
    absorbed_rows: int
    last_measure: float
    max_logf: float
    burnin_loc: int
    checkpoint_count: int

    @property
    def rng(self) -> SplitMix64:
        return self.rngs[0]


def metropolis_log_alpha(logf_current: float, logf_proposed: float) -> float:
    """Symmetric-proposal Metropolis log acceptance probability."""
    return min(0.0, logf_proposed - logf_current)


def _log1mexp(a: float) -> float:
    """log(1 - exp(a)) for a <= 0, stable across the whole range."""
    if a >= 0.0:
        return -math.inf
    if a < -_LN2:
        return math.log1p(-math.exp(a))
    return math.log(-math.expm1(a))


def dr_log_alpha2(
    logf_x: float,
    logf_y1: float,
    logf_y2: float,
    logq_y2_y1: float,
    logq_x_y1: float,
) -> float:
    """Log acceptance probability of the first delayed-rejection stage.

    ``y1`` is the rejected stage-0 candidate, ``y2`` the stage-1
    candidate; the ``logq`` values are stage-0 Gaussian kernel densities
    between the named points. Detailed balance holds because the path
    x -> y1 -> y2 and its reversal weigh the same kernels.
    """
    if logf_y2 == -math.inf:
        return -math.inf
    num = logf_y2 + logq_y2_y1 + _log1mexp(metropolis_log_alpha(logf_y2, logf_y1))
    den = logf_x + logq_x_y1 + _log1mexp(metropolis_log_alpha(logf_x, logf_y1))
    if num == -math.inf:
        return -math.inf
    if den == -math.inf:
        return 0.0
    return min(0.0, num - den)


def _dr2_half(logf_end: float, logf_mid: float, logq: float) -> float:
    # log[ pi(end) * q1(end, mid) * (1 - alpha1(end -> mid)) ]
    if logf_end == -math.inf:
        return -math.inf
    return logf_end + logq + _log1mexp(metropolis_log_alpha(logf_end, logf_mid))


def _dr_log_alpha3(
    logf_x: float,
    logf_y1: float,
    logf_y2: float,
    logf_y3: float,
    k0_x_y1: float,
    k0_y3_y2: float,
    k0_y2_y1: float,
    k1_x_y2: float,
    k1_y3_y1: float,
    log_alpha2_fwd: float,
) -> float:
    """Second delayed-rejection stage (third candidate), Mira's recursion."""
    if logf_y3 == -math.inf:
        return -math.inf
    rev_num = _dr2_half(logf_y1, logf_y2, k0_y2_y1)
    rev_den = _dr2_half(logf_y3, logf_y2, k0_y3_y2)
    log_alpha2_rev = -math.inf if rev_num == -math.inf else min(0.0, rev_num - rev_den)
    num = (
        logf_y3
        + k0_y3_y2
        + k1_y3_y1
        + _log1mexp(metropolis_log_alpha(logf_y3, logf_y2))
        + _log1mexp(log_alpha2_rev)
    )
    if num == -math.inf:
        return -math.inf
    den = (
        logf_x
        + k0_x_y1
        + k1_x_y2
        + _log1mexp(metropolis_log_alpha(logf_x, logf_y1))
        + _log1mexp(log_alpha2_fwd)
    )
    return min(0.0, num - den)


def _accepts(rng: SplitMix64, log_alpha: float) -> bool:
    # The uniform is always drawn: consumption must not depend on alpha.
    u = rng.uniform()
    if log_alpha >= 0.0:
        return True  # log(u) < 0 for every u in [0, 1)
    if u == 0.0:
        return log_alpha > -math.inf
    return math.log(u) < log_alpha


def _attempt(
    current: np.ndarray,
    current_logf: float,
    prop: ProposalState,
    spec: SimSpec,
    target: TargetDensity,
    rng: SplitMix64,
    iteration_hint: int,
) -> _Verdict:
    """One full DR attempt sequence from ``current`` on a single stream.

    Consumes ndim Gaussian deviates plus one uniform per stage actually
    attempted, and nothing else.
    """
    y1 = propose(prop, current, 0, rng)
    f1 = target(y1)
    if f1 != f1:  # fast NaN test
        raise NumericalError(f"target returned NaN near iteration {iteration_hint}")
    if _accepts(rng, f1 - current_logf if f1 < current_logf else 0.0):
        return _Verdict(True, y1, f1, 0, 1)
    if spec.dr_stage_count < 1:
        return _Verdict(False, stages_attempted=1)

    y2 = propose(prop, current, 1, rng)
    f2 = target(y2)
    if math.isnan(f2):
        raise NumericalError(f"target returned NaN near iteration {iteration_hint}")
    k0_y2_y1 = log_kernel(prop, y1 - y2, 0)
    k0_x_y1 = log_kernel(prop, y1 - current, 0)
    la2 = dr_log_alpha2(current_logf, f1, f2, k0_y2_y1, k0_x_y1)
    if _accepts(rng, la2):
        return _Verdict(True, y2, f2, 1, 2)
    if spec.dr_stage_count < 2:
        return _Verdict(False, stages_attempted=2)

    y3 = propose(prop, current, 2, rng)
    f3 = target(y3)
    if math.isnan(f3):
        raise NumericalError(f"target returned NaN near iteration {iteration_hint}")
    la3 = _dr_log_alpha3(
        current_logf,
        f1,
        f2,
        f3,
        k0_x_y1,
        log_kernel(prop, y2 - y3, 0),
        k0_y2_y1,
        log_kernel(prop, y2 - current, 1),
        log_kernel(prop, y1 - y3, 1),
        la2,
    )
    if _accepts(rng, la3):
        return _Verdict(True, y3, f3, 2, 3)
    return _Verdict(False, stages_attempted=3)


def _emit_live(state: SamplerState) -> ChainRow:
    """Close the live row and append it to the emitted rows."""
    rows = state.rows
    logf = state.current_logf
    point = state.current.copy()
    rows.process_id.append(state.live_process_id)
    rows.dr_stage.append(state.live_dr_stage)
    rate = state.accepted_count / state.iteration
    rows.mean_accept_rate.append(rate)
    rows.adaptation_measure.append(state.last_measure)
    rows.weight.append(state.pending_weight)
    rows.logf.append(logf)
    rows.states.append(point)
    if logf > state.max_logf:
        state.max_logf = logf
        threshold = logf - rows.ndim / 2.0
        state.burnin_loc = int(np.argmax(np.asarray(rows.logf) >= threshold))
    rows.burnin_loc.append(state.burnin_loc)
    return ChainRow(
        process_id=state.live_process_id,
        dr_stage=state.live_dr_stage,
        mean_accept_rate=rate,
        adaptation_measure=state.last_measure,
        burnin_loc=state.burnin_loc,
        weight=state.pending_weight,
        logf=logf,
        state=point,
    )


def _apply_verdict(state: SamplerState, verdict: _Verdict, process_id: int) -> ChainRow | None:
    """Bookkeeping for one consumed iteration; returns any emitted row."""
    if not verdict.accepted:
        state.pending_weight += 1
        return None
    state.accepted_count += 1
    row = _emit_live(state)
    state.current = verdict.point
    state.current_logf = verdict.logf
    state.live_dr_stage = verdict.stage
    state.live_process_id = process_id
    state.pending_weight = 1
    return row


def step(state: SamplerState, target: TargetDensity, spec: SimSpec):
    """One serial sweep: propose, delay-reject as configured, update weight.

    Returns ``(state, emitted_row_or_None)``; a row comes out only when a
    new state is accepted, closing the previous one.
    """
    state.iteration += 1
    verdict = _attempt(
        state.current, state.current_logf, state.proposal, spec, target,
        state.rngs[0], state.iteration,
    )
    return state, _apply_verdict(state, verdict, process_id=1)


def worker_attempt(state: SamplerState, target: TargetDensity, spec: SimSpec,
                   rank: int) -> WorkerMsg:
    """One worker's contribution to a cycle, as a channel message."""
    verdict = _attempt(
        state.current, state.current_logf, state.proposal, spec, target,
        state.rngs[rank - 1], state.iteration + 1,
    )
    return WorkerMsg(rank, "proposal_batch", verdict)


def fork_join_cycle(state: SamplerState, target: TargetDensity, spec: SimSpec,
                    max_steps: int | None = None):
    """One barrier-synchronized cycle of every worker stream.

    Each worker runs a full DR attempt from the shared head on its own
    stream and reports a ``proposal_batch`` message. The coordinator
    replays the verdicts as serial iterations in rank order: each
    rejection increments the head weight, and the lowest-rank acceptance
    wins the cycle (the new head is the in-process ``state_update``).
    Returns ``(state, winning_rank_or_None, row_or_None)``.
    """
    n = len(state.rngs)
    budget = n if max_steps is None else min(n, max_steps)
    messages = [worker_attempt(state, target, spec, rank) for rank in range(1, n + 1)]
    winner = None
    row = None
    for msg in messages[:budget]:
        state.iteration += 1
        verdict = msg.payload
        row = _apply_verdict(state, verdict, process_id=msg.rank)
        if verdict.accepted:
            winner = msg.rank
            break
    return state, winner, row


def detect_burnin(chain, ndim: int) -> int:
    """Smallest row index whose logf reaches within ndim/2 of the maximum."""
    logf = np.asarray(chain.logf if hasattr(chain, "logf") else chain, dtype=float)
    if logf.size == 0:
        raise UsageError("detect_burnin requires a nonempty chain")
    return int(np.argmax(logf >= logf.max() - ndim / 2.0))


def adapt_if_due(state: SamplerState, spec: SimSpec) -> SamplerState:
    """Absorb newly emitted rows into the proposal at period boundaries.

    During the first ``greedy_adaptation_count`` events only the accepted
    states since the last event are absorbed, unweighted, into fresh
    statistics (re-centering the proposal). Afterwards the weighted rows
    accumulate over the whole history. No-op off the period boundary.
    """
    if state.iteration % spec.adaptation_period != 0:
        return state
    old = state.proposal
    rows = state.rows
    new_rows = range(state.absorbed_rows, rows.n)
    greedy = old.adaptation_count < spec.greedy_adaptation_count
    new = old
    if len(new_rows) > 0:
        if greedy:
            fresh = old.copy()
            fresh.mean = np.zeros(rows.ndim)
            fresh.scatter = np.zeros((rows.ndim, rows.ndim))
            fresh.sample_count = 0
            new = update_mean_cov(fresh, [(rows.states[i], 1) for i in new_rows])
        else:
            new = update_mean_cov(old, [(rows.states[i], rows.weight[i]) for i in new_rows])
    if spec.target_acceptance_window is not None:
        lo, hi = spec.target_acceptance_window
        rate = state.accepted_count / state.iteration
        nudge = 0.9 if rate < lo else 1.1 if rate > hi else None
        if nudge is not None:
            new = new.copy() if new is old else new
            new.scale *= nudge
            new = factorize(new)
    measure = adaptation_measure(old, new) if new is not old else 0.0
    new = new.copy() if new is old else new
    new.adaptation_count = old.adaptation_count + 1
    state.proposal = new
    state.absorbed_rows = rows.n
    state.last_measure = measure
    state.adaptation_history.append(AdaptationRecord(state.iteration, measure))
    return state


def init_state(spec: SimSpec, target: TargetDensity) -> SamplerState:
    """Fresh sampler state: start point in slot 1, per-rank RNG streams."""
    if target.ndim != spec.ndim:
        raise UsageError(
            f"target has ndim {target.ndim}, simulation spec says {spec.ndim}"
        )
    logf0 = target(spec.start_point)
    if math.isnan(logf0):
        raise NumericalError("target returned NaN at the start point")
    if logf0 == -math.inf:
        raise UsageError("start_point lies outside the target support")
    n_streams = spec.num_workers if spec.parallelism == "single_chain" else 1
    rngs = [SplitMix64(spec.seed, rank) for rank in range(1, n_streams + 1)]
    prop = initial_proposal(
        spec.ndim, spec.proposal_scale, spec.cov_epsilon, spec.dr_scale_factor
    )
    return SamplerState(
        current=spec.start_point.copy(),
        current_logf=logf0,
        iteration=1,
        accepted_count=0,
        proposal=prop,
        rngs=rngs,
        pending_weight=1,
        adaptation_history=[],
        live_dr_stage=0,
        live_process_id=1,
        rows=_RowStore(spec.ndim),
        absorbed_rows=0,
        last_measure=0.0,
        max_logf=-math.inf,
        burnin_loc=0,
        checkpoint_count=0,
    )


def _make_checkpoint(state: SamplerState) -> RestartCheckpoint:
    prop = state.proposal
    ck = RestartCheckpoint(
        checkpoint_index=state.checkpoint_count,
        iteration=state.iteration,
        rows_emitted=state.rows.n,
        measure=state.last_measure,
        rng_states=[rng.getstate() for rng in state.rngs],
        pending_weight=state.pending_weight,
        current_logf=state.current_logf,
        current_state=state.current.copy(),
        live_dr_stage=state.live_dr_stage,
        live_process_id=state.live_process_id,
        mean=prop.mean.copy(),
        cov=prop.cov.copy(),
        scatter=prop.scatter.copy(),
        scale=prop.scale,
        epsilon=prop.epsilon,
        eps_rel=prop.eps_rel,
        dr_scale=prop.dr_scale,
        sample_count=prop.sample_count,
        adaptation_count=prop.adaptation_count,
    )
    state.checkpoint_count += 1
    return ck


@dataclass
class SimulationOutputs:
    """Everything a finished run produced, in memory and on disk."""

    chain: CompactChain
    refined: refinement.RefinedSample
    report: ReportStats
    paths: dict


class _Run:
    """Owns the output files and the drive loop for one chain."""

    def __init__(self, spec: SimSpec, target: TargetDensity, state: SamplerState,
                 on_checkpoint=None, append: bool = False):
        self.spec = spec
        self.target = target
        self.state = state
        self.on_checkpoint = on_checkpoint
        self.paths = output_paths(spec.output_prefix, spec.file_encoding)
        parent = os.path.dirname(spec.output_prefix)
        if parent:
            os.makedirs(parent, exist_ok=True)
        existing = 0
        initial_bytes = None
        if append:
            kept = state.rows.to_chain()
            existing = kept.total_weight if spec.chain_format == "verbose" else kept.n_rows
            initial_bytes = (
                chain_byte_size(kept, "compact", spec.file_encoding),
                chain_byte_size(kept, "verbose", spec.file_encoding),
            )
        self.chain_writer = ChainWriter(
            self.paths["chain"], spec.ndim, spec.chain_format, spec.file_encoding,
            append=append, existing_rows=existing, initial_bytes=initial_bytes,
        )
        self.restart_writer = RestartWriter(self.paths["restart"], spec, append=append)
        self.progress = ProgressWriter(self.paths["progress"], append=append)
        self.t0 = time.perf_counter()

    def checkpoint(self) -> None:
        # Rows first, checkpoint second: anything a flushed checkpoint
        # refers to must already be durable.
        self.chain_writer.flush()
        self.restart_writer.append(_make_checkpoint(self.state))
        if self.on_checkpoint is not None:
            self.on_checkpoint(self.state.iteration)

    def drive(self) -> SimulationOutputs:
        spec, state = self.spec, self.state
        period = spec.adaptation_period
        serial = len(state.rngs) == 1
        next_progress = (state.iteration // PROGRESS_EVERY + 1) * PROGRESS_EVERY
        try:
            while state.iteration < spec.chain_size:
                if serial:
                    _, row = step(state, self.target, spec)
                else:
                    boundary = (state.iteration // period + 1) * period
                    max_steps = min(spec.chain_size, boundary) - state.iteration
                    _, _, row = fork_join_cycle(state, self.target, spec, max_steps)
                if row is not None:
                    self.chain_writer.append(row)
                while next_progress <= state.iteration:
                    self.progress.line(
                        next_progress, state.accepted_count,
                        state.accepted_count / state.iteration,
                        state.last_measure, time.perf_counter() - self.t0,
                    )
                    next_progress += PROGRESS_EVERY
                if state.iteration % period == 0:
                    adapt_if_due(state, spec)
                    self.checkpoint()
            final_row = _emit_live(state)
            self.chain_writer.append(final_row)
            self.chain_writer.close()
            if state.iteration % PROGRESS_EVERY != 0:
                self.progress.line(
                    state.iteration, state.accepted_count,
                    state.accepted_count / state.iteration,
                    state.last_measure, time.perf_counter() - self.t0,
                )
        finally:
            self.chain_writer.close()
            self.restart_writer.close()
            self.progress.close()
        return self._finalize()

    def _finalize(self) -> SimulationOutputs:
        spec, state = self.spec, self.state
        chain = state.rows.to_chain()
        burnin = state.burnin_loc
        refined = refinement.refine(chain, burnin)
        tau0 = refined.iac_history[0] if refined.iac_history else 1.0
        post = int(chain.weight[burnin:].sum())
        ess = post / tau0
        write_sample(refined, self.paths["sample"])
        disk_bytes = os.path.getsize(self.paths["chain"])
        if spec.chain_format == "compact":
            compact_bytes = disk_bytes
            verbose_bytes = self.chain_writer.verbose_bytes
        else:
            verbose_bytes = disk_bytes
            compact_bytes = self.chain_writer.compact_bytes
        parallel_stats = None
        if spec.parallelism == "single_chain" and state.accepted_count > 0:
            from .parallel import contribution_stats, optimal_num_workers, predict_speedup

            mu = state.accepted_count / spec.chain_size
            contrib = contribution_stats(chain.process_id, spec.num_workers)
            n_star = optimal_num_workers(mu) if mu < 1.0 else 1
            n_max = max(2 * n_star, spec.num_workers)
            parallel_stats = ParallelStats(
                mu=mu,
                fitted_p=contrib.fitted_p,
                fit_distance=contrib.fit_distance,
                optimal_workers=n_star,
                speedup=[predict_speedup(mu, n) for n in range(1, n_max + 1)],
            )
        report = ReportStats(
            spec=spec,
            accepted_count=state.accepted_count,
            mean_accept_rate=state.accepted_count / spec.chain_size,
            burnin_loc=burnin,
            iac_history=list(refined.iac_history),
            ess=ess,
            compact_bytes=compact_bytes,
            verbose_bytes=verbose_bytes,
            size_ratio=verbose_bytes / compact_bytes,
            parallel=parallel_stats,
        )
        write_report(report, self.paths["report"])
        return SimulationOutputs(chain=chain, refined=refined, report=report,
                                 paths=dict(self.paths))


def run_sampler(spec: SimSpec, target: TargetDensity, *, on_checkpoint=None) -> SimulationOutputs:
    """Run one chain to ``chain_size`` iterations and write all outputs.

    Refuses to clobber a complete run for the same prefix; an incomplete
    one enters the restart protocol instead. ``on_checkpoint`` is called
    with the iteration number right after each checkpoint flush (used by
    progress displays and interrupt testing).
    """
    if spec.parallelism == "multi_chain":
        raise UsageError("multi_chain runs go through run_multi_chain")
    status, _ = inspect_outputs(spec)
    if status == "complete":
        raise RunAlreadyComplete(
            f"outputs for prefix {spec.output_prefix!r} already hold a complete run"
        )
    if status == "incomplete":
        return resume(spec, target, on_checkpoint=on_checkpoint)
    state = init_state(spec, target)
    run = _Run(spec, target, state, on_checkpoint=on_checkpoint)
    run.checkpoint()
    return run.drive()


def resume(spec: SimSpec, target: TargetDensity, *, on_checkpoint=None) -> SimulationOutputs:
    """Continue an interrupted run exactly where its last checkpoint left it.

    The spec must match the one echoed into the restart file (same seed,
    same prefix, same everything); rows past the checkpoint are discarded
    and regenerated, so the finished chain file is identical to what the
    uninterrupted run would have written.
    """
    paths = output_paths(spec.output_prefix, spec.file_encoding)
    if not os.path.exists(paths["chain"]):
        raise ResumeRefused(f"no chain file at {paths['chain']!r} to resume")
    if not os.path.exists(paths["restart"]):
        raise ResumeRefused(f"missing restart file {paths['restart']!r}")
    file_spec, records = read_restart(paths["restart"])
    mismatched = spec.mismatched_fields(file_spec)
    if mismatched:
        raise ResumeRefused(
            "simulation spec does not match the interrupted run "
            f"(differing fields: {', '.join(mismatched)})"
        )
    disk_chain = read_chain(paths["chain"])
    if disk_chain.total_weight >= spec.chain_size:
        raise RunAlreadyComplete(f"run for prefix {spec.output_prefix!r} is already complete")
    usable = [i for i, r in enumerate(records) if r.rows_emitted <= disk_chain.n_rows]
    if not usable:
        raise ResumeRefused("restart file holds no checkpoint covered by the chain file")
    idx = usable[-1]
    ck = records[idx]
    kept = disk_chain.sliced(ck.rows_emitted)
    write_chain(kept, paths["chain"], spec.chain_format, spec.file_encoding)
    rewrite_restart(paths["restart"], spec, records[: idx + 1])

    state = SamplerState(
        current=ck.current_state.copy(),
        current_logf=ck.current_logf,
        iteration=ck.iteration,
        accepted_count=ck.rows_emitted,
        proposal=checkpoint_proposal(ck),
        rngs=[SplitMix64.from_state(s) for s in ck.rng_states],
        pending_weight=ck.pending_weight,
        adaptation_history=[
            AdaptationRecord(r.iteration, r.measure) for r in records[1 : idx + 1]
        ],
        live_dr_stage=ck.live_dr_stage,
        live_process_id=ck.live_process_id,
        rows=_RowStore.from_chain(kept),
        absorbed_rows=ck.rows_emitted,
        last_measure=ck.measure,
        max_logf=float(kept.logf.max()) if kept.n_rows else -math.inf,
        burnin_loc=detect_burnin(kept, spec.ndim) if kept.n_rows else 0,
        checkpoint_count=ck.checkpoint_index + 1,
    )
    run = _Run(spec, target, state, on_checkpoint=on_checkpoint, append=True)
    return run.drive()
