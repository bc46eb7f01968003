"""Readers and writers for the five output files, plus checkpoint records.

Files per run prefix: chain (compact or verbose, ascii or binary),
restart, sample, report, progress. ASCII reals carry 17 significant
digits so every 64-bit float round-trips exactly; binary layouts are
little-endian and versioned by a 4-byte magic. Readers tolerate a
truncated final row or record, because interrupts happen mid-write.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .core import SIMSPEC_FIELDS, SimSpec, UsageError
from .proposal import ProposalState

CHAIN_MAGIC = b"DRMF"
RESTART_MAGIC = b"DRRS"
FORMAT_VERSION = 1

CHAIN_COLUMNS = (
    "ProcessID",
    "DelayedRejectionStage",
    "MeanAcceptanceRate",
    "AdaptationMeasure",
    "BurninLocation",
    "SampleWeight",
    "SampleLogFunc",
)


class ParseError(UsageError):
    """Malformed file content, with path and line context."""


def fmt_float(x: float) -> str:
    """17 significant digits: the minimum that round-trips binary64."""
    return format(x, ".17g")


def output_paths(prefix: str, encoding: str) -> dict:
    ext = "txt" if encoding == "ascii" else "bin"
    return {
        "chain": f"{prefix}_chain.{ext}",
        "restart": f"{prefix}_restart.{ext}",
        "sample": f"{prefix}_sample.txt",
        "report": f"{prefix}_report.txt",
        "progress": f"{prefix}_progress.txt",
    }


@dataclass(slots=True)
class ChainRow:
    """One accepted state with its repeat weight and bookkeeping columns."""

    process_id: int
    dr_stage: int
    mean_accept_rate: float
    adaptation_measure: float
    burnin_loc: int
    weight: int
    logf: float
    state: np.ndarray


class CompactChain:
    """Weighted sequence of unique accepted states, stored columnar."""

    def __init__(
        self,
        ndim: int,
        process_id,
        dr_stage,
        mean_accept_rate,
        adaptation_measure,
        burnin_loc,
        weight,
        logf,
        states,
        truncated: bool = False,
    ):
        self.ndim = int(ndim)
        self.process_id = np.asarray(process_id, dtype=np.int64)
        self.dr_stage = np.asarray(dr_stage, dtype=np.int64)
        self.mean_accept_rate = np.asarray(mean_accept_rate, dtype=float)
        self.adaptation_measure = np.asarray(adaptation_measure, dtype=float)
        self.burnin_loc = np.asarray(burnin_loc, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.int64)
        self.logf = np.asarray(logf, dtype=float)
        self.states = np.asarray(states, dtype=float).reshape(-1, self.ndim)
        self.truncated = truncated
        if np.any(self.weight < 1):
            raise UsageError("chain row weights must be >= 1")

    @property
    def header(self) -> list[str]:
        return list(CHAIN_COLUMNS) + [f"Var{i + 1}" for i in range(self.ndim)]

    @property
    def n_rows(self) -> int:
        return self.weight.size

    @property
    def total_weight(self) -> int:
        return int(self.weight.sum())

    def row(self, i: int) -> ChainRow:
        return ChainRow(
            process_id=int(self.process_id[i]),
            dr_stage=int(self.dr_stage[i]),
            mean_accept_rate=float(self.mean_accept_rate[i]),
            adaptation_measure=float(self.adaptation_measure[i]),
            burnin_loc=int(self.burnin_loc[i]),
            weight=int(self.weight[i]),
            logf=float(self.logf[i]),
            state=self.states[i].copy(),
        )

    @property
    def rows(self) -> list[ChainRow]:
        return [self.row(i) for i in range(self.n_rows)]

    def __len__(self) -> int:
        return self.n_rows

    def __eq__(self, other):
        if not isinstance(other, CompactChain):
            return NotImplemented
        return (
            self.ndim == other.ndim
            and np.array_equal(self.process_id, other.process_id)
            and np.array_equal(self.dr_stage, other.dr_stage)
            and np.array_equal(self.mean_accept_rate, other.mean_accept_rate)
            and np.array_equal(self.adaptation_measure, other.adaptation_measure)
            and np.array_equal(self.burnin_loc, other.burnin_loc)
            and np.array_equal(self.weight, other.weight)
            and np.array_equal(self.logf, other.logf)
            and np.array_equal(self.states, other.states)
        )

    @classmethod
    def from_rows(cls, rows, ndim: int) -> "CompactChain":
        return cls(
            ndim,
            [r.process_id for r in rows],
            [r.dr_stage for r in rows],
            [r.mean_accept_rate for r in rows],
            [r.adaptation_measure for r in rows],
            [r.burnin_loc for r in rows],
            [r.weight for r in rows],
            [r.logf for r in rows],
            np.array([r.state for r in rows], dtype=float).reshape(-1, ndim),
        )

    def sliced(self, n_rows: int) -> "CompactChain":
        return CompactChain(
            self.ndim,
            self.process_id[:n_rows],
            self.dr_stage[:n_rows],
            self.mean_accept_rate[:n_rows],
            self.adaptation_measure[:n_rows],
            self.burnin_loc[:n_rows],
            self.weight[:n_rows],
            self.logf[:n_rows],
            self.states[:n_rows],
        )


def _row_struct(ndim: int) -> struct.Struct:
    return struct.Struct(f"<iidddqqd{ndim}d")


def _ascii_row(row: ChainRow, weight: int) -> str:
    cols = [
        str(row.process_id),
        str(row.dr_stage),
        fmt_float(row.mean_accept_rate),
        fmt_float(row.adaptation_measure),
        str(row.burnin_loc),
        str(weight),
        fmt_float(row.logf),
    ]
    cols.extend(fmt_float(v) for v in row.state)
    return ",".join(cols)


def _pack_row(packer: struct.Struct, row: ChainRow, weight: int) -> bytes:
    # Third f64 is a reserved rate slot in the on-disk layout.
    return packer.pack(
        row.process_id,
        row.dr_stage,
        row.mean_accept_rate,
        row.adaptation_measure,
        0.0,
        row.burnin_loc,
        weight,
        row.logf,
        *row.state,
    )


class ChainWriter:
    """Streaming chain writer; rows become durable only on flush().

    The sampler flushes right before each checkpoint so that everything a
    checkpoint refers to is already on disk. The writer also keeps exact
    byte tallies of what the chain occupies in BOTH formats so the report
    can state the compact-versus-verbose ratio without re-serializing.
    """

    def __init__(self, path: str, ndim: int, chain_format: str, encoding: str,
                 append: bool = False, existing_rows: int = 0,
                 initial_bytes: tuple[int, int] | None = None):
        self.path = path
        self.ndim = ndim
        self.chain_format = chain_format
        self.encoding = encoding
        self._packer = _row_struct(ndim)
        self._count = existing_rows
        header = list(CHAIN_COLUMNS) + [f"Var{i + 1}" for i in range(ndim)]
        self._header_len = len((",".join(header) + "\n").encode("utf-8"))
        if encoding == "ascii":
            base = self._header_len
        else:
            base = len(CHAIN_MAGIC) + struct.calcsize("<IIQ")
        self.compact_bytes, self.verbose_bytes = initial_bytes or (base, base)
        if encoding == "ascii":
            mode = "a" if append else "w"
            self._fh = open(path, mode, encoding="utf-8", newline="\n")
            if not append:
                self._fh.write(",".join(header) + "\n")
        else:
            if append:
                self._fh = open(path, "r+b")
                self._fh.seek(0, os.SEEK_END)
            else:
                self._fh = open(path, "wb")
                self._fh.write(CHAIN_MAGIC)
                self._fh.write(struct.pack("<IIQ", FORMAT_VERSION, ndim, 0))

    def append(self, row: ChainRow) -> None:
        w = row.weight
        if self.encoding == "ascii":
            # Row content is pure ASCII: len(str) == byte count.
            if self.chain_format == "verbose":
                line = _ascii_row(row, 1) + "\n"
                self._fh.write(line * w)
                self._count += w
                unit = len(line)
                self.verbose_bytes += unit * w
                # The compact twin differs only in the weight column.
                self.compact_bytes += unit - 1 + len(str(w))
            else:
                line = _ascii_row(row, w) + "\n"
                self._fh.write(line)
                self._count += 1
                unit = len(line)
                self.compact_bytes += unit
                self.verbose_bytes += (unit - len(str(w)) + 1) * w
        else:
            if self.chain_format == "verbose":
                self._fh.write(_pack_row(self._packer, row, 1) * w)
                self._count += w
            else:
                self._fh.write(_pack_row(self._packer, row, w))
                self._count += 1
            self.compact_bytes += self._packer.size
            self.verbose_bytes += self._packer.size * w

    def flush(self) -> None:
        self._fh.flush()
        if self.encoding == "binary":
            pos = self._fh.tell()
            self._fh.seek(len(CHAIN_MAGIC) + 8)
            self._fh.write(struct.pack("<Q", self._count))
            self._fh.seek(pos)
            self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()


def write_chain(chain: CompactChain, path: str, chain_format: str = "compact",
                encoding: str = "ascii") -> None:
    """Write a whole chain in one shot."""
    writer = ChainWriter(path, chain.ndim, chain_format, encoding)
    try:
        for i in range(chain.n_rows):
            writer.append(chain.row(i))
    finally:
        writer.close()


def chain_byte_size(chain: CompactChain, chain_format: str, encoding: str) -> int:
    """Byte size the chain would occupy on disk in the given format.

    Row content is pure ASCII, so string length equals byte length.
    """
    if encoding == "ascii":
        header = list(CHAIN_COLUMNS) + [f"Var{i + 1}" for i in range(chain.ndim)]
        total = len(",".join(header)) + 1
        for i in range(chain.n_rows):
            row = chain.row(i)
            if chain_format == "verbose":
                total += (len(_ascii_row(row, 1)) + 1) * row.weight
            else:
                total += len(_ascii_row(row, row.weight)) + 1
        return total
    packer = _row_struct(chain.ndim)
    nrows = chain.total_weight if chain_format == "verbose" else chain.n_rows
    return len(CHAIN_MAGIC) + struct.calcsize("<IIQ") + nrows * packer.size


def _recompact(rows: list[ChainRow]) -> list[ChainRow]:
    """Merge consecutive rows with identical states (verbose inverse)."""
    merged: list[ChainRow] = []
    for row in rows:
        if (
            merged
            and row.logf == merged[-1].logf
            and np.array_equal(row.state, merged[-1].state)
        ):
            merged[-1].weight += row.weight
        else:
            merged.append(row)
    return merged


def read_chain(path: str) -> CompactChain:
    """Read a chain file, auto-detecting encoding from its magic bytes.

    Verbose files are re-compacted on read. A truncated final row is
    dropped and flagged via the returned chain's ``truncated`` attribute.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == CHAIN_MAGIC:
        return _read_chain_binary(path)
    return _read_chain_ascii(path)


def _parse_ascii_row(parts: list[str], ndim: int) -> ChainRow:
    return ChainRow(
        process_id=int(parts[0]),
        dr_stage=int(parts[1]),
        mean_accept_rate=float(parts[2]),
        adaptation_measure=float(parts[3]),
        burnin_loc=int(parts[4]),
        weight=int(parts[5]),
        logf=float(parts[6]),
        state=np.array([float(v) for v in parts[7 : 7 + ndim]], dtype=float),
    )


def _read_chain_ascii(path: str) -> CompactChain:
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        content = fh.read()
    lines = content.split("\n")
    truncated = not content.endswith("\n")
    # The last element is either "" (complete final line) or a partial
    # line cut off by an interrupt; both are dropped.
    lines.pop()
    if not lines:
        raise ParseError(f"{path}:1: no complete chain header")
    header = lines[0].split(",")
    ndim = len(header) - len(CHAIN_COLUMNS)
    if ndim < 1 or header[: len(CHAIN_COLUMNS)] != list(CHAIN_COLUMNS):
        raise ParseError(f"{path}:1: unrecognized chain header")
    rows: list[ChainRow] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            if len(parts) != len(CHAIN_COLUMNS) + ndim:
                raise ValueError("wrong column count")
            rows.append(_parse_ascii_row(parts, ndim))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    rows = _recompact(rows)
    if not rows:
        chain = CompactChain(ndim, [], [], [], [], [], [], [], np.zeros((0, ndim)))
        chain.truncated = truncated
        return chain
    chain = CompactChain.from_rows(rows, ndim)
    chain.truncated = truncated
    return chain


def _read_chain_binary(path: str) -> CompactChain:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_len = len(CHAIN_MAGIC) + struct.calcsize("<IIQ")
    if len(blob) < header_len:
        raise ParseError(f"{path}: truncated binary header")
    version, ndim, _count = struct.unpack_from("<IIQ", blob, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported chain format version {version}")
    packer = _row_struct(ndim)
    body = blob[header_len:]
    n_complete, remainder = divmod(len(body), packer.size)
    rows = []
    for i in range(n_complete):
        vals = packer.unpack_from(body, i * packer.size)
        rows.append(
            ChainRow(
                process_id=vals[0],
                dr_stage=vals[1],
                mean_accept_rate=vals[2],
                adaptation_measure=vals[3],
                burnin_loc=vals[5],
                weight=vals[6],
                logf=vals[7],
                state=np.array(vals[8:], dtype=float),
            )
        )
    rows = _recompact(rows)
    if not rows:
        chain = CompactChain(ndim, [], [], [], [], [], [], [], np.zeros((0, ndim)))
        chain.truncated = remainder != 0
        return chain
    chain = CompactChain.from_rows(rows, ndim)
    chain.truncated = remainder != 0
    return chain


# ---------------------------------------------------------------------------
# Simulation spec echo (shared by the restart header and the report file)


def spec_value_to_text(spec: SimSpec, name: str, kind: str) -> str:
    value = getattr(spec, name)
    if kind == "point":
        return ",".join(fmt_float(v) for v in value)
    if kind == "window":
        return "none" if value is None else ",".join(fmt_float(v) for v in value)
    if kind == "float":
        return fmt_float(value)
    return str(value)


def spec_text_to_value(kind: str, text: str):
    if kind in ("int", "u64"):
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "point":
        return np.array([float(v) for v in text.split(",")], dtype=float)
    if kind == "window":
        if text == "none":
            return None
        lo, hi = text.split(",")
        return (float(lo), float(hi))
    return text


def spec_echo_lines(spec: SimSpec, with_provenance: bool = False) -> list[str]:
    lines = []
    for name, kind in SIMSPEC_FIELDS:
        text = spec_value_to_text(spec, name, kind)
        if with_provenance:
            lines.append(f"{name} = {text}  # {spec.provenance.get(name, 'user')}")
        else:
            lines.append(f"{name} = {text}")
    return lines


def spec_from_echo(pairs: dict, provenance: dict | None = None) -> SimSpec:
    kwargs = {}
    for name, kind in SIMSPEC_FIELDS:
        if name not in pairs:
            raise ParseError(f"spec echo is missing field {name!r}")
        kwargs[name] = spec_text_to_value(kind, pairs[name])
    return SimSpec(provenance=dict(provenance or {}), **kwargs)


# ---------------------------------------------------------------------------
# Restart checkpoints


@dataclass
class RestartCheckpoint:
    """Everything needed to continue a run exactly as if never stopped."""

    checkpoint_index: int
    iteration: int
    rows_emitted: int
    measure: float
    rng_states: list[tuple[int, int, float | None]]
    pending_weight: int
    current_logf: float
    current_state: np.ndarray
    live_dr_stage: int
    live_process_id: int
    mean: np.ndarray
    cov: np.ndarray
    scatter: np.ndarray
    scale: float
    epsilon: float
    eps_rel: float
    dr_scale: float
    sample_count: int
    adaptation_count: int

    def __eq__(self, other):
        if not isinstance(other, RestartCheckpoint):
            return NotImplemented
        scalars = (
            "checkpoint_index", "iteration", "rows_emitted", "measure",
            "pending_weight", "current_logf", "live_dr_stage", "live_process_id",
            "scale", "epsilon", "eps_rel", "dr_scale", "sample_count",
            "adaptation_count",
        )
        return (
            all(getattr(self, n) == getattr(other, n) for n in scalars)
            and self.rng_states == other.rng_states
            and np.array_equal(self.current_state, other.current_state)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
            and np.array_equal(self.scatter, other.scatter)
        )


def checkpoint_proposal(ck: RestartCheckpoint) -> ProposalState:
    """Rebuild the proposal from a checkpoint, bit-identical to the run's."""
    from .proposal import chol_derived

    base = ck.scale**2 * ck.cov
    chol = np.linalg.cholesky(base + ck.epsilon * np.eye(ck.mean.size))
    inv, logdet = chol_derived(chol)
    return ProposalState(
        mean=ck.mean.copy(),
        scatter=ck.scatter.copy(),
        cov=ck.cov.copy(),
        chol_lower=chol,
        chol_inv=inv,
        chol_logdet=logdet,
        scale=ck.scale,
        epsilon=ck.epsilon,
        eps_rel=ck.eps_rel,
        dr_scale=ck.dr_scale,
        sample_count=ck.sample_count,
        adaptation_count=ck.adaptation_count,
    )


def _triu_pack(mat: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(mat.shape[0])
    return mat[i, j]


def _triu_unpack(flat: np.ndarray, ndim: int) -> np.ndarray:
    mat = np.zeros((ndim, ndim))
    i, j = np.triu_indices(ndim)
    mat[i, j] = flat
    mat[j, i] = flat
    return mat


def _rng_state_text(state: tuple[int, int, float | None]) -> str:
    s, stream, cache = state
    cache_text = "none" if cache is None else fmt_float(cache)
    return f"{s},{stream},{cache_text}"


def _rng_state_parse(text: str) -> tuple[int, int, float | None]:
    s, stream, cache = text.split(",")
    return (int(s), int(stream), None if cache == "none" else float(cache))


def _checkpoint_lines(ck: RestartCheckpoint) -> list[str]:
    lines = [
        f"[checkpoint {ck.checkpoint_index}]",
        f"iteration = {ck.iteration}",
        f"rows_emitted = {ck.rows_emitted}",
        f"measure = {fmt_float(ck.measure)}",
        f"pending_weight = {ck.pending_weight}",
        f"current_logf = {fmt_float(ck.current_logf)}",
        "current_state = " + ",".join(fmt_float(v) for v in ck.current_state),
        f"live_dr_stage = {ck.live_dr_stage}",
        f"live_process_id = {ck.live_process_id}",
        f"rng_count = {len(ck.rng_states)}",
    ]
    for i, st in enumerate(ck.rng_states, start=1):
        lines.append(f"rng_{i} = {_rng_state_text(st)}")
    lines.extend(
        [
            f"scale = {fmt_float(ck.scale)}",
            f"epsilon = {fmt_float(ck.epsilon)}",
            f"eps_rel = {fmt_float(ck.eps_rel)}",
            f"dr_scale = {fmt_float(ck.dr_scale)}",
            f"sample_count = {ck.sample_count}",
            f"adaptation_count = {ck.adaptation_count}",
            "mean = " + ",".join(fmt_float(v) for v in ck.mean),
            "cov_upper = " + ",".join(fmt_float(v) for v in _triu_pack(ck.cov)),
            "scatter_upper = " + ",".join(fmt_float(v) for v in _triu_pack(ck.scatter)),
        ]
    )
    return lines


def _checkpoint_from_pairs(index: int, pairs: dict, ndim: int) -> RestartCheckpoint:
    rng_count = int(pairs["rng_count"])
    rng_states = [_rng_state_parse(pairs[f"rng_{i}"]) for i in range(1, rng_count + 1)]
    to_array = lambda text: np.array([float(v) for v in text.split(",")], dtype=float)
    return RestartCheckpoint(
        checkpoint_index=index,
        iteration=int(pairs["iteration"]),
        rows_emitted=int(pairs["rows_emitted"]),
        measure=float(pairs["measure"]),
        rng_states=rng_states,
        pending_weight=int(pairs["pending_weight"]),
        current_logf=float(pairs["current_logf"]),
        current_state=to_array(pairs["current_state"]),
        live_dr_stage=int(pairs["live_dr_stage"]),
        live_process_id=int(pairs["live_process_id"]),
        mean=to_array(pairs["mean"]),
        cov=_triu_unpack(to_array(pairs["cov_upper"]), ndim),
        scatter=_triu_unpack(to_array(pairs["scatter_upper"]), ndim),
        scale=float(pairs["scale"]),
        epsilon=float(pairs["epsilon"]),
        eps_rel=float(pairs["eps_rel"]),
        dr_scale=float(pairs["dr_scale"]),
        sample_count=int(pairs["sample_count"]),
        adaptation_count=int(pairs["adaptation_count"]),
    )


def _pack_checkpoint(ck: RestartCheckpoint, ndim: int) -> bytes:
    tri = ndim * (ndim + 1) // 2
    parts = [
        struct.pack(
            "<IQQdQd",
            ck.checkpoint_index,
            ck.iteration,
            ck.rows_emitted,
            ck.measure,
            ck.pending_weight,
            ck.current_logf,
        ),
        struct.pack(f"<{ndim}d", *ck.current_state),
        struct.pack("<iiI", ck.live_dr_stage, ck.live_process_id, len(ck.rng_states)),
    ]
    for s, stream, cache in ck.rng_states:
        parts.append(
            struct.pack("<QQBd", s, stream, cache is not None, cache or 0.0)
        )
    parts.append(
        struct.pack(
            "<ddddQQ",
            ck.scale,
            ck.epsilon,
            ck.eps_rel,
            ck.dr_scale,
            ck.sample_count,
            ck.adaptation_count,
        )
    )
    parts.append(struct.pack(f"<{ndim}d", *ck.mean))
    parts.append(struct.pack(f"<{tri}d", *_triu_pack(ck.cov)))
    parts.append(struct.pack(f"<{tri}d", *_triu_pack(ck.scatter)))
    payload = b"".join(parts)
    return struct.pack("<I", len(payload)) + payload


def _unpack_checkpoint(payload: bytes, ndim: int) -> RestartCheckpoint:
    tri = ndim * (ndim + 1) // 2
    off = 0
    index, iteration, rows, measure, pending, logf = struct.unpack_from("<IQQdQd", payload, off)
    off += struct.calcsize("<IQQdQd")
    state = np.array(struct.unpack_from(f"<{ndim}d", payload, off))
    off += 8 * ndim
    stage, pid, rng_count = struct.unpack_from("<iiI", payload, off)
    off += struct.calcsize("<iiI")
    rng_states = []
    for _ in range(rng_count):
        s, stream, has_cache, cache = struct.unpack_from("<QQBd", payload, off)
        off += struct.calcsize("<QQBd")
        rng_states.append((s, stream, cache if has_cache else None))
    scale, epsilon, eps_rel, dr_scale, count, acount = struct.unpack_from("<ddddQQ", payload, off)
    off += struct.calcsize("<ddddQQ")
    mean = np.array(struct.unpack_from(f"<{ndim}d", payload, off))
    off += 8 * ndim
    cov = _triu_unpack(np.array(struct.unpack_from(f"<{tri}d", payload, off)), ndim)
    off += 8 * tri
    scatter = _triu_unpack(np.array(struct.unpack_from(f"<{tri}d", payload, off)), ndim)
    return RestartCheckpoint(
        checkpoint_index=index,
        iteration=iteration,
        rows_emitted=rows,
        measure=measure,
        rng_states=rng_states,
        pending_weight=pending,
        current_logf=logf,
        current_state=state,
        live_dr_stage=stage,
        live_process_id=pid,
        mean=mean,
        cov=cov,
        scatter=scatter,
        scale=scale,
        epsilon=epsilon,
        eps_rel=eps_rel,
        dr_scale=dr_scale,
        sample_count=count,
        adaptation_count=acount,
    )


class RestartWriter:
    """Appends checkpoint records; each record is flushed immediately.

    IO errors here are fatal: without a durable checkpoint the run could
    not honor its restart guarantee.
    """

    def __init__(self, path: str, spec: SimSpec, append: bool = False):
        self.path = path
        self.ndim = spec.ndim
        self.encoding = spec.file_encoding
        if self.encoding == "ascii":
            mode = "a" if append else "w"
            self._fh = open(path, mode, encoding="utf-8", newline="\n")
            if not append:
                self._fh.write("# dramforge restart v1\n[spec]\n")
                for line in spec_echo_lines(spec):
                    self._fh.write(line + "\n")
        else:
            if append:
                self._fh = open(path, "r+b")
                self._fh.seek(0, os.SEEK_END)
            else:
                self._fh = open(path, "wb")
                echo = "\n".join(spec_echo_lines(spec)).encode("utf-8")
                self._fh.write(RESTART_MAGIC)
                self._fh.write(struct.pack("<III", FORMAT_VERSION, spec.ndim, len(echo)))
                self._fh.write(echo)

    def append(self, ck: RestartCheckpoint) -> None:
        if self.encoding == "ascii":
            self._fh.write("\n".join(_checkpoint_lines(ck)) + "\n")
        else:
            self._fh.write(_pack_checkpoint(ck, self.ndim))
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def write_restart_checkpoint(ck: RestartCheckpoint, path: str, spec: SimSpec) -> None:
    """Append one checkpoint record, creating the file if needed."""
    writer = RestartWriter(path, spec, append=os.path.exists(path))
    try:
        writer.append(ck)
    finally:
        writer.close()


def read_restart(path: str) -> tuple[SimSpec, list[RestartCheckpoint]]:
    """Read the spec echo and all complete checkpoint records."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == RESTART_MAGIC:
        return _read_restart_binary(path)
    return _read_restart_ascii(path)


def _read_restart_ascii(path: str) -> tuple[SimSpec, list[RestartCheckpoint]]:
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        content = fh.read()
    lines = content.split("\n")
    if not content.endswith("\n"):
        # Partial final line from an interrupt; the block it belongs to
        # will be dropped below for missing keys.
        lines.pop()
    blocks: list[tuple[str, dict]] = []
    current: dict | None = None
    name = ""
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"{path}:{lineno}: malformed section header")
            name = line[1:-1]
            current = {}
            blocks.append((name, current))
        elif current is not None and "=" in line:
            key, _, value = line.partition("=")
            current[key.strip()] = value.strip()
        else:
            raise ParseError(f"{path}:{lineno}: unexpected line {line!r}")
    if not blocks or blocks[0][0] != "spec":
        raise ParseError(f"{path}: missing [spec] section")
    spec = spec_from_echo(blocks[0][1])
    checkpoints = []
    for bi, (name, pairs) in enumerate(blocks[1:], start=1):
        if not name.startswith("checkpoint "):
            raise ParseError(f"{path}: unexpected section [{name}]")
        index = int(name.split()[1])
        try:
            checkpoints.append(_checkpoint_from_pairs(index, pairs, spec.ndim))
        except (KeyError, ValueError, IndexError):
            # A truncated trailing block is expected after an interrupt.
            if bi == len(blocks) - 1:
                break
            raise ParseError(f"{path}: malformed checkpoint block [{name}]") from None
    return spec, checkpoints


def _read_restart_binary(path: str) -> tuple[SimSpec, list[RestartCheckpoint]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ParseError(f"{path}: truncated restart header")
    version, ndim, echo_len = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported restart format version {version}")
    off = 16
    echo = blob[off : off + echo_len].decode("utf-8")
    off += echo_len
    pairs = {}
    for line in echo.split("\n"):
        if "=" in line:
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    spec = spec_from_echo(pairs)
    checkpoints = []
    while off + 4 <= len(blob):
        (length,) = struct.unpack_from("<I", blob, off)
        if off + 4 + length > len(blob):
            break  # truncated trailing record
        try:
            checkpoints.append(_unpack_checkpoint(blob[off + 4 : off + 4 + length], ndim))
        except struct.error:
            break
        off += 4 + length
    return spec, checkpoints


def rewrite_restart(path: str, spec: SimSpec, checkpoints: list[RestartCheckpoint]) -> None:
    writer = RestartWriter(path, spec)
    try:
        for ck in checkpoints:
            writer.append(ck)
    finally:
        writer.close()


# ---------------------------------------------------------------------------
# Sample, report, and progress files


def write_sample(refined, path: str) -> None:
    """Refined sample as `logFunc,var1..varD` rows."""
    states = np.asarray(refined.states, dtype=float)
    logf = np.asarray(refined.logf, dtype=float)
    ndim = states.shape[1] if states.ndim == 2 else 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("logFunc," + ",".join(f"var{i + 1}" for i in range(ndim)) + "\n")
        for lf, row in zip(logf, states):
            fh.write(fmt_float(lf) + "," + ",".join(fmt_float(v) for v in row) + "\n")


def read_sample(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Returns (states, logf) from a sample file."""
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines or not lines[0].startswith("logFunc"):
        raise ParseError(f"{path}:1: not a sample file")
    ndim = len(lines[0].split(",")) - 1
    logf, states = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != ndim + 1:
            raise ParseError(f"{path}:{lineno}: wrong column count")
        logf.append(float(parts[0]))
        states.append([float(v) for v in parts[1:]])
    return np.array(states, dtype=float).reshape(-1, ndim), np.array(logf, dtype=float)


@dataclass
class ParallelStats:
    """Fork-join post-processing block for the report file."""

    mu: float
    fitted_p: float
    fit_distance: float
    optimal_workers: int
    speedup: list[float]  # S(1..N)


@dataclass
class ReportStats:
    """Everything echoed and summarized in the report file."""

    spec: SimSpec
    accepted_count: int
    mean_accept_rate: float
    burnin_loc: int
    iac_history: list[float]
    ess: float
    compact_bytes: int
    verbose_bytes: int
    size_ratio: float
    parallel: ParallelStats | None = None


def write_report(stats: ReportStats, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# dramforge report v1\n[spec]\n")
        for line in spec_echo_lines(stats.spec, with_provenance=True):
            fh.write(line + "\n")
        fh.write("[stats]\n")
        fh.write(f"accepted_count = {stats.accepted_count}\n")
        fh.write(f"mean_accept_rate = {fmt_float(stats.mean_accept_rate)}\n")
        fh.write(f"burnin_loc = {stats.burnin_loc}\n")
        iac = ",".join(fmt_float(v) for v in stats.iac_history) or "none"
        fh.write(f"iac_history = {iac}\n")
        fh.write(f"ess = {fmt_float(stats.ess)}\n")
        fh.write(f"compact_bytes = {stats.compact_bytes}\n")
        fh.write(f"verbose_bytes = {stats.verbose_bytes}\n")
        fh.write(f"size_ratio = {fmt_float(stats.size_ratio)}\n")
        if stats.parallel is not None:
            p = stats.parallel
            fh.write("[parallelism]\n")
            fh.write(f"MeanAcceptancePerCandidate = {fmt_float(p.mu)}\n")
            fh.write(f"FittedGeometricP = {fmt_float(p.fitted_p)}\n")
            fh.write(f"FitDistanceTV = {fmt_float(p.fit_distance)}\n")
            fh.write(f"PredictedOptimalWorkers = {p.optimal_workers}\n")
            for n, s in enumerate(p.speedup, start=1):
                fh.write(f"PredictedSpeedup({n}) = {fmt_float(s)}\n")


def read_report(path: str) -> ReportStats:
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        lines = fh.read().split("\n")
    section = ""
    spec_pairs: dict = {}
    provenance: dict = {}
    stats_pairs: dict = {}
    par_pairs: dict = {}
    speedup: dict[int, float] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line[1:-1]
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if section == "spec":
            text, _, prov = value.partition("#")
            spec_pairs[key] = text.strip()
            provenance[key] = prov.strip() or "user"
        elif section == "stats":
            stats_pairs[key] = value
        elif section == "parallelism":
            if key.startswith("PredictedSpeedup("):
                n = int(key[len("PredictedSpeedup(") : -1])
                speedup[n] = float(value)
            else:
                par_pairs[key] = value
        else:
            raise ParseError(f"{path}:{lineno}: line outside any section")
    spec = spec_from_echo(spec_pairs, provenance)
    iac_text = stats_pairs.get("iac_history", "none")
    iac = [] if iac_text == "none" else [float(v) for v in iac_text.split(",")]
    parallel = None
    if par_pairs:
        parallel = ParallelStats(
            mu=float(par_pairs["MeanAcceptancePerCandidate"]),
            fitted_p=float(par_pairs["FittedGeometricP"]),
            fit_distance=float(par_pairs["FitDistanceTV"]),
            optimal_workers=int(par_pairs["PredictedOptimalWorkers"]),
            speedup=[speedup[n] for n in sorted(speedup)],
        )
    return ReportStats(
        spec=spec,
        accepted_count=int(stats_pairs["accepted_count"]),
        mean_accept_rate=float(stats_pairs["mean_accept_rate"]),
        burnin_loc=int(stats_pairs["burnin_loc"]),
        iac_history=iac,
        ess=float(stats_pairs["ess"]),
        compact_bytes=int(stats_pairs["compact_bytes"]),
        verbose_bytes=int(stats_pairs["verbose_bytes"]),
        size_ratio=float(stats_pairs["size_ratio"]),
        parallel=parallel,
    )


class ProgressWriter:
    def __init__(self, path: str, append: bool = False):
        self._fh = open(path, "a" if append else "w", encoding="utf-8", newline="\n")
        if not append:
            self._fh.write("iter,accepted,meanAccRate,adaptationMeasure,elapsed_seconds\n")

    def line(self, iteration: int, accepted: int, rate: float, measure: float,
             elapsed: float) -> None:
        self._fh.write(
            f"{iteration},{accepted},{fmt_float(rate)},{fmt_float(measure)},"
            f"{elapsed:.3f}\n"
        )
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def inspect_outputs(spec: SimSpec) -> tuple[str, CompactChain | None]:
    """Classify existing output for a prefix: absent, incomplete, complete."""
    path = output_paths(spec.output_prefix, spec.file_encoding)["chain"]
    if not os.path.exists(path):
        return "absent", None
    chain = read_chain(path)
    if chain.total_weight >= spec.chain_size:
        return "complete", chain
    return "incomplete", chain


def resume(spec: SimSpec, target, **kwargs):
    """Continue an interrupted run (see the sampler module for details)."""
    from .sampler import resume as _resume

    return _resume(spec, target, **kwargs)
