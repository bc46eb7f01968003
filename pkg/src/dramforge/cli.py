"""Command-line front end.

``dramforge run <cfg>`` executes or resumes a simulation described by a
flat key=value config with one ``[target]`` section; ``dramforge
postproc <prefix>`` turns finished output files into CSV exports plus
matching gnuplot scripts. Every behavior is a thin shell over library
calls; exit codes: 0 ok, 2 config/input error, 3 runtime or numerical
error, 4 refused resume or overwrite.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .chainio import (
    ParseError,
    fmt_float,
    output_paths,
    read_chain,
    read_report,
    read_restart,
    read_sample,
    spec_text_to_value,
)
from .core import (
    SIMSPEC_FIELDS,
    BuiltinTarget,
    DramforgeError,
    NumericalError,
    ResumeRefused,
    SimSpec,
    UsageError,
    build_target,
)
from .parallel import contribution_stats, run_multi_chain
from .refinement import autocorrelation, weighted_acf
from .sampler import run_sampler
from . import chainio

_SPEC_KINDS = dict(SIMSPEC_FIELDS)
_TARGET_KINDS = ("mvn", "rosenbrock", "gauss_mixture")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_REFUSED = 4


def parse_config(path: str) -> tuple[dict, dict]:
    """Flat key=value config with a [target] section.

    Returns (spec_pairs, target_pairs) of raw strings. Unknown keys and
    malformed lines are rejected with their line number.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from None
    spec_pairs: dict[str, str] = {}
    target_pairs: dict[str, str] = {}
    section = "spec"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if line != "[target]":
                raise ParseError(f"{path}:{lineno}: unknown section {line}")
            section = "target"
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if section == "spec":
            if key not in _SPEC_KINDS:
                raise ParseError(f"{path}:{lineno}: unknown simulation key {key!r}")
            spec_pairs[key] = value
        else:
            if not _valid_target_key(key):
                raise ParseError(f"{path}:{lineno}: unknown target key {key!r}")
            target_pairs[key] = value
    return spec_pairs, target_pairs


def _valid_target_key(key: str) -> bool:
    if key in ("kind", "mean", "cov", "scale"):
        return True
    if key.startswith("component"):
        rest = key[len("component"):]
        idx, _, field = rest.partition("_")
        return idx.isdigit() and field in ("weight", "mean", "cov")
    return False


def _parse_matrix(text: str) -> np.ndarray:
    rows = [
        [float(v) for v in row.split(",")]
        for row in text.split(";")
        if row.strip()
    ]
    return np.array(rows, dtype=float)


def build_spec(spec_pairs: dict) -> SimSpec:
    kwargs = {}
    for key, value in spec_pairs.items():
        kwargs[key] = spec_text_to_value(_SPEC_KINDS[key], value)
    if "ndim" not in kwargs:
        raise UsageError("config must set ndim")
    if "output_prefix" not in kwargs:
        raise UsageError("config must set output_prefix")
    out_dir = os.environ.get("DRAMFORGE_OUT")
    if out_dir:
        kwargs["output_prefix"] = os.path.join(
            out_dir, os.path.basename(kwargs["output_prefix"])
        )
    return SimSpec(**kwargs)


def build_cli_target(target_pairs: dict, ndim: int) -> BuiltinTarget:
    kind = target_pairs.get("kind", "mvn")
    if kind not in _TARGET_KINDS:
        raise UsageError(f"target kind must be one of {_TARGET_KINDS}, got {kind!r}")
    if kind == "mvn":
        mean = (
            np.array([float(v) for v in target_pairs["mean"].split(",")])
            if "mean" in target_pairs
            else np.zeros(ndim)
        )
        cov = _parse_matrix(target_pairs["cov"]) if "cov" in target_pairs else None
        return BuiltinTarget("mvn", {"mean": mean, "cov": cov})
    if kind == "rosenbrock":
        return BuiltinTarget(
            "rosenbrock",
            {"ndim": ndim, "scale": float(target_pairs.get("scale", "100.0"))},
        )
    weights, means, covs = [], [], []
    i = 1
    while f"component{i}_weight" in target_pairs:
        weights.append(float(target_pairs[f"component{i}_weight"]))
        means.append(np.array([float(v) for v in target_pairs[f"component{i}_mean"].split(",")]))
        if f"component{i}_cov" in target_pairs:
            covs.append(_parse_matrix(target_pairs[f"component{i}_cov"]))
        else:
            covs.append(np.eye(ndim))
        i += 1
    if not weights:
        raise UsageError("gauss_mixture target needs component<i>_weight/_mean entries")
    return BuiltinTarget("gauss_mixture", {"weights": weights, "means": means, "covs": covs})


def _apply_overrides(spec_pairs: dict, target_pairs: dict, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("target."):
            tkey = key[len("target."):]
            if not _valid_target_key(tkey):
                raise UsageError(f"--set: unknown target key {tkey!r}")
            target_pairs[tkey] = value
        elif key in _SPEC_KINDS:
            spec_pairs[key] = value
        else:
            raise UsageError(f"--set: unknown simulation key {key!r}")


def _delete_outputs(spec: SimSpec) -> None:
    for path in output_paths(spec.output_prefix, spec.file_encoding).values():
        if os.path.exists(path):
            os.remove(path)
    conv = f"{spec.output_prefix}_convergence.txt"
    if os.path.exists(conv):
        os.remove(conv)


def cmd_run(args) -> int:
    try:
        spec_pairs, target_pairs = parse_config(args.config)
        _apply_overrides(spec_pairs, target_pairs, args.set or [])
        spec = build_spec(spec_pairs)
        target = build_target(build_cli_target(target_pairs, spec.ndim))
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        status, _ = chainio.inspect_outputs(spec)
        if status == "complete" and args.force:
            _delete_outputs(spec)
            status = "absent"
        if status == "complete":
            raise ResumeRefused(
                f"prefix {spec.output_prefix!r} already holds a complete run "
                "(use --force to overwrite)"
            )
        if status == "incomplete" and not args.resume:
            raise ResumeRefused(
                f"prefix {spec.output_prefix!r} holds an incomplete run "
                "(use --resume to continue it)"
            )
        if spec.parallelism == "multi_chain":
            outputs, report = run_multi_chain(spec, target, spec.num_workers)
            for rank, out in enumerate(outputs, start=1):
                print(
                    f"chain {rank}: {out.chain.n_rows} rows, "
                    f"acceptance {out.report.mean_accept_rate:.4f}, "
                    f"ESS {out.report.ess:.1f}"
                )
            verdict = "flagged" if report.flagged else "no evidence of non-convergence"
            print(f"multi-chain comparison: {verdict} (min p = {report.min_p:.4g})")
        else:
            out = run_sampler(spec, target)
            print(
                f"done: {out.chain.n_rows} rows over {spec.chain_size} iterations, "
                f"acceptance {out.report.mean_accept_rate:.4f}, "
                f"ESS {out.report.ess:.1f}, refined sample {len(out.refined)}"
            )
            print(f"outputs under prefix: {spec.output_prefix}")
    except ResumeRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (NumericalError, DramforgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _write_gnuplot(path: str, title: str, plots: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("set datafile separator ','\n")
        fh.write("set key autotitle columnhead\n")
        fh.write(f"set title '{title}'\n")
        fh.write("set grid\n")
        fh.write("plot " + ", \\\n     ".join(plots) + "\n")


def _postproc_stats(prefix: str, report) -> str:
    csv_path = f"{prefix}_stats.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric,value\n")
        fh.write(f"ess,{fmt_float(report.ess)}\n")
        for i, tau in enumerate(report.iac_history, start=1):
            fh.write(f"iac_pass{i},{fmt_float(tau)}\n")
        fh.write(f"mean_accept_rate,{fmt_float(report.mean_accept_rate)}\n")
        fh.write(f"accepted_count,{report.accepted_count}\n")
        fh.write(f"burnin_loc,{report.burnin_loc}\n")
        fh.write(f"size_ratio,{fmt_float(report.size_ratio)}\n")
    _write_gnuplot(
        f"{prefix}_stats.gp", "run statistics",
        [f"'{csv_path}' using 0:2:xtic(1) with boxes"],
    )
    return csv_path


def _postproc_acf(prefix: str, chain, sample_states) -> str:
    csv_path = f"{prefix}_acf.csv"
    nv = chain.total_weight
    nref = sample_states.shape[0]
    max_lag = min(1000, nv - 1, max(nref - 1, 1))
    chain_acf = [
        weighted_acf(chain.states[:, dim], chain.weight, max_lag)
        for dim in range(chain.ndim)
    ]
    ref_lag = min(max_lag, nref - 1)
    refined_acf = [
        autocorrelation(sample_states[:, dim], ref_lag) for dim in range(chain.ndim)
    ]
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["lag"]
        cols += [f"chain_var{d + 1}" for d in range(chain.ndim)]
        cols += [f"refined_var{d + 1}" for d in range(chain.ndim)]
        fh.write(",".join(cols) + "\n")
        for lag in range(max_lag + 1):
            row = [str(lag)]
            row += [fmt_float(acf[lag]) for acf in chain_acf]
            row += [
                fmt_float(acf[lag]) if lag < len(acf) else ""
                for acf in refined_acf
            ]
            fh.write(",".join(row) + "\n")
    plots = [
        f"'{csv_path}' using 1:{2 + d} with lines" for d in range(chain.ndim)
    ] + [
        f"'{csv_path}' using 1:{2 + chain.ndim + d} with lines" for d in range(chain.ndim)
    ]
    _write_gnuplot(f"{prefix}_acf.gp", "chain vs refined autocorrelation", plots)
    return csv_path


def _postproc_covmat(prefix: str, checkpoints, ndim: int) -> str:
    csv_path = f"{prefix}_covmat.csv"
    pairs = [(i, j) for i in range(ndim) for j in range(i, ndim)]
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["checkpoint", "iteration"]
        cols += [f"cov_{i + 1}_{j + 1}" for i, j in pairs]
        fh.write(",".join(cols) + "\n")
        for ck in checkpoints:
            row = [str(ck.checkpoint_index), str(ck.iteration)]
            row += [fmt_float(ck.cov[i, j]) for i, j in pairs]
            fh.write(",".join(row) + "\n")
    plots = [f"'{csv_path}' using 2:{3 + k} with lines" for k in range(len(pairs))]
    _write_gnuplot(f"{prefix}_covmat.gp", "proposal covariance evolution", plots)
    return csv_path


def _postproc_contrib(prefix: str, chain, n_workers: int) -> str:
    csv_path = f"{prefix}_contrib.csv"
    stats = contribution_stats(chain.process_id, n_workers)
    total = stats.counts.sum()
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank,count,empirical,fitted\n")
        for k in range(1, n_workers + 1):
            emp = stats.counts[k - 1] / total
            fit = stats.fitted_p * (1.0 - stats.fitted_p) ** (k - 1)
            fh.write(f"{k},{stats.counts[k - 1]},{fmt_float(emp)},{fmt_float(fit)}\n")
    _write_gnuplot(
        f"{prefix}_contrib.gp", "per-rank contribution vs geometric fit",
        [f"'{csv_path}' using 1:3 with boxes", f"'{csv_path}' using 1:4 with lines"],
    )
    return csv_path


def cmd_postproc(args) -> int:
    prefix = args.prefix
    out_dir = os.environ.get("DRAMFORGE_OUT")
    if out_dir:
        prefix = os.path.join(out_dir, os.path.basename(prefix))
    report_path = f"{prefix}_report.txt"
    if not os.path.exists(report_path):
        print(f"error: missing report file {report_path!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = read_report(report_path)
        spec = report.spec
        paths = output_paths(prefix, spec.file_encoding)
        if args.what == "stats":
            csv_path = _postproc_stats(prefix, report)
        elif args.what == "acf":
            chain = read_chain(paths["chain"])
            states, _ = read_sample(paths["sample"])
            csv_path = _postproc_acf(prefix, chain, states)
        elif args.what == "covmat":
            _, checkpoints = read_restart(paths["restart"])
            csv_path = _postproc_covmat(prefix, checkpoints, spec.ndim)
        else:
            chain = read_chain(paths["chain"])
            csv_path = _postproc_contrib(prefix, chain, spec.num_workers)
    except FileNotFoundError as exc:
        print(f"error: missing output file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {csv_path} and its gnuplot script")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dramforge",
        description="Delayed-rejection adaptive Metropolis sampler with restartable runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run or resume a simulation from a config file")
    run_p.add_argument("config", help="key=value config with a [target] section")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    run_p.add_argument("--resume", action="store_true",
                       help="continue an incomplete run for this prefix")
    run_p.add_argument("--force", action="store_true",
                       help="overwrite a complete run for this prefix")
    run_p.set_defaults(func=cmd_run)
    post_p = sub.add_parser("postproc", help="export plot-ready data from a finished run")
    post_p.add_argument("prefix", help="output prefix of the finished run")
    post_p.add_argument("--what", choices=("stats", "acf", "covmat", "contrib"),
                        required=True)
    post_p.set_defaults(func=cmd_postproc)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
