"""Command-line pipelines: stats, fit, apply, verify, mdl, synth, normalize.

Every run validates its flags before touching the filesystem, writes all
outputs atomically, and emits a ``<output>.manifest.json`` echoing the full
resolved configuration plus input hashes, so artifacts are reproducible.

Exit codes: 0 ok, 2 usage/validation, 3 data format, 4 numerical
nonconvergence, 5 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dataio import (
    dataset_format,
    json_dumps,
    load_dataset,
    moments_to_dict,
    save_dataset,
    write_bytes_atomic,
    write_text_atomic,
)
from .datagen import gen_synthetic, parse_synth_spec
from .erasers import (
    apply_eraser,
    compose_affine,
    deserialize_eraser,
    fit_alf_qleace,
    fit_leace,
    fit_qleace,
    fit_random_projection,
    gradient_erase,
    serialize_eraser,
    transform_moments,
)
from .errors import DataFormatError, InvalidInput, MalformedFile, MscrubError, NonConvergence
from .mdl import MdlCurve, curve_to_csv, make_schedule, mdl_delta_report, prequential_mdl
from .moments import LabeledDataset, fit_moments, moment_gap_report, zscore_normalize
from .probes import guardedness_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NONCONVERGED = 4
EXIT_INTERNAL = 5

_thread_limiter = None


def _limit_threads(n: int | None) -> None:
    global _thread_limiter
    if n is None:
        env = os.environ.get("MSCRUB_THREADS")
        if env is None:
            return
        try:
            n = int(env)
        except ValueError:
            raise InvalidInput(f"MSCRUB_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise InvalidInput("thread count must be positive")
    try:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(limits=n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_dict(args: argparse.Namespace) -> dict:
    out = {}
    for key in sorted(vars(args)):
        if key == "func":
            continue
        value = getattr(args, key)
        if isinstance(value, Path):
            value = str(value)
        out[key] = value
    return out


def _write_manifest(
    prefix: str, command: str, args: argparse.Namespace, inputs: list[str], outputs: list[str]
) -> str:
    manifest_path = f"{prefix}.manifest.json"
    manifest = {
        "command": command,
        "config": _config_dict(args),
        "versions": {
            "mscrub": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": {name: _sha256(Path(name)) for name in inputs},
        "outputs": sorted(outputs),
    }
    write_text_atomic(manifest_path, json_dumps(manifest))
    return manifest_path


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise InvalidInput(f"{flag} expects a comma-separated integer list, got {text!r}")
    if not values:
        raise InvalidInput(f"{flag} list is empty")
    return values


def _parse_bounds(text: str, d: int) -> tuple[np.ndarray, np.ndarray]:
    parts = text.split(",")
    if len(parts) != 2:
        raise InvalidInput(f"--bounds expects LO,HI, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise InvalidInput(f"--bounds expects numbers, got {text!r}")
    if lo >= hi:
        raise InvalidInput("--bounds requires LO < HI")
    return np.full(d, lo), np.full(d, hi)


def cmd_stats(args: argparse.Namespace) -> int:
    ds = load_dataset(args.input, args.label_col)
    m = fit_moments(ds, shrinkage=args.shrinkage)
    gaps = moment_gap_report(m, weighted=not args.unweighted_avg_cov)
    prefix = args.out or f"{args.input}.stats"
    outputs = []
    moments_path = f"{prefix}.moments.json"
    write_text_atomic(moments_path, json_dumps(moments_to_dict(m)))
    outputs.append(moments_path)
    gaps_json = f"{prefix}.gaps.json"
    write_text_atomic(gaps_json, json_dumps(gaps.to_dict()))
    outputs.append(gaps_json)
    gaps_txt = f"{prefix}.gaps.txt"
    write_text_atomic(gaps_txt, gaps.format_text())
    outputs.append(gaps_txt)
    if not args.no_plot:
        from .report import gap_figure, save_figure

        fig_path = f"{prefix}.gaps.png"
        save_figure(gap_figure(gaps), fig_path)
        outputs.append(fig_path)
    outputs.append(_write_manifest(prefix, "stats", args, [str(args.input)], outputs))
    sys.stdout.write(gaps.format_text())
    return EXIT_OK


def _fit_eraser(args: argparse.Namespace, ds) -> tuple[object, dict]:
    method = args.method
    if method == "randproj":
        if args.rank is None:
            raise InvalidInput("--rank is required for --method randproj")
        return fit_random_projection(ds.d, args.rank, args.seed), {}

    m = fit_moments(ds, shrinkage=args.shrinkage)
    if method == "leace":
        return fit_leace(m), {}
    if method == "qleace":
        eraser = fit_qleace(m, tol=args.tol, max_iter=args.max_iter)
        if not eraser.barycenter.converged and not args.allow_nonconverged:
            raise NonConvergence(
                f"barycenter residual {eraser.barycenter.residual:.3e} > tol {args.tol:.3e} "
                f"after {eraser.barycenter.iterations} iterations"
            )
        return eraser, {}
    if method == "alf-qleace":
        if args.rank_budget > ds.d:
            raise InvalidInput(f"--rank-budget {args.rank_budget} exceeds dimension {ds.d}")
        leace = fit_leace(m)
        projector = fit_alf_qleace(
            transform_moments(m, leace),
            rank_budget=args.rank_budget,
            tol=args.tol,
            weighted=not args.unweighted_avg_cov,
        )
        composed = compose_affine(projector, leace, method="alf-qleace")
        stage_info = {
            "leace_rank": leace.rank,
            "deflations": projector.meta["deflations"],
            "final_gap": projector.meta["final_gap"],
        }
        return composed, stage_info
    raise InvalidInput(f"unknown method {method!r}")


def cmd_fit(args: argparse.Namespace) -> int:
    ds = load_dataset(args.input, args.label_col)
    outputs = []
    if args.method == "grad":
        bounds = ds.bounds
        if args.bounds is not None:
            bounds = _parse_bounds(args.bounds, ds.d)
        if bounds is None:
            raise InvalidInput(
                "--method grad requires bounds (sidecar bounds or --bounds LO,HI)"
            )
        if ds.bounds is None:
            ds = LabeledDataset.from_arrays(ds.X, ds.z, k=ds.k, bounds=bounds,
                                            feature_names=ds.feature_names)
        result = gradient_erase(ds, alpha=args.alpha, beta=args.beta, gamma=args.gamma)
        if not result.converged and not args.allow_nonconverged:
            raise NonConvergence(
                f"gradient erasure stopped after {result.iterations} iterations "
                f"without meeting tolerances"
            )
        outputs += [str(p) for p in save_dataset(result.dataset, args.out,
                                                 fmt=args.format, label_col=args.label_col)]
        traj_path = f"{args.out}.trajectory.csv"
        lines = ["iteration,loss"] + [f"{i},{float(v)!r}" for i, v in enumerate(result.trajectory)]
        write_text_atomic(traj_path, "\n".join(lines) + "\n")
        outputs.append(traj_path)
        terms_path = f"{args.out}.terms.json"
        write_text_atomic(
            terms_path,
            json_dumps(
                {
                    "term_values": result.term_values,
                    "weights": {
                        "alpha": result.weights[0],
                        "beta": result.weights[1],
                        "gamma": result.weights[2],
                    },
                    "converged": result.converged,
                    "iterations": result.iterations,
                }
            ),
        )
        outputs.append(terms_path)
    else:
        eraser, stage_info = _fit_eraser(args, ds)
        data = serialize_eraser(eraser)
        write_bytes_atomic(args.out, data)
        outputs.append(str(args.out))
        if stage_info:
            sys.stdout.write(json.dumps(stage_info) + "\n")
    outputs.append(_write_manifest(str(args.out), "fit", args, [str(args.input)], outputs))
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    eraser_path = Path(args.eraser)
    if not eraser_path.exists():
        raise InvalidInput(f"no such file: {eraser_path}")
    eraser = deserialize_eraser(eraser_path.read_bytes())
    ds = load_dataset(args.input, args.label_col)
    erased = apply_eraser(eraser, ds, clip_to_bounds=args.clip)
    outputs = [str(p) for p in save_dataset(erased, args.out, fmt=args.format,
                                            label_col=args.label_col)]
    outputs.append(
        _write_manifest(str(args.out), "apply", args, [str(args.eraser), str(args.input)], outputs)
    )
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    ds = load_dataset(args.input, args.label_col)
    degrees = _parse_int_list(args.degrees, "--degrees")
    rep = guardedness_report(ds, degrees, split_seed=args.seed, tol=args.tol, l2=args.l2)
    prefix = args.out or f"{args.input}.verify"
    outputs = []
    json_path = f"{prefix}.guardedness.json"
    write_text_atomic(json_path, json_dumps(rep.to_dict()))
    outputs.append(json_path)
    txt_path = f"{prefix}.guardedness.txt"
    write_text_atomic(txt_path, rep.format_text())
    outputs.append(txt_path)
    if not args.no_plot:
        from .report import guardedness_figure, save_figure

        fig_path = f"{prefix}.guardedness.png"
        save_figure(guardedness_figure(rep), fig_path)
        outputs.append(fig_path)
    outputs.append(_write_manifest(prefix, "verify", args, [str(args.input)], outputs))
    sys.stdout.write(rep.format_text())
    return EXIT_OK


def cmd_mdl(args: argparse.Namespace) -> int:
    ds = load_dataset(args.input, args.label_col)
    seeds = _parse_int_list(args.seeds, "--seeds")
    if len(set(seeds)) != len(seeds):
        raise InvalidInput("--seeds must not repeat")
    n_stream = ds.n - max(1, int(round(ds.n * 0.2)))
    schedule = make_schedule(n_stream, first=args.first, ratio=args.ratio)
    curves = [
        prequential_mdl(ds, args.degree, schedule, seed=s, l2=args.l2) for s in seeds
    ]
    prefix = args.out or f"{args.input}.mdl"
    outputs = []
    for curve in curves:
        path = f"{prefix}.curve.seed{curve.seed}.csv"
        write_text_atomic(path, curve_to_csv(curve))
        outputs.append(path)
    lens = np.array([c.codelength_nats for c in curves])
    summary = {
        "degree": args.degree,
        "sizes": list(schedule.sizes),
        "seeds": seeds,
        "codelength_mean_nats": float(lens.mean()),
        "codelength_std_nats": float(lens.std(ddof=1)) if lens.size > 1 else 0.0,
        "codelength_mean_bits": float(lens.mean() / np.log(2.0)),
        "curves": [c.summary_dict() for c in curves],
    }
    summary_path = f"{prefix}.summary.json"
    write_text_atomic(summary_path, json_dumps(summary))
    outputs.append(summary_path)
    if not args.no_plot:
        from .report import learning_curve_figure, save_figure

        fig_path = f"{prefix}.png"
        save_figure(learning_curve_figure(curves), fig_path)
        outputs.append(fig_path)
    inputs = [str(args.input)]
    if args.baseline:
        outputs += _emit_delta(args, prefix, curves, schedule)
        inputs.append(str(args.baseline))
    outputs.append(_write_manifest(prefix, "mdl", args, inputs, outputs))
    sys.stdout.write(
        f"codelength: {summary['codelength_mean_nats']!r} "
        f"+- {summary['codelength_std_nats']!r} nats over seeds {seeds}\n"
    )
    return EXIT_OK


def _emit_delta(args, prefix: str, curves: list[MdlCurve], schedule) -> list[str]:
    try:
        base = json.loads(Path(args.baseline).read_text())
        base_curves = [
            MdlCurve(
                sizes=tuple(base["sizes"]),
                val_losses=[],
                converged=[],
                codelength_nats=float(entry["codelength_nats"]),
                codelength_bits=float(entry["codelength_bits"]),
                trivial_nats=float(entry["trivial_nats"]),
                n_coded=int(entry["n_coded"]),
                degree=int(entry["degree"]),
                seed=int(entry["seed"]),
            )
            for entry in base["curves"]
        ]
    except FileNotFoundError:
        raise InvalidInput(f"no such file: {args.baseline}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"{args.baseline}: not an mdl summary file ({exc})")
    report = mdl_delta_report(base_curves, {"this": curves})
    outputs = []
    delta_txt = f"{prefix}.delta.txt"
    write_text_atomic(delta_txt, report.format_text())
    outputs.append(delta_txt)
    delta_json = f"{prefix}.delta.json"
    write_text_atomic(delta_json, json_dumps(report.to_dict()))
    outputs.append(delta_json)
    if not args.no_plot:
        from .report import delta_figure, save_figure

        delta_png = f"{prefix}.delta.png"
        save_figure(delta_figure(report), delta_png)
        outputs.append(delta_png)
    sys.stdout.write(report.format_text())
    return outputs


def cmd_synth(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise InvalidInput(f"no such file: {spec_path}")
    try:
        spec = parse_synth_spec(json.loads(spec_path.read_text()))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{spec_path}: {exc}")
    except KeyError as exc:
        raise MalformedFile(f"{spec_path}: missing spec field {exc}")
    ds = gen_synthetic(spec)
    outputs = [str(p) for p in save_dataset(ds, args.out, fmt=args.format,
                                            label_col=args.label_col)]
    outputs.append(_write_manifest(str(args.out), "synth", args, [str(spec_path)], outputs))
    return EXIT_OK


def cmd_normalize(args: argparse.Namespace) -> int:
    ds = load_dataset(args.input, args.label_col)
    normalized, record = zscore_normalize(ds)
    outputs = [str(p) for p in save_dataset(normalized, args.out, fmt=args.format,
                                            label_col=args.label_col)]
    record_path = f"{args.out}.record.json"
    write_text_atomic(record_path, json_dumps(record.to_dict()))
    outputs.append(record_path)
    outputs.append(_write_manifest(str(args.out), "normalize", args, [str(args.input)], outputs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscrub",
        description="Erase first/second-order class information from labeled "
        "datasets and measure what remains.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="bound BLAS worker threads (env MSCRUB_THREADS)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, with_input=True):
        if with_input:
            p.add_argument("input", help="dataset (.csv, or f32 tensor / sidecar path)")
        p.add_argument("--label-col", default="label", help="CSV label column name")

    p = sub.add_parser("stats", help="fit moments and report class moment gaps")
    add_common(p)
    p.add_argument("--shrinkage", type=float, default=1e-4)
    p.add_argument("--unweighted-avg-cov", action="store_true",
                   help="use the unweighted average of class covariances")
    p.add_argument("-o", "--out", default=None, help="output prefix (default: INPUT.stats)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("fit", help="fit an eraser (or edit the dataset for grad)")
    add_common(p)
    p.add_argument("--method", required=True,
                   choices=["leace", "qleace", "alf-qleace", "grad", "randproj"])
    p.add_argument("-o", "--out", required=True,
                   help="eraser JSON path (grad: edited dataset path)")
    p.add_argument("--shrinkage", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-9,
                   help="barycenter tolerance (qleace) or gap tolerance (alf-qleace)")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--rank-budget", type=int, default=15,
                   help="maximum rank-1 deflations for alf-qleace")
    p.add_argument("--rank", type=int, default=None, help="projection rank for randproj")
    p.add_argument("--seed", type=int, default=0, help="seed for randproj")
    p.add_argument("--alpha", type=float, default=1.0, help="grad: mean-gap weight")
    p.add_argument("--beta", type=float, default=1.0, help="grad: covariance-gap weight")
    p.add_argument("--gamma", type=float, default=None,
                   help="grad: anchor weight (default: auto-scaled)")
    p.add_argument("--bounds", default=None, help="grad: LO,HI admissible range")
    p.add_argument("--unweighted-avg-cov", action="store_true")
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--format", choices=["csv", "f32"], default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="apply a fitted eraser to a dataset")
    p.add_argument("eraser", help="eraser JSON file")
    add_common(p)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=["csv", "f32"], default=None)
    p.add_argument("--clip", action="store_true",
                   help="re-clip erased values into the original bounds")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("verify", help="held-out polynomial-probe guardedness check")
    add_common(p)
    p.add_argument("--degrees", default="1,2")
    p.add_argument("--tol", type=float, default=0.02, help="guardedness margin in nats")
    p.add_argument("--seed", type=int, default=0, help="train/holdout split seed")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("-o", "--out", default=None, help="output prefix (default: INPUT.verify)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("mdl", help="prequential MDL over growing training prefixes")
    add_common(p)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--first", type=int, default=64, help="first schedule size")
    p.add_argument("--ratio", type=float, default=2.0, help="schedule growth factor")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--baseline", default=None,
                   help="mdl summary JSON to compare codelengths against")
    p.add_argument("-o", "--out", default=None, help="output prefix (default: INPUT.mdl)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_mdl)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec file")
    p.add_argument("spec", help="JSON spec (kind: gaussian or boxes)")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=["csv", "f32"], default=None)
    p.add_argument("--label-col", default="label")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("normalize", help="z-score features to zero mean, unit variance")
    add_common(p)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=["csv", "f32"], default=None)
    p.set_defaults(func=cmd_normalize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        _limit_threads(args.threads)
        return args.func(args)
    except NonConvergence as exc:
        sys.stderr.write(f"mscrub: nonconvergence: {exc}\n"
                         "mscrub: pass --allow-nonconverged to write output anyway\n")
        return EXIT_NONCONVERGED
    except DataFormatError as exc:
        sys.stderr.write(f"mscrub: data format error: {exc}\n")
        return EXIT_DATA
    except MscrubError as exc:
        sys.stderr.write(f"mscrub: {exc}\n")
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - internal failure path
        sys.stderr.write(f"mscrub: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
