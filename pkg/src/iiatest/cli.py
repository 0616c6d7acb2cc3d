"""Command-line interface.

Exit status is 0 on success, 2 on invalid input and 3 on sampler failure.
Outputs go to ``--out``, defaulting to ``$IIATEST_OUTPUT_DIR`` or
``./iiatest-out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import ModelSpec, PosteriorDraws, SamplerConfig, SamplerError
from .core import ValidationError
from .experiments import AnalysisConfig, SweepConfig, analyze, curves_csv, fit_perturbation, rejections_csv, run_sweep, runs_csv
from .files import atomic_write, ingest, truth_csv, write_dataset
from .mle import MleConfig
from .ppc import HomogeneityConfig, PpcResult, homogeneity_test
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger("iiatest")

OUTPUT_ENV = "IIATEST_OUTPUT_DIR"
EXIT_VALIDATION = 2
EXIT_SAMPLER = 3


# -- report plumbing --------------------------------------------------------------


def _plain(x):
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        return {f.name: _plain(getattr(x, f.name)) for f in dataclasses.fields(x) if not f.name.startswith("_")}
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) else x
    return x


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], obj


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report: dict) -> str:
    """``key,value`` rows; floats use the same repr as the JSON form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in _flatten(report):
        w.writerow([k, _cell(v)])
    return buf.getvalue()


def write_report(out: Path, report: dict) -> None:
    report = _plain(report)
    atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=False) + "\n")
    atomic_write(out / "report.csv", report_csv(report))


def _header(args, **configs) -> dict:
    cmd = {k: v for k, v in vars(args).items() if k != "func"}
    return {"tool": "iiatest", "version": __version__, "command": args.command, "arguments": cmd, "config": configs}


def _save_npz(path: Path, **arrays) -> None:
    buf = io.BytesIO()
    np.savez_compressed(buf, **arrays)
    atomic_write(path, buf.getvalue())


def _save_draws(path: Path, draws: PosteriorDraws) -> None:
    tmp = path.with_name(f".{path.name}.partial.npz")
    draws.save(tmp)
    os.replace(tmp, path)


def _summary_dict(s) -> dict:
    return dataclasses.asdict(s)


# -- configs from flags -------------------------------------------------------------


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        draws=args.draws,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth,
        seed=args.seed,
        n_jobs=args.jobs,
    )


def _mle(args) -> MleConfig:
    return MleConfig(learning_rate=args.learning_rate, improvement_tol=args.tolerance, max_iters=args.max_iters)


def _add_sampler_flags(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int, default=SamplerConfig.chains)
    g.add_argument("--warmup", type=int, default=SamplerConfig.warmup)
    g.add_argument("--draws", type=int, default=SamplerConfig.draws)
    g.add_argument("--target-accept", type=float, default=SamplerConfig.target_accept)
    g.add_argument("--max-tree-depth", type=int, default=SamplerConfig.max_tree_depth)
    g.add_argument("--jobs", type=int, default=1, help="processes for parallel chains")
    g.add_argument("--alpha-sigma", type=float, default=None, help="half-normal scale of sigma")
    g.add_argument("--beta-sigma", type=float, default=1.0, help="half-normal scale of the perturbation scale")


def _add_mle_flags(p):
    g = p.add_argument_group("maximum likelihood")
    g.add_argument("--learning-rate", type=float, default=MleConfig.learning_rate)
    g.add_argument("--tolerance", type=float, default=MleConfig.improvement_tol)
    g.add_argument("--max-iters", type=int, default=MleConfig.max_iters)


def _add_data_flags(p):
    p.add_argument("--questions", required=True, type=Path)
    p.add_argument("--responses", required=True, type=Path)


def _add_common(p):
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)


def _out(args) -> Path:
    out = args.out or Path(os.environ.get(OUTPUT_ENV, "iiatest-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SynthConfig(sigma=args.sigma, sigma_p=args.sigma_p, sigma_m=args.sigma_m, m=args.m, n=args.n, seed=args.seed, kind=args.kind)
    ds, truths = generate_dataset(cfg)
    out = _out(args)
    write_dataset(out, ds)
    atomic_write(out / "ground_truth.csv", truth_csv(ds.question_sets, truths))
    atomic_write(out / "config.json", json.dumps(_plain(_header(args, synth=cfg)), indent=2) + "\n")
    print(f"wrote {ds.m} question sets, {len(ds.questions)} questions, {ds.table().total} responses to {out}")
    return 0


def cmd_ingest_check(args) -> int:
    ds = ingest(args.questions, args.responses)
    table = ds.table()
    n = [table.n(q.id) for q in ds.questions]
    summary = {
        "question_sets": ds.m,
        "questions": len(ds.questions),
        "items": ds.universe.size,
        "responses": table.total,
        "participants": len(table.participants),
        "aggregate_only": ds.aggregate_only,
        "min_responses": min(n),
        "mean_responses": float(np.mean(n)),
        "unanswered_questions": [q.id for q, k in zip(ds.questions, n) if k == 0],
    }
    print(json.dumps(summary, indent=2))
    return 0


def _set_rows(analysis) -> list[dict]:
    return [
        {"set": i, "target": r.target, "D": r.statistic, "dof": r.dof, "p_gft": r.p_gft, "p_ppc": r.p_ppc, "note": r.note}
        for i, r in enumerate(analysis.rows)
    ]


def cmd_test(args) -> int:
    ds = ingest(args.questions, args.responses)
    cfg = AnalysisConfig(
        alpha=args.alpha,
        bayes=not args.no_bayes,
        mle=_mle(args),
        sampler=_sampler(args),
        model=ModelSpec("iia", args.alpha_sigma, args.beta_sigma),
        seed=args.seed,
    )
    a = analyze(ds, cfg)
    out = _out(args)
    report = _header(args, analysis=cfg)
    report["sets"] = _set_rows(a)
    report["untestable"] = [r.target for r in a.rows if r.note]
    report["aggregates"] = a.aggregates(args.alpha)
    if a.draws is not None:
        report["posterior"] = {k: _summary_dict(s) for k, s in a.summaries.items()}
        report["diagnostics"] = a.diagnostics
        _save_draws(out / "posterior.npz", a.draws)
        _save_npz(out / "ppc_traces.npz", targets=np.array(a.ppc.targets), observed=a.ppc.observed, replicated=a.ppc.replicated)
    write_report(out, report)
    agg = report["aggregates"]
    print(f"GFT  min p={agg['gft_min_p']:.4g} (Bonferroni alpha {agg['bonferroni_alpha']:.3g})  sum p={agg['gft_sum_p']:.4g}")
    if a.draws is not None:
        print(f"PPC  min p={agg['ppc_min_p']:.4g}  sum p={agg['ppc_sum_p']:.4g}")
    return 0


def cmd_sweep(args) -> int:
    analysis = AnalysisConfig(
        alpha=args.alpha,
        bayes=not args.no_bayes,
        mle=_mle(args),
        sampler=_sampler(args),
        model=ModelSpec("iia", args.alpha_sigma, args.beta_sigma),
    )
    cfg = SweepConfig(
        kind=args.kind,
        grid=tuple(args.grid),
        repetitions=args.repetitions,
        sigma=args.sigma,
        m=args.m,
        n=args.n,
        seed=args.seed,
        analysis=analysis,
    )

    def progress(r):
        log.info("value=%g rep=%d gft_sum=%.4g ppc_sum=%.4g", r.value, r.repetition, r.gft_sum, r.ppc_sum)

    records = run_sweep(cfg, progress)
    out = _out(args)
    atomic_write(out / "fig1_curves.csv", curves_csv(records))
    atomic_write(out / "fig2_rejections.csv", rejections_csv(records, cfg.alphas))
    atomic_write(out / "sweep_runs.csv", runs_csv(records))
    report = _header(args, sweep=cfg)
    report["runs"] = [dataclasses.asdict(r) for r in records]
    write_report(out, report)
    print(curves_csv(records), end="")
    return 0


def cmd_fit_perturbation(args) -> int:
    ds = ingest(args.questions, args.responses)
    spec = ModelSpec(args.kind, args.alpha_sigma, args.beta_sigma)
    sampler = _sampler(args)
    fit = fit_perturbation(ds, args.kind, sampler, args.alpha, args.seed, spec)
    out = _out(args)
    report = _header(args, model=spec, sampler=sampler)
    report["posterior"] = {k: _summary_dict(s) for k, s in fit.summaries.items()}
    report["ratio"] = fit.ratio
    report["ppc"] = {"sum_p": fit.ppc_sum, "min_p": fit.ppc_min, "per_set_p": fit.ppc.p_values}
    report["diagnostics"] = fit.diagnostics
    _save_draws(out / "posterior.npz", fit.draws)
    _save_npz(out / "ppc_traces.npz", targets=np.array(fit.ppc.targets), observed=fit.ppc.observed, replicated=fit.ppc.replicated)
    write_report(out, report)
    tau = spec.hyper_names[1]
    s = fit.summaries
    print(
        f"sigma mean={s['sigma'].mean:.4g}  {tau} mean={s[tau].mean:.4g} "
        f"[{s[tau].q025:.4g}, {s[tau].q975:.4g}]  ratio={fit.ratio:.4g}  PPC p={fit.ppc_sum:.4g}"
    )
    return 0


def cmd_homogeneity(args) -> int:
    ds = ingest(args.questions, args.responses)
    cfg = HomogeneityConfig(mode=args.mode, n_draws=args.n_draws, smoothing=args.smoothing, outlier_quantile=args.outlier_quantile, seed=args.seed)
    res = homogeneity_test(ds, cfg, exclude=args.exclude)
    out = _out(args)
    counts, edges = np.histogram(res.information, bins=args.bins)
    report = _header(args, homogeneity=cfg)
    report["statistic"] = res.statistic
    report["p_value"] = res.p_value
    report["outliers"] = list(res.outliers)
    report["information"] = res.information_map()
    report["histogram"] = {"counts": counts, "edges": edges}
    write_report(out, report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["participant_id", "information", "replicate_threshold", "flagged"])
    for p, i, t in zip(res.participants, res.information, res.threshold):
        w.writerow([p, repr(float(i)), repr(float(t)), str(p in res.outliers).lower()])
    atomic_write(out / "information.csv", buf.getvalue())
    atomic_write(out / "homogeneity_traces.csv", res.ppc.to_csv())
    print(f"T={res.statistic:.4g}  p={res.p_value:.4g}  flagged={list(res.outliers)}")
    return 0


def cmd_export_traces(args) -> int:
    out = _out(args)
    wrote = []
    if args.posterior:
        draws = PosteriorDraws.load(args.posterior)
        names = args.names or None
        atomic_write(out / "draws.csv", draws.to_csv(names))
        wrote.append("draws.csv")
    if args.traces:
        with np.load(args.traces, allow_pickle=False) as f:
            targets = [str(t) for t in f["targets"]]
            obs, rep = f["observed"], f["replicated"]
        per = [PpcResult(obs[:, i], rep[:, i], t) for i, t in enumerate(targets)]
        total = PpcResult(obs.sum(axis=1), rep.sum(axis=1), "sum")
        atomic_write(out / "ppc_sum_traces.csv", total.to_csv())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target", "draw", "T_obs", "T_rep", "indicator"])
        for r in per:
            for i, (o, p, e) in enumerate(zip(r.observed, r.replicated, r.indicator)):
                w.writerow([r.label, i, repr(float(o)), repr(float(p)), int(e)])
        atomic_write(out / "ppc_set_traces.csv", buf.getvalue())
        wrote += ["ppc_sum_traces.csv", "ppc_set_traces.csv"]
    if not wrote:
        raise ValidationError("nothing to export: pass --posterior and/or --traces")
    print(f"wrote {', '.join(wrote)} to {out}")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iiatest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"iiatest {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    _add_common(p)
    p.add_argument("--kind", choices=("iia", "additive", "multiplicative"), default="iia")
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--sigma-p", type=float, default=0.0)
    p.add_argument("--sigma-m", type=float, default=0.0)
    p.add_argument("--m", type=int, default=100, help="number of question sets")
    p.add_argument("--n", type=int, default=30, help="responses per question")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest-check", help="validate dataset files and print a summary")
    _add_data_flags(p)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("test", help="classical and posterior predictive IIA tests")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-bayes", action="store_true", help="skip the posterior predictive check")
    _add_mle_flags(p)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("sweep", help="repeat generate-then-test over a perturbation grid")
    _add_common(p)
    p.add_argument("--kind", choices=("additive", "multiplicative"), default="additive")
    p.add_argument("--grid", type=float, nargs="+", default=list(SweepConfig.grid))
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-bayes", action="store_true")
    _add_mle_flags(p)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit-perturbation", help="fit a perturbation model and check it")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--kind", choices=("additive", "multiplicative"), default="additive")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_fit_perturbation)

    p = sub.add_parser("homogeneity", help="test whether participants share one choice distribution")
    _add_common(p)
    _add_data_flags(p)
    p.add_argument("--mode", choices=("dirichlet", "plugin"), default="dirichlet")
    p.add_argument("--n-draws", type=int, default=1000)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--outlier-quantile", type=float, default=0.99)
    p.add_argument("--exclude", nargs="*", default=[], help="participant ids to drop")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_homogeneity)

    p = sub.add_parser("export-traces", help="convert saved draws and PPC traces to CSV")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--posterior", type=Path)
    p.add_argument("--traces", type=Path)
    p.add_argument("--names", nargs="*", help="scalars to export (default: all)")
    p.set_defaults(func=cmd_export_traces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SamplerError as e:
        print(f"sampler failure: {e}", file=sys.stderr)
        return EXIT_SAMPLER
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
