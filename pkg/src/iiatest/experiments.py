"""Analysis pipeline and simulation sweeps.

A repetition generates one synthetic dataset, runs the classical test on
every set and, optionally, the Bayesian check from one shared IIA posterior.
Repetition ``r`` uses the same dataset seed at every grid point, so grid
points differ only through the perturbation scale.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng as _rng
from .bayes import ModelSpec, PosteriorDraws, SamplerConfig, posterior_summary, sample_posterior
from .core import Dataset
from .mle import MleConfig
from .ppc import IiaPpc, check_divergences, iia_ppc
from .stats import UntestableError, aggregate_min, aggregate_sum, gft, rejection_curve
from .synthgen import SynthConfig, generate_dataset

DEFAULT_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    bayes: bool = True
    mle: MleConfig = MleConfig()
    sampler: SamplerConfig = SamplerConfig()
    model: ModelSpec = ModelSpec("iia")
    seed: int = 0


@dataclass(frozen=True)
class SetRow:
    target: str
    statistic: float
    dof: int
    p_gft: float
    p_ppc: float
    note: str = ""


@dataclass(eq=False)
class Analysis:
    rows: list[SetRow]
    gft_min: float
    gft_sum: float
    gft_sum_statistic: float
    gft_sum_dof: int
    ppc_min: float = math.nan
    ppc_sum: float = math.nan
    summaries: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    draws: PosteriorDraws | None = None
    ppc: IiaPpc | None = None

    @property
    def gft_p_values(self) -> np.ndarray:
        return np.array([r.p_gft for r in self.rows if not math.isnan(r.p_gft)])

    @property
    def ppc_p_values(self) -> np.ndarray:
        return np.array([r.p_ppc for r in self.rows if not math.isnan(r.p_ppc)])

    def aggregates(self, alpha: float) -> dict:
        m = max(len(self.gft_p_values), 1)
        m_ppc = max(len(self.ppc_p_values), 1)
        return {
            "alpha": alpha,
            "bonferroni_alpha": alpha / m,
            "gft_min_p": self.gft_min,
            "gft_min_reject": bool(self.gft_min < alpha / m),
            "gft_sum_p": self.gft_sum,
            "gft_sum_statistic": self.gft_sum_statistic,
            "gft_sum_dof": self.gft_sum_dof,
            "gft_sum_reject": bool(self.gft_sum < alpha),
            "ppc_min_p": self.ppc_min,
            "ppc_min_reject": bool(self.ppc_min < alpha / m_ppc) if not math.isnan(self.ppc_min) else None,
            "ppc_sum_p": self.ppc_sum,
            "ppc_sum_reject": bool(self.ppc_sum < alpha) if not math.isnan(self.ppc_sum) else None,
        }


def analyze(dataset: Dataset, config: AnalysisConfig = AnalysisConfig()) -> Analysis:
    """Classical test per set, both aggregations, and (optionally) the PPC."""
    if dataset.m == 0:
        raise UntestableError("dataset has no question sets")
    results, rows = [], {}
    for qs, table in dataset:
        try:
            r = gft(qs, table, config.mle)
        except UntestableError as e:
            rows[qs.target] = SetRow(qs.target, math.nan, 0, math.nan, math.nan, str(e))
            continue
        results.append(r)
        rows[qs.target] = SetRow(qs.target, r.statistic, r.dof, r.p_value, math.nan)
    if not results:
        raise UntestableError("no question set is testable")
    mn = aggregate_min([r.p_value for r in results], config.alpha)
    sm = aggregate_sum(results)
    out = Analysis(
        rows=[rows[qs.target] for qs in dataset.question_sets],
        gft_min=mn.aggregate_p,
        gft_sum=sm.aggregate_p,
        gft_sum_statistic=sm.statistic,
        gft_sum_dof=sm.dof,
    )
    if not config.bayes:
        return out
    draws, model = sample_posterior(config.model, dataset, replace(config.sampler, seed=config.seed))
    check_divergences(draws)
    check = iia_ppc(draws, model, seed=config.seed)
    p = check.p_values
    out.rows = [replace(row, p_ppc=float(pi)) for row, pi in zip(out.rows, p)]
    out.ppc_min = check.min_aggregate(config.alpha).aggregate_p
    out.ppc_sum = check.sum_result().p_value
    out.summaries = {k: posterior_summary(draws, k) for k in config.model.hyper_names}
    out.diagnostics = draws.diagnostics()
    out.draws, out.ppc = draws, check
    return out


# -- sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    kind: str = "additive"
    grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8)
    repetitions: int = 10
    sigma: float = 2.0
    m: int = 100
    n: int = 30
    seed: int = 0
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    analysis: AnalysisConfig = AnalysisConfig()

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative"):
            raise ValueError("sweep kind must be additive or multiplicative")
        if self.repetitions < 1 or not self.grid:
            raise ValueError("need at least one grid point and one repetition")


def repetition_seed(seed: int, r: int) -> int:
    return int(_rng.seed_sequence(seed, "repetition", r).generate_state(1, np.uint64)[0] >> 1)


def synth_config(cfg: SweepConfig, value: float, r: int) -> SynthConfig:
    scale = {"sigma_p": value} if cfg.kind == "additive" else {"sigma_m": value}
    return SynthConfig(sigma=cfg.sigma, m=cfg.m, n=cfg.n, seed=repetition_seed(cfg.seed, r), kind=cfg.kind, **scale)


@dataclass(frozen=True)
class RunRecord:
    value: float
    repetition: int
    seed: int
    gft_min: float
    gft_sum: float
    ppc_min: float
    ppc_sum: float
    gft_rejections: tuple[int, ...]
    ppc_rejections: tuple[int, ...]
    testable: int
    ppc_sets: int = 0
    divergences: int = 0
    rhat_sigma: float = math.nan


def run_point(cfg: SweepConfig, value: float, r: int) -> RunRecord:
    sc = synth_config(cfg, value, r)
    ds, _ = generate_dataset(sc)
    a = analyze(ds, replace(cfg.analysis, seed=sc.seed))
    g = a.gft_p_values
    pp = a.ppc_p_values
    return RunRecord(
        value=value,
        repetition=r,
        seed=sc.seed,
        gft_min=a.gft_min,
        gft_sum=a.gft_sum,
        ppc_min=a.ppc_min,
        ppc_sum=a.ppc_sum,
        gft_rejections=tuple(int(x) for x in rejection_curve(g, cfg.alphas)),
        ppc_rejections=tuple(int(x) for x in rejection_curve(pp, cfg.alphas)) if pp.size else (),
        testable=int(g.size),
        ppc_sets=int(pp.size),
        divergences=int(a.diagnostics.get("divergences", 0)),
        rhat_sigma=float(a.diagnostics.get("sigma", {}).get("split_rhat", math.nan)),
    )


def run_sweep(cfg: SweepConfig, progress=None) -> list[RunRecord]:
    out = []
    for value in cfg.grid:
        for r in range(cfg.repetitions):
            rec = run_point(cfg, value, r)
            out.append(rec)
            if progress is not None:
                progress(rec)
    return out


def _fmt(x) -> str:
    return repr(float(x))


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return math.fsum(xs) / len(xs) if xs else math.nan


def curves_csv(records: Sequence[RunRecord]) -> str:
    """Mean aggregate p-values per grid point."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["perturbation", "repetitions", "gft_min", "gft_sum", "ppc_min", "ppc_sum"])
    for v in dict.fromkeys(r.value for r in records):
        rs = [r for r in records if r.value == v]
        w.writerow(
            [_fmt(v), len(rs)]
            + [_fmt(_nanmean([getattr(r, k) for r in rs])) for k in ("gft_min", "gft_sum", "ppc_min", "ppc_sum")]
        )
    return buf.getvalue()


def rejections_csv(records: Sequence[RunRecord], alphas: Sequence[float]) -> str:
    """Mean number and fraction of per-set rejections at each threshold."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["perturbation", "alpha", "gft_rejections", "gft_fraction", "ppc_rejections", "ppc_fraction"])
    for v in dict.fromkeys(r.value for r in records):
        rs = [r for r in records if r.value == v]
        for j, a in enumerate(alphas):
            row = [_fmt(v), _fmt(a)]
            for kind in ("gft", "ppc"):
                runs = [r for r in rs if getattr(r, f"{kind}_rejections")]
                if runs:
                    counts = [getattr(r, f"{kind}_rejections")[j] for r in runs]
                    sizes = [r.testable if kind == "gft" else r.ppc_sets for r in runs]
                    frac = [c / k for c, k in zip(counts, sizes)]
                    row += [_fmt(math.fsum(counts) / len(runs)), _fmt(math.fsum(frac) / len(runs))]
                else:
                    row += ["nan", "nan"]
            w.writerow(row)
    return buf.getvalue()


def runs_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["perturbation", "repetition", "seed", "gft_min", "gft_sum", "ppc_min", "ppc_sum", "testable", "divergences", "rhat_sigma"])
    for r in records:
        w.writerow(
            [_fmt(r.value), r.repetition, r.seed, _fmt(r.gft_min), _fmt(r.gft_sum), _fmt(r.ppc_min), _fmt(r.ppc_sum), r.testable, r.divergences, _fmt(r.rhat_sigma)]
        )
    return buf.getvalue()


# -- perturbation fits ------------------------------------------------------------


@dataclass(eq=False)
class PerturbationFit:
    kind: str
    summaries: dict
    ppc_sum: float
    ppc_min: float
    ratio: float
    diagnostics: dict
    draws: PosteriorDraws
    ppc: IiaPpc


def fit_perturbation(
    dataset: Dataset,
    kind: str = "additive",
    sampler: SamplerConfig = SamplerConfig(),
    alpha: float = 0.05,
    seed: int = 0,
    spec: ModelSpec | None = None,
) -> PerturbationFit:
    """Fit a perturbation model and check it with its own replicates.

    `ratio` is ``mean(sigma_p) / mean(sigma)`` (or ``sigma_m``), a
    scale-free violation strength.
    """
    if kind not in ("additive", "multiplicative"):
        raise ValueError("kind must be additive or multiplicative")
    spec = spec or ModelSpec(kind)
    draws, model = sample_posterior(spec, dataset, replace(sampler, seed=seed))
    check_divergences(draws)
    check = iia_ppc(draws, model, seed=seed)
    summaries = {k: posterior_summary(draws, k) for k in spec.hyper_names}
    tau = spec.hyper_names[1]
    return PerturbationFit(
        kind=kind,
        summaries=summaries,
        ppc_sum=check.sum_result().p_value,
        ppc_min=check.min_aggregate(alpha).aggregate_p,
        ratio=summaries[tau].mean / summaries["sigma"].mean,
        diagnostics=draws.diagnostics(),
        draws=draws,
        ppc=check,
    )
