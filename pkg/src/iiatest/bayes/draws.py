"""Posterior draws container, summaries and the model-level sampling entry point."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Dataset
from . import diagnostics as diag
from .models import ChoiceModel, ModelSpec
from .nuts import SamplerConfig, SamplerError, sample_nuts

_SCALES = ("sigma", "sigma_p", "sigma_m")


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float

    def covers(self, value: float) -> bool:
        return self.q025 <= value <= self.q975


@dataclass(eq=False)
class PosteriorDraws:
    """Post-warm-up draws of unconstrained latents, shape ``(chains, draws, dim)``."""

    positions: np.ndarray
    names: tuple[str, ...]
    stats: dict = field(default_factory=dict)
    spec: ModelSpec | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, float)
        if self.positions.ndim != 3 or self.positions.shape[2] != len(self.names):
            raise ValueError("positions must be (chains, draws, len(names))")
        self._index = {k: i for i, k in enumerate(self.names)}

    @property
    def n_chains(self) -> int:
        return self.positions.shape[0]

    @property
    def n_draws(self) -> int:
        return self.positions.shape[1]

    def pooled(self) -> np.ndarray:
        return self.positions.reshape(-1, self.positions.shape[2])

    def scalar_names(self) -> tuple[str, ...]:
        return tuple(s for s in _SCALES if f"log_{s}" in self._index) + self.names

    def scalar(self, name: str) -> np.ndarray:
        """Draws of a named scalar as ``(chains, draws)``; scales come back on natural scale."""
        if name in _SCALES and f"log_{name}" in self._index:
            return np.exp(self.positions[:, :, self._index[f"log_{name}"]])
        if name not in self._index:
            raise KeyError(f"unknown scalar {name!r}")
        return self.positions[:, :, self._index[name]]

    @property
    def divergences(self) -> int:
        d = self.stats.get("divergent")
        return 0 if d is None else int(np.sum(d))

    @property
    def divergence_rate(self) -> float:
        return self.divergences / (self.n_chains * self.n_draws)

    def diagnostics(self, names: Sequence[str] | None = None) -> dict:
        if names is None:
            names = [s for s in _SCALES if f"log_{s}" in self._index]
        out = {"divergences": self.divergences, "chains": self.n_chains, "draws": self.n_draws}
        for k in names:
            x = self.scalar(k)
            out[k] = {"rhat": diag.rank_rhat(x), "split_rhat": diag.split_rhat(x), "ess_bulk": diag.bulk_ess(x)}
        if "step_size" in self.stats:
            out["step_size"] = [float(s[-1]) for s in self.stats["step_size"]]
            out["mean_tree_depth"] = float(np.mean(self.stats["tree_depth"]))
        return out

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        """Long table ``draw,chain,name,value``."""
        names = list(names) if names is not None else list(self.scalar_names())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["draw", "chain", "name", "value"])
        cols = {k: self.scalar(k) for k in names}
        for c in range(self.n_chains):
            for i in range(self.n_draws):
                for k in names:
                    w.writerow([i, c, k, repr(float(cols[k][c, i]))])
        return buf.getvalue()

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            positions=self.positions,
            names=np.array(self.names),
            kind=np.array(self.spec.kind if self.spec else ""),
            alpha_sigma=np.array(self.spec.alpha_sigma if self.spec else np.nan),
            beta_sigma=np.array(self.spec.beta_sigma if self.spec else np.nan),
            centered=np.array(self.spec.centered if self.spec else True),
            **{f"stat_{k}": v for k, v in self.stats.items()},
        )

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        with np.load(path, allow_pickle=False) as f:
            spec = None
            kind = str(f["kind"])
            if kind:
                centered = bool(f["centered"]) if "centered" in f.files else True
                spec = ModelSpec(kind, float(f["alpha_sigma"]), float(f["beta_sigma"]), centered)
            stats = {k[5:]: f[k] for k in f.files if k.startswith("stat_")}
            return cls(f["positions"], tuple(str(s) for s in f["names"]), stats, spec)


def posterior_summary(draws: PosteriorDraws, name: str) -> Summary:
    """Mean, sd and 2.5/50/97.5 percentiles over pooled chains."""
    x = draws.scalar(name).reshape(-1)
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return Summary(float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0, *map(float, q))


def sample_posterior(
    spec: ModelSpec, dataset: Dataset, config: SamplerConfig = SamplerConfig()
) -> tuple[PosteriorDraws, ChoiceModel]:
    """NUTS draws for a choice model. Returns ``(draws, compiled_model)``."""
    model = ChoiceModel(spec, dataset)
    positions, stats = sample_nuts(model, config)
    draws = PosteriorDraws(positions, model.names, stats, spec)
    if draws.divergences == draws.n_chains * draws.n_draws:
        raise SamplerError("every post-warm-up transition diverged")
    return draws, model
