"""Multinomial no-U-turn sampler with Stan-style warm-up adaptation.

Trajectories are built by repeated doubling; the proposal is drawn
multinomially (biased progressive sampling across doublings, uniform within a
subtree) and expansion stops on the generalized no-U-turn criterion, including
the extra checks across merged subtrees. Warm-up tunes the step size by dual
averaging and a diagonal inverse metric over doubling windows.

Any object with ``dim`` and ``logp_grad(x) -> (float, ndarray)`` can be
sampled.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import rng as _rng

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    draws: int = 2000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_step_size: float = 1.0
    min_step_size: float = 1e-8
    max_step_size: float = 1e7
    init_radius: float = 2.0
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 0 or self.draws < 1:
            raise ValueError("chains and draws must be positive, warmup non-negative")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")


class _Point:
    __slots__ = ("q", "p", "g", "lp", "ps")

    def __init__(self, q, p, g, lp, ps=None):
        self.q, self.p, self.g, self.lp, self.ps = q, p, g, lp, ps


class _Tree:
    __slots__ = ("beg", "end", "rho", "log_w", "proposal")

    def __init__(self, beg, end, rho, log_w, proposal):
        self.beg, self.end, self.rho, self.log_w, self.proposal = beg, end, rho, log_w, proposal


def _no_uturn(ps_a, ps_b, rho) -> bool:
    return float(ps_a @ rho) > 0 and float(ps_b @ rho) > 0


class _DualAveraging:
    def __init__(self, delta, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.restart(1.0)

    def restart(self, eps):
        self.mu = math.log(10 * eps)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1 - w) * self.x_bar + w * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class _Windows:
    """Stan's warm-up schedule: fast buffer, doubling slow windows, fast buffer."""

    def __init__(self, n_warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.n = n_warmup
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self.enabled = n_warmup >= 20

    def in_window(self) -> bool:
        return self.enabled and self.init_buffer <= self.counter < self.n - self.term_buffer

    def window_end(self) -> bool:
        return self.enabled and self.counter == self.next_window and self.counter != self.n

    def advance_window(self):
        last = self.n - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= self.n - self.term_buffer:
            self.next_window = last


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        return self.m2 / (self.n - 1)


class NutsChain:
    def __init__(self, target, config: SamplerConfig, gen: np.random.Generator):
        self.target = target
        self.cfg = config
        self.rng = gen
        self.dim = target.dim
        self.inv_mass = np.ones(self.dim)
        self.eps = config.init_step_size

    # -- integrator -----------------------------------------------------------

    def _leapfrog(self, pt: _Point, eps: float) -> _Point:
        p = pt.p + (0.5 * eps) * pt.g
        q = pt.q + eps * (self.inv_mass * p)
        lp, g = self.target.logp_grad(q)
        p = p + (0.5 * eps) * g
        return _Point(q, p, g, lp, self.inv_mass * p)

    def _hamiltonian(self, pt: _Point) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            h = -pt.lp + 0.5 * float(pt.p @ pt.ps)
        return math.inf if math.isnan(h) else h

    def _momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)

    # -- trajectory -----------------------------------------------------------

    def _build(self, start: _Point, depth: int, eps: float, h0: float) -> _Tree | None:
        if depth == 0:
            pt = self._leapfrog(start, eps)
            h = self._hamiltonian(pt)
            self._n_leapfrog += 1
            self._sum_metro += 1.0 if h0 - h > 0 else math.exp(h0 - h)
            if h - h0 > MAX_DELTA_H:
                self._divergent = True
                return None
            return _Tree(pt, pt, pt.p.copy(), h0 - h, pt)

        init = self._build(start, depth - 1, eps, h0)
        if init is None:
            return None
        final = self._build(init.end, depth - 1, eps, h0)
        if final is None:
            return None
        log_w = np.logaddexp(init.log_w, final.log_w)
        proposal = init.proposal
        if math.log(self.rng.random()) < final.log_w - log_w:
            proposal = final.proposal
        rho = init.rho + final.rho
        ok = (
            _no_uturn(init.beg.ps, final.end.ps, rho)
            and _no_uturn(init.beg.ps, final.beg.ps, init.rho + final.beg.p)
            and _no_uturn(init.end.ps, final.end.ps, final.rho + init.end.p)
        )
        if not ok:
            return None
        return _Tree(init.beg, final.end, rho, log_w, proposal)

    def transition(self, current: _Point) -> tuple[_Point, dict]:
        p0 = self._momentum()
        z0 = _Point(current.q, p0, current.g, current.lp, self.inv_mass * p0)
        h0 = self._hamiltonian(z0)
        left = right = z0
        rho = p0.copy()
        log_w = 0.0
        sample = z0
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False
        depth = 0
        while depth < self.cfg.max_tree_depth:
            forward = self.rng.random() > 0.5
            near = right if forward else left
            far = left if forward else right
            sub = self._build(near, depth, self.eps if forward else -self.eps, h0)
            if sub is None:
                break
            depth += 1
            if sub.log_w > log_w or math.log(self.rng.random()) < sub.log_w - log_w:
                sample = sub.proposal
            log_w = float(np.logaddexp(log_w, sub.log_w))
            rho_old = rho
            rho = rho_old + sub.rho
            ok = (
                _no_uturn(far.ps, sub.end.ps, rho)
                and _no_uturn(far.ps, sub.beg.ps, rho_old + sub.beg.p)
                and _no_uturn(near.ps, sub.end.ps, sub.rho + near.p)
            )
            if forward:
                right = sub.end
            else:
                left = sub.end
            if not ok:
                break
        n = max(self._n_leapfrog, 1)
        stats = {
            "accept_stat": self._sum_metro / n,
            "n_leapfrog": self._n_leapfrog,
            "tree_depth": depth,
            "divergent": self._divergent,
            "step_size": self.eps,
            "energy": h0,
            "lp": sample.lp,
        }
        return _Point(sample.q, None, sample.g, sample.lp), stats

    # -- adaptation -----------------------------------------------------------

    def _init_step_size(self, current: _Point):
        eps = self.eps

        def delta_h(e):
            p0 = self._momentum()
            z0 = _Point(current.q, p0, current.g, current.lp, self.inv_mass * p0)
            z1 = self._leapfrog(z0, e)
            return self._hamiltonian(z0) - self._hamiltonian(z1)

        direction = 1 if delta_h(eps) > math.log(0.8) else -1
        while True:
            dh = delta_h(eps)
            if direction == 1 and not dh > math.log(0.8):
                break
            if direction == -1 and not dh < math.log(0.8):
                break
            eps = eps * 2 if direction == 1 else eps * 0.5
            if eps > self.cfg.max_step_size:
                raise SamplerError("step size diverged during initialization; posterior may be improper")
            if eps < self.cfg.min_step_size:
                raise SamplerError("step size collapsed to zero during initialization")
        self.eps = eps

    def _initial_point(self) -> _Point:
        r = self.cfg.init_radius
        for _ in range(100):
            q = self.rng.uniform(-r, r, self.dim)
            lp, g = self.target.logp_grad(q)
            if np.isfinite(lp) and np.all(np.isfinite(g)):
                return _Point(q, None, g, lp)
        raise SamplerError("could not find a finite initial point in 100 attempts")

    def run(self, init=None) -> tuple[np.ndarray, dict]:
        cfg = self.cfg
        if init is None:
            current = self._initial_point()
        else:
            q = np.asarray(init, float).copy()
            lp, g = self.target.logp_grad(q)
            if not np.isfinite(lp):
                raise SamplerError("non-finite log density at the supplied initial point")
            current = _Point(q, None, g, lp)

        self._init_step_size(current)
        da = _DualAveraging(cfg.target_accept)
        da.restart(self.eps)
        windows = _Windows(cfg.warmup)
        welford = _Welford(self.dim)
        for _ in range(cfg.warmup):
            current, st = self.transition(current)
            self.eps = min(max(da.update(st["accept_stat"]), cfg.min_step_size), cfg.max_step_size)
            if windows.in_window():
                welford.add(current.q)
            if windows.window_end():
                windows.advance_window()
                n = welford.n
                var = welford.variance()
                self.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                welford = _Welford(self.dim)
                # gradients are metric independent; only the step size restarts
                self._init_step_size(current)
                da.restart(self.eps)
            windows.counter += 1
        if cfg.warmup > 0:
            self.eps = da.final()

        draws = np.empty((cfg.draws, self.dim))
        keys = ("accept_stat", "n_leapfrog", "tree_depth", "divergent", "step_size", "energy", "lp")
        stats = {k: np.empty(cfg.draws) for k in keys}
        for i in range(cfg.draws):
            current, st = self.transition(current)
            draws[i] = current.q
            for k in keys:
                stats[k][i] = st[k]
        stats["divergent"] = stats["divergent"].astype(bool)
        stats["inv_mass"] = self.inv_mass.copy()
        return draws, stats


def _run_chain(target, config, seq, init):
    chain = NutsChain(target, config, np.random.Generator(np.random.PCG64(seq)))
    return chain.run(init)


def sample_nuts(target, config: SamplerConfig = SamplerConfig(), inits=None):
    """Run ``config.chains`` independent chains.

    Returns ``(draws, stats)`` with draws shaped ``(chains, draws, dim)`` and
    each stats entry shaped ``(chains, draws)``.
    """
    seqs = [_rng.seed_sequence(config.seed, _rng.SAMPLING, c) for c in range(config.chains)]
    inits = [None] * config.chains if inits is None else list(inits)
    if config.n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_run_chain, [target] * config.chains, [config] * config.chains, seqs, inits))
    else:
        results = [_run_chain(target, config, s, i) for s, i in zip(seqs, inits)]
    draws = np.stack([r[0] for r in results])
    stats = {k: np.stack([r[1][k] for r in results]) for k in results[0][1]}
    return draws, stats
