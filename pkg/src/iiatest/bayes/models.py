"""Hierarchical choice models as unnormalized log-posteriors.

Unconstrained layout of a latent vector::

    [log_sigma, (log_sigma_p | log_sigma_m), contrasts ..., z_eps ...]

Per-set score contrasts are sampled directly (``w ~ N(0, sigma^2)``, centred)
by default, or as ``w = sigma * z`` with ``centered=False``. Perturbations are always
non-centred: additive noise ``eps = sigma_p * z_eps`` per (question, option)
and multiplicative factors ``1 + sigma_m * z_m`` per question. Scales get half-normal priors
(density ∝ exp(-x^2 / (2 a^2))) and the log-scale Jacobian; standardized
latents are standard normal. Constants are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..core import Dataset, ScoreVector, ValidationError

KIND_CODES = {"iia": 0, "additive": 1, "multiplicative": 2}
_HYPER = {"iia": ("sigma",), "additive": ("sigma", "sigma_p"), "multiplicative": ("sigma", "sigma_m")}


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "iia"
    alpha_sigma: float | None = None
    beta_sigma: float = 1.0
    centered: bool = True

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.alpha_sigma is None:
            object.__setattr__(self, "alpha_sigma", 2.0 if self.kind == "iia" else 1.5)
        if not (self.alpha_sigma > 0 and self.beta_sigma > 0):
            raise ValidationError("hyperprior scales must be positive")

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return _HYPER[self.kind]


@numba.njit(cache=True)
def _helmert_forward(w, set_w_off, set_s_off, set_k, out):
    """Scores from sum-to-zero contrasts via the orthonormal Helmert basis."""
    for i in range(set_k.shape[0]):
        k = set_k[i]
        wo = set_w_off[i]
        so = set_s_off[i]
        for r in range(k):
            out[so + r] = 0.0
        for j in range(1, k):
            c = w[wo + j - 1] / np.sqrt(j * (j + 1.0))
            for r in range(j):
                out[so + r] += c
            out[so + j] -= j * c


@numba.njit(cache=True)
def _helmert_backward(gs, set_w_off, set_s_off, set_k, out):
    for i in range(set_k.shape[0]):
        k = set_k[i]
        wo = set_w_off[i]
        so = set_s_off[i]
        for j in range(1, k):
            acc = 0.0
            for r in range(j):
                acc += gs[so + r]
            out[wo + j - 1] = (acc - j * gs[so + j]) / np.sqrt(j * (j + 1.0))


@numba.njit(cache=True, fastmath={"nsz", "arcp", "contract", "afn", "reassoc"})
def _logp_grad_kernel(
    x, kind, centered, a_sigma, b_sigma, q_idx, e_idx, counts, n,
    set_w_off, set_s_off, set_k, n_contrasts, s, gs, grad,
):
    h = 1 if kind == 0 else 2
    woff = h
    eoff = h + n_contrasts
    grad[:] = 0.0
    gs[:] = 0.0
    sigma = np.exp(x[0])
    r0 = sigma / a_sigma
    lp = x[0] - 0.5 * r0 * r0
    grad[0] = 1.0 - r0 * r0
    tau = 0.0
    if kind != 0:
        tau = np.exp(x[1])
        r1 = tau / b_sigma
        lp += x[1] - 0.5 * r1 * r1
        grad[1] = 1.0 - r1 * r1
    w = x[woff:eoff]
    if centered:
        inv_var = 1.0 / (sigma * sigma)
        ss = 0.0
        for j in range(woff, eoff):
            ss += x[j] * x[j]
            grad[j] -= x[j] * inv_var
        lp += -n_contrasts * x[0] - 0.5 * ss * inv_var
        grad[0] += -n_contrasts + ss * inv_var
        scale = 1.0
        start = eoff
    else:
        scale = sigma
        start = h
    for j in range(start, x.shape[0]):
        lp -= 0.5 * x[j] * x[j]
        grad[j] -= x[j]
    _helmert_forward(w, set_w_off, set_s_off, set_k, s)
    if scale != 1.0:
        for j in range(s.shape[0]):
            s[j] *= scale

    n_q, width = q_idx.shape
    logits = np.empty(width)
    ex = np.empty(width)
    g_scale = 0.0
    for q in range(n_q):
        if n[q] == 0.0:
            continue
        mult = 1.0
        if kind == 2:
            mult = 1.0 + tau * x[eoff + q]
        mx = -np.inf
        size = 0
        for c in range(width):
            j = q_idx[q, c]
            if j < 0:
                break
            val = s[j]
            if kind == 1:
                val += tau * x[eoff + e_idx[q, c]]
            elif kind == 2:
                val *= mult
            logits[c] = val
            if val > mx:
                mx = val
            size += 1
        tot = 0.0
        for c in range(size):
            ex[c] = np.exp(logits[c] - mx)
            tot += ex[c]
        lse = mx + np.log(tot)
        nq_over = n[q] / tot
        for c in range(size):
            a = counts[q, c]
            lp += a * (logits[c] - lse)
            r = a - nq_over * ex[c]
            j = q_idx[q, c]
            if kind == 2:
                gs[j] += mult * r
                grad[eoff + q] += r * s[j] * tau
                grad[1] += r * s[j] * tau * x[eoff + q]
            else:
                gs[j] += r
                if kind == 1:
                    e = eoff + e_idx[q, c]
                    grad[e] += tau * r
                    grad[1] += r * tau * x[e]
    if not centered:
        # s = sigma * H z, so d/dlog_sigma = sum_j gs_j s_j
        for j in range(s.shape[0]):
            g_scale += gs[j] * s[j]
            gs[j] *= scale
        grad[0] += g_scale
    gw = np.empty(n_contrasts)
    _helmert_backward(gs, set_w_off, set_s_off, set_k, gw)
    for j in range(n_contrasts):
        grad[woff + j] += gw[j]
    return lp


def helmert_basis(k: int) -> np.ndarray:
    """Orthonormal ``(k, k-1)`` basis of the sum-to-zero subspace."""
    h = np.zeros((k, k - 1))
    for j in range(1, k):
        h[:j, j - 1] = 1.0
        h[j, j - 1] = -j
        h[:, j - 1] /= np.sqrt(j * (j + 1.0))
    return h


class ChoiceModel:
    """A ModelSpec compiled against the topology of a dataset.

    Per-set scores enter only through sum-to-zero contrasts: shifting every
    score of a set leaves all choice probabilities unchanged, and integrating
    the per-set mean out of ``s ~ N(0, sigma^2 I)`` leaves ``K - 1``
    orthonormal contrasts distributed ``N(0, sigma^2)``. The posterior of the
    scales and of every choice probability is unchanged by this reduction.
    """

    def __init__(self, spec: ModelSpec, dataset: Dataset):
        self.spec = spec
        self.dataset = dataset
        self.kind_code = KIND_CODES[spec.kind]
        self.n_hyper = 1 if spec.kind == "iia" else 2

        prefix = "w" if spec.centered else "z_w"
        contrast_names, set_items = [], []
        s_off, w_off, ks = [], [], []
        rows_q, rows_idx, rows_counts = [], [], []
        n_s = 0
        for qs, table in dataset:
            items = qs.items
            s_off.append(n_s)
            w_off.append(len(contrast_names))
            ks.append(len(items))
            set_items.append(items)
            pos = {k: n_s + j for j, k in enumerate(items)}
            n_s += len(items)
            contrast_names.extend(f"{prefix}[{qs.target}|{j}]" for j in range(1, len(items)))
            for q in qs.questions:
                rows_q.append(q)
                rows_idx.append([pos[k] for k in q.choice_set])
                rows_counts.append(table.counts[q.id])
        width = max(len(r) for r in rows_idx)
        n_q = len(rows_q)
        self.questions = tuple(rows_q)
        self.set_items = tuple(set_items)
        self.set_s_off = np.asarray(s_off, dtype=np.int64)
        self.set_w_off = np.asarray(w_off, dtype=np.int64)
        self.set_k = np.asarray(ks, dtype=np.int64)
        self.n_scores = n_s
        self.n_contrasts = len(contrast_names)
        self.q_idx = np.full((n_q, width), -1, dtype=np.int64)
        self.counts = np.zeros((n_q, width))
        for r, (ix, c) in enumerate(zip(rows_idx, rows_counts)):
            self.q_idx[r, : len(ix)] = ix
            self.counts[r, : len(c)] = c
        self.mask = self.q_idx >= 0
        self.n = self.counts.sum(axis=1)

        self.e_idx = np.full_like(self.q_idx, -1)
        eps_names = []
        if spec.kind == "additive":
            e = 0
            for r, q in enumerate(rows_q):
                for c, k in enumerate(q.choice_set):
                    self.e_idx[r, c] = e
                    eps_names.append(f"z_eps[{q.id}|{k}]")
                    e += 1
        elif spec.kind == "multiplicative":
            eps_names = [f"z_m[{q.id}]" for q in rows_q]
        self.n_eps = len(eps_names)

        self.names = tuple(f"log_{h}" for h in spec.hyper_names) + tuple(contrast_names) + tuple(eps_names)
        self.dim = len(self.names)
        self._hyper_index = {h: i for i, h in enumerate(spec.hyper_names)}

        basis = np.zeros((self.n_scores, self.n_contrasts))
        for so, wo, k in zip(s_off, w_off, ks):
            basis[so : so + k, wo : wo + k - 1] = helmert_basis(k)
        self.basis = basis
        self._s = np.empty(self.n_scores)
        self._gs = np.empty(self.n_scores)

    # -- density ----------------------------------------------------------

    def _check(self, x) -> np.ndarray:
        if type(x) is not np.ndarray or x.dtype != np.float64:
            x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValidationError(f"latent state has shape {x.shape}, expected ({self.dim},)")
        return x

    def logp_grad(self, x) -> tuple[float, np.ndarray]:
        x = self._check(x)
        grad = np.empty(self.dim)
        lp = _logp_grad_kernel(
            x, self.kind_code, self.spec.centered, self.spec.alpha_sigma, self.spec.beta_sigma,
            self.q_idx, self.e_idx, self.counts, self.n,
            self.set_w_off, self.set_s_off, self.set_k, self.n_contrasts,
            self._s, self._gs, grad,
        )
        return lp, grad

    def logp(self, x) -> float:
        return self.logp_grad(x)[0]

    # -- latent bookkeeping -------------------------------------------------

    def hyper_index(self, name: str) -> int:
        return self._hyper_index[name]

    def scores_block(self, x: np.ndarray) -> np.ndarray:
        """Centred scores for one state or a stack of states (..., dim)."""
        w = x[..., self.n_hyper : self.n_hyper + self.n_contrasts]
        s = w @ self.basis.T
        if self.spec.centered:
            return s
        return np.exp(x[..., 0])[..., None] * s

    def score_vectors(self, x) -> list[ScoreVector]:
        s = self.scores_block(np.asarray(x, float))
        return [
            ScoreVector(qs.target, items, s[off : off + len(items)])
            for qs, items, off in zip(self.dataset.question_sets, self.set_items, self.set_s_off)
        ]

    def question_log_probs(self, x: np.ndarray) -> np.ndarray:
        """Log choice probabilities, shape (..., questions, width); padding is -inf."""
        x = np.asarray(x, float)
        s = self.scores_block(x)
        safe = np.where(self.mask, self.q_idx, 0)
        logits = s[..., safe]
        if self.spec.kind != "iia":
            tau = np.exp(x[..., 1])[..., None, None]
            z = x[..., self.n_hyper + self.n_contrasts :]
            if self.spec.kind == "additive":
                logits = logits + tau * z[..., np.where(self.mask, self.e_idx, 0)]
            else:
                logits = logits * (1.0 + tau * z[..., :, None])
        logits = np.where(self.mask, logits, -np.inf)
        mx = logits.max(axis=-1, keepdims=True)
        return logits - (mx + np.log(np.exp(logits - mx).sum(axis=-1, keepdims=True)))

    def state(self, sigma=1.0, tau=None, scores=None, z_eps=None) -> np.ndarray:
        """Latent vector from natural-scale values.

        `scores` is a flat array over all set items (set order); only its
        per-set contrasts are kept.
        """
        x = np.zeros(self.dim)
        x[0] = np.log(sigma)
        if self.n_hyper == 2:
            x[1] = np.log(1.0 if tau is None else tau)
        if scores is not None:
            w = np.asarray(scores, float) @ self.basis
            x[self.n_hyper : self.n_hyper + self.n_contrasts] = w if self.spec.centered else w / sigma
        if z_eps is not None:
            x[self.n_hyper + self.n_contrasts :] = z_eps
        return x


def log_posterior(spec: ModelSpec, dataset: Dataset, state) -> float:
    return ChoiceModel(spec, dataset).logp(state)


def log_posterior_gradient(spec: ModelSpec, dataset: Dataset, state) -> np.ndarray:
    return ChoiceModel(spec, dataset).logp_grad(state)[1]
