"""Split-variable priors: uniform, DART Dirichlet, and the longitudinal L-Dirichlet.

All selectors keep their split probabilities on the log scale: Dirichlet
draws with concentrations far below one underflow in double precision, and
the concentration updates need ``log q`` anyway.

Concentration parameters are sampled on a grid in ``lam = alpha / (alpha + rho)``
with a ``Beta(a, b)`` prior on ``lam``.  The ``G`` grid points are the prior
quantiles at ``(i + 1/2) / G``, each carrying prior mass ``1/G``, so the
discrete prior is within ``1/(2G)`` of the continuous one in distribution
and every grid update is an exact categorical draw from the corresponding
discrete posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import beta as beta_dist

from .data import DataError, GroupingMeta


def log_dirichlet(rng, conc) -> np.ndarray:
    """Log of a Dirichlet draw, stable for tiny concentrations.

    Uses ``Gamma(a) = Gamma(a + 1) * U^(1/a)`` on the log scale.
    """
    conc = np.asarray(conc, dtype=float)
    g = np.log(rng.standard_gamma(conc + 1.0)) + np.log1p(-rng.random(len(conc))) / conc
    top = g.max()
    return g - (top + math.log(np.exp(g - top).sum()))


def c_schedule(t: int, j: int) -> float:
    """Beta shape of the concentration hyperprior of past group ``j``."""
    if t < 2:
        raise ValueError("no past groups when t < 2")
    if not 1 <= j <= t - 1:
        raise ValueError(f"j must lie in 1..{t - 1}")
    return 1.0 - (t - j) / (t - 1) * 0.5


class ConcentrationGrid:
    """Discretized ``Beta(a, b)`` prior on ``alpha / (alpha + rho)``."""

    def __init__(self, a: float, b: float, rho: float, size: int = 1000):
        if a <= 0 or b <= 0 or rho <= 0 or size < 2:
            raise ValueError("grid needs a, b, rho > 0 and size >= 2")
        self.a, self.b, self.rho, self.size = float(a), float(b), float(rho), int(size)
        self.lam = beta_dist.ppf((np.arange(size) + 0.5) / size, a, b)
        self.alpha = rho * self.lam / (1.0 - self.lam)
        self.log_prior = np.full(size, -math.log(size))

    def weights(self, loglik=None) -> np.ndarray:
        logw = self.log_prior if loglik is None else self.log_prior + loglik
        if not np.any(np.isfinite(logw)):
            raise FloatingPointError("grid log-density is nowhere finite")
        logw = np.where(np.isnan(logw), -np.inf, logw)
        w = np.exp(logw - logw.max())
        return w / w.sum()

    def sample(self, rng, loglik=None) -> float:
        cdf = np.cumsum(self.weights(loglik))
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), self.size - 1)
        return float(self.alpha[i])


def symmetric_dirichlet_loglik(alpha, log_q) -> np.ndarray:
    """log D(q | alpha/P, ..., alpha/P) as a function of ``alpha``, up to a constant."""
    alpha = np.asarray(alpha, dtype=float)
    P = len(log_q)
    return gammaln(alpha) - P * gammaln(alpha / P) + alpha / P * np.sum(log_q)


@dataclass
class SplitCounts:
    per_column: np.ndarray
    n_current: int
    n_past: int
    per_group: np.ndarray  # m^1 .. m^{t-1}


def tally_splits(trees, meta: GroupingMeta) -> SplitCounts:
    trees = getattr(trees, "trees", trees)
    m = np.zeros(meta.P, dtype=int)
    for tree in trees:
        for j in tree.split_var.values():
            m[j] += 1
    return counts_from_columns(m, meta)


def counts_from_columns(m, meta: GroupingMeta) -> SplitCounts:
    m = np.asarray(m, dtype=int)
    is_cur = meta.time == meta.t
    per_group = np.array([m[meta.time == k].sum() for k in range(1, meta.t)], dtype=int)
    return SplitCounts(m, int(m[is_cur].sum()), int(m[~is_cur].sum()), per_group)


class _Selector:
    kind = ""
    log_probs: np.ndarray

    def _set_log_probs(self, log_probs) -> None:
        self.log_probs = np.asarray(log_probs, dtype=float)
        self._cdf = np.cumsum(np.exp(self.log_probs))

    @property
    def P(self) -> int:
        return len(self.log_probs)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def split_prob(self, j: int) -> float:
        if not 0 <= j < self.P:
            raise IndexError(f"column {j} has no group label")
        return float(np.exp(self.log_probs[j]))

    def draw_split_var(self, rng) -> int:
        u = rng.random() * self._cdf[-1]
        return min(int(np.searchsorted(self._cdf, u, side="right")), self.P - 1)


class UniformSelector(_Selector):
    kind = "uniform"

    def __init__(self, P: int):
        self._set_log_probs(np.full(P, -math.log(P)))

    def update(self, counts: SplitCounts, rng) -> None:
        pass

    def sample_prior(self, rng) -> None:
        pass

    def snapshot(self) -> dict:
        return {}

    def get_state(self) -> dict:
        return {"kind": self.kind, "P": self.P}

    def set_state(self, state: dict) -> None:
        pass


class DirichletSelector(_Selector):
    """DART prior: q ~ D(alpha/P, ...), alpha/(alpha + rho) ~ Beta(a, b)."""

    kind = "dart"

    def __init__(self, P: int, a: float = 0.5, b: float = 1.0, rho: float | None = None,
                 grid_size: int = 1000):
        self.grid = ConcentrationGrid(a, b, P if rho is None else rho, grid_size)
        self.alpha = self.grid.rho
        self._set_log_probs(np.full(P, -math.log(P)))

    @property
    def q(self) -> np.ndarray:
        return self.probs

    def update_q(self, counts, rng) -> np.ndarray:
        m = getattr(counts, "per_column", counts)
        self._set_log_probs(log_dirichlet(rng, self.alpha / self.P + np.asarray(m)))
        return self.q

    def alpha_loglik(self, alpha=None) -> np.ndarray:
        return symmetric_dirichlet_loglik(self.grid.alpha if alpha is None else alpha,
                                          self.log_probs)

    def update_alpha(self, rng) -> float:
        self.alpha = self.grid.sample(rng, self.alpha_loglik())
        return self.alpha

    def update(self, counts: SplitCounts, rng) -> None:
        self.update_q(counts, rng)
        self.update_alpha(rng)

    def sample_prior(self, rng) -> None:
        self.alpha = self.grid.sample(rng)
        self._set_log_probs(log_dirichlet(rng, np.full(self.P, self.alpha / self.P)))

    def snapshot(self) -> dict:
        return {"alpha": self.alpha, "q": self.q}

    def get_state(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "log_q": self.log_probs.tolist()}

    def set_state(self, state: dict) -> None:
        self.alpha = float(state["alpha"])
        self._set_log_probs(state["log_q"])


class LDirichletSelector(_Selector):
    """Longitudinal grouping prior.

    A split picks the current group with probability ``w`` and then column
    ``j`` within it with probability ``v_t[j]``; otherwise it picks past time
    ``k`` with probability ``u[k]`` and column ``j`` within it with
    ``v_k[j]``.  Priors::

        w ~ Beta(w_a, w_b)
        v_t ~ D(eta/P_t, ...),        eta/(eta + P_t) ~ Beta(0.5, 1)
        v_k ~ D(phi_k/P_k, ...),      phi_k/(phi_k + P_k) ~ Beta(0.5, 1)
        u ~ D(alpha_1/(t-1), ..., alpha_{t-1}/(t-1)),
        alpha_k/(alpha_k + t) ~ Beta(c_k, 1),  c_k = c_schedule(t, k)

    Past times with no columns are dropped from ``u`` and from the alpha
    index set (the divisor stays ``t - 1``).  With no past columns at all
    (in particular ``t = 1``) ``w`` is fixed at 1 and the selector is a
    DART prior over the current group.
    """

    kind = "ldirichlet"

    def __init__(self, meta: GroupingMeta, w_a: float = 1.0, w_b: float = 1.0,
                 grid_size: int = 1000, conc_a: float = 0.5, conc_b: float = 1.0):
        self.meta = meta
        self.t = meta.t
        self.w_a, self.w_b = float(w_a), float(w_b)
        self.current = meta.current
        self.groups = [k for k in range(1, meta.t) if np.any(meta.time == k)]
        self.group_cols = [meta.past(k) for k in self.groups]
        if len(self.current) == 0 and not self.groups:
            raise DataError("no columns to select from")
        self.divisor = max(self.t - 1, 1)

        self.eta_grid = (ConcentrationGrid(conc_a, conc_b, len(self.current), grid_size)
                         if len(self.current) else None)
        self.phi_grids = [ConcentrationGrid(conc_a, conc_b, len(c), grid_size)
                          for c in self.group_cols]
        self.alpha_grids = [ConcentrationGrid(c_schedule(self.t, k), 1.0, self.t, grid_size)
                            for k in self.groups]

        K = len(self.groups)
        if self.w_free:
            self.log_w = (math.log(0.5), math.log(0.5))
        else:
            self.log_w = (0.0, -math.inf) if self.has_current else (-math.inf, 0.0)
        self.eta = float(len(self.current)) if len(self.current) else None
        self.phi = np.array([float(len(c)) for c in self.group_cols])
        self.alpha = np.full(K, float(self.t))
        self.log_vt = np.full(len(self.current), -math.log(max(len(self.current), 1)))
        self.log_u = np.full(K, -math.log(K)) if K else np.zeros(0)
        self.log_vk = [np.full(len(c), -math.log(len(c))) for c in self.group_cols]
        self._refresh()

    @property
    def has_current(self) -> bool:
        return len(self.current) > 0

    @property
    def has_past(self) -> bool:
        return len(self.groups) > 0

    @property
    def w_free(self) -> bool:
        return self.has_current and self.has_past

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def v_t(self) -> np.ndarray:
        return np.exp(self.log_vt)

    @property
    def v_k(self) -> list[np.ndarray]:
        return [np.exp(v) for v in self.log_vk]

    @property
    def w(self) -> float:
        return float(np.exp(self.log_w[0]))

    def _refresh(self) -> None:
        lw, l1w = self.log_w
        logp = np.full(self.meta.P, -np.inf)
        if self.has_current:
            logp[self.current] = lw + self.log_vt
        for cols, lu, lv in zip(self.group_cols, self.log_u, self.log_vk):
            logp[cols] = l1w + lu + lv
        self._set_log_probs(logp)

    def group_shares(self) -> np.ndarray:
        """Prior mass of each group: [w, (1-w) u_k for each retained past k]."""
        return np.concatenate([[self.w], (1.0 - self.w) * self.u])

    # ----------------------------------------------------------- updates
    def update_w(self, n_current: int, n_past: int, rng) -> float:
        if self.w_free:
            lw = log_dirichlet(rng, [self.w_a + n_current, self.w_b + n_past])
            self.log_w = (float(lw[0]), float(lw[1]))
            self._refresh()
        return self.w

    def update_u(self, group_counts, rng) -> np.ndarray:
        """``group_counts`` holds m^1..m^{t-1}; dropped (empty) times are ignored."""
        if self.t < 2:
            raise ValueError("update_u needs t >= 2")
        if not self.has_past:
            return self.u
        m = np.asarray(group_counts)[np.array(self.groups) - 1]
        self.log_u = log_dirichlet(rng, self.alpha / self.divisor + m)
        self._refresh()
        return self.u

    def update_v(self, which, counts, rng) -> np.ndarray:
        """Redraw ``v_t`` (``which="current"``) or ``v_k`` (``which=k``).

        ``counts`` are the split counts of the group's own columns.
        """
        counts = np.asarray(counts)
        if which == "current":
            self.log_vt = log_dirichlet(rng, self.eta / len(self.current) + counts)
            out = self.v_t
        else:
            i = self.groups.index(int(which))
            P_k = len(self.group_cols[i])
            self.log_vk[i] = log_dirichlet(rng, self.phi[i] / P_k + counts)
            out = np.exp(self.log_vk[i])
        self._refresh()
        return out

    def alpha_loglik(self, i: int, alpha=None) -> np.ndarray:
        """log D(u | alpha/(t-1)) as a function of alpha_k, other alphas fixed."""
        grid = self.alpha_grids[i]
        a = grid.alpha if alpha is None else np.asarray(alpha, dtype=float)
        d = self.divisor
        rest = (self.alpha.sum() - self.alpha[i]) / d
        return gammaln(rest + a / d) - gammaln(a / d) + a / d * self.log_u[i]

    def update_concentrations(self, rng) -> None:
        if self.has_current:
            self.eta = self.eta_grid.sample(
                rng, symmetric_dirichlet_loglik(self.eta_grid.alpha, self.log_vt))
        for i, grid in enumerate(self.phi_grids):
            self.phi[i] = grid.sample(rng, symmetric_dirichlet_loglik(grid.alpha, self.log_vk[i]))
        for i, grid in enumerate(self.alpha_grids):
            self.alpha[i] = grid.sample(rng, self.alpha_loglik(i))

    def update(self, counts: SplitCounts, rng) -> None:
        m = counts.per_column
        if self.has_current:
            self.update_v("current", m[self.current], rng)
        for k, cols in zip(self.groups, self.group_cols):
            self.update_v(k, m[cols], rng)
        if self.has_past:
            self.update_u(counts.per_group, rng)
        self.update_w(counts.n_current, counts.n_past, rng)
        self.update_concentrations(rng)

    def sample_prior(self, rng) -> None:
        if self.has_current:
            self.eta = self.eta_grid.sample(rng)
            self.log_vt = log_dirichlet(rng, np.full(len(self.current), self.eta / len(self.current)))
        for i, grid in enumerate(self.phi_grids):
            self.phi[i] = grid.sample(rng)
            P_k = len(self.group_cols[i])
            self.log_vk[i] = log_dirichlet(rng, np.full(P_k, self.phi[i] / P_k))
        for i, grid in enumerate(self.alpha_grids):
            self.alpha[i] = grid.sample(rng)
        if self.has_past:
            self.log_u = log_dirichlet(rng, self.alpha / self.divisor)
        self.update_w(0, 0, rng)
        self._refresh()

    def snapshot(self) -> dict:
        return {
            "w": self.w,
            "u": self.u,
            "eta": self.eta,
            "phi": self.phi.copy(),
            "alpha": self.alpha.copy(),
            "v_t": self.v_t,
        }

    def get_state(self) -> dict:
        return {
            "kind": self.kind,
            "log_w": list(self.log_w),
            "eta": self.eta,
            "phi": self.phi.tolist(),
            "alpha": self.alpha.tolist(),
            "log_vt": self.log_vt.tolist(),
            "log_u": self.log_u.tolist(),
            "log_vk": [v.tolist() for v in self.log_vk],
        }

    def set_state(self, state: dict) -> None:
        self.log_w = tuple(float(x) for x in state["log_w"])
        self.eta = state["eta"]
        self.phi = np.array(state["phi"], dtype=float)
        self.alpha = np.array(state["alpha"], dtype=float)
        self.log_vt = np.array(state["log_vt"], dtype=float)
        self.log_u = np.array(state["log_u"], dtype=float)
        self.log_vk = [np.array(v, dtype=float) for v in state["log_vk"]]
        self._refresh()


def make_selector(kind: str, meta: GroupingMeta, *, dart_a=0.5, dart_b=1.0, dart_rho=None,
                  w_a=1.0, w_b=1.0, grid_size=1000):
    if kind == "uniform":
        return UniformSelector(meta.P)
    if kind == "dart":
        return DirichletSelector(meta.P, dart_a, dart_b, dart_rho, grid_size)
    if kind == "ldirichlet":
        return LDirichletSelector(meta, w_a, w_b, grid_size)
    raise ValueError(f"unknown selector {kind!r}")
