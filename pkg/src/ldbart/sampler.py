"""MCMC for sum-of-trees models: backfitting, variance, probit and bandwidth updates.

One iteration updates, in this fixed order, every tree (MH structure move
with leaf values integrated out, then a leaf-value draw), the noise
variance (or the probit latents), the per-tree bandwidths (soft trees),
and finally the split selector.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2, truncnorm

from .data import ColumnTransform, Dataset, GroupingMeta, ScalingRecord, standardize
from .selectors import make_selector, tally_splits
from .trees import (
    Tree,
    TreePrior,
    draw_leaves_hard,
    draw_leaves_soft,
    hard_stats,
    leaf_index,
    leaf_weights,
    log_marginal_likelihood,
    log_marginal_likelihood_hard,
    predict_tree,
    propose_move,
)


class ConfigError(ValueError):
    """Raised for invalid or inconsistent chain configuration."""


@dataclass
class ChainConfig:
    """Settings of one MCMC run.

    ``sigma_mu`` and ``sigma2_scale`` override the data-calibrated leaf
    prior scale and the inverse-chi-square scale of the noise variance.
    The bandwidth prior is Exponential with mean ``bandwidth_mean`` on the
    empirical-CDF scale of the predictors.
    """

    n_trees: int = 50
    burn: int = 200
    draws: int = 1000
    thin: int = 1
    seed: int = 0
    gamma: float = 0.95
    beta: float = 2.0
    max_depth: int | None = None
    kappa: float = 2.0
    nu: float = 3.0
    q: float = 0.90
    soft: bool = False
    bandwidth_mean: float = 0.1
    bandwidth_step: float = 0.3
    selector: str = "uniform"
    dart_a: float = 0.5
    dart_b: float = 1.0
    dart_rho: float | None = None
    w_a: float = 1.0
    w_b: float = 1.0
    grid_size: int = 1000
    n_cuts: int = 100
    save_trees: bool = False
    sigma_mu: float | None = None
    sigma2_scale: float | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.burn < 0:
            raise ConfigError("burn must be >= 0")
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.selector not in ("uniform", "dart", "ldirichlet"):
            raise ConfigError(f"unknown selector {self.selector!r}")
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1)")
        for name in ("kappa", "nu", "bandwidth_mean", "bandwidth_step", "dart_a", "dart_b",
                     "w_a", "w_b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.grid_size < 2 or self.n_cuts < 1:
            raise ConfigError("grid_size must be >= 2 and n_cuts >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Model:
    """Fixed ingredients of a chain: training design, priors, scaling."""

    X: np.ndarray  # predictors on the empirical-CDF scale
    y: np.ndarray  # standardized continuous response, or 0/1
    outcome: str
    meta: GroupingMeta
    grid: list
    prior: TreePrior
    sigma_mu2: float
    nu: float
    lam: float
    offset: float = 0.0
    soft: bool = False
    bandwidth_mean: float = 0.1
    bandwidth_step: float = 0.3
    transform: ColumnTransform | None = None
    scaling: ScalingRecord | None = None
    names: tuple = ()

    @property
    def n(self) -> int:
        return self.X.shape[0]


def sigma2_prior_scale(X, y, nu: float, q: float) -> float:
    """Scale ``lam`` with P(sigma^2 < sigmahat^2) = q under sigma^2 ~ nu lam / chi2_nu.

    ``sigmahat`` is the OLS residual standard deviation when n > P + 1,
    otherwise the standard deviation of y.
    """
    n, P = X.shape
    if n > P + 1:
        A = np.column_stack([np.ones(n), X])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        s2 = resid @ resid / (n - P - 1)
    else:
        s2 = np.var(y, ddof=1)
    s2 = max(s2, 1e-12)
    return float(s2 * chi2.ppf(1.0 - q, nu) / nu)


def build_model(ds: Dataset, meta: GroupingMeta, config: ChainConfig) -> Model:
    if meta.P != ds.P:
        raise ConfigError(f"meta has {meta.P} columns, data has {ds.P}")
    transform = ColumnTransform.fit(ds.X)
    X = transform.transform(ds.X)
    T = config.n_trees
    if ds.outcome == "continuous":
        ds_std, scaling = standardize(ds)
        y = ds_std.y
        sigma_mu = config.sigma_mu or 0.5 / (config.kappa * math.sqrt(T))
        lam = config.sigma2_scale or sigma2_prior_scale(X, y, config.nu, config.q)
        offset = 0.0
    else:
        y, scaling = ds.y, None
        sigma_mu = config.sigma_mu or 3.0 / (config.kappa * math.sqrt(T))
        lam = 1.0
        ybar = np.clip(y.mean(), 1.0 / (2 * ds.n), 1 - 1.0 / (2 * ds.n))
        offset = float(ndtri(ybar))
    return Model(
        X=X, y=y, outcome=ds.outcome, meta=meta, grid=transform.cutpoints(config.n_cuts),
        prior=TreePrior(config.gamma, config.beta, config.max_depth),
        sigma_mu2=sigma_mu ** 2, nu=config.nu, lam=lam, offset=offset, soft=config.soft,
        bandwidth_mean=config.bandwidth_mean, bandwidth_step=config.bandwidth_step,
        transform=transform, scaling=scaling, names=ds.names,
    )


@dataclass
class SamplerState:
    model: Model
    trees: list
    fits: np.ndarray  # (T, n) per-tree in-sample predictions
    sigma2: float
    selector: object
    rng: np.random.Generator
    z: np.ndarray | None = None
    iteration: int = 0
    accepted: dict = field(default_factory=lambda: {"grow": 0, "prune": 0, "change": 0,
                                                    "bandwidth": 0})
    proposed: dict = field(default_factory=lambda: {"grow": 0, "prune": 0, "change": 0,
                                                    "bandwidth": 0})
    debug: bool = False
    skip_leaf_update: bool = False  # deliberately broken sampler, for harness mutation tests

    @property
    def target(self) -> np.ndarray:
        base = self.z if self.model.outcome == "binary" else self.model.y
        return base - self.model.offset

    def total_fit(self) -> np.ndarray:
        return self.fits.sum(axis=0)

    def check_cache(self, tol: float = 1e-10) -> None:
        for t, tree in enumerate(self.trees):
            fresh = predict_tree(tree, self.model.X)
            if np.max(np.abs(fresh - self.fits[t]), initial=0.0) > tol:
                raise AssertionError(f"fit cache of tree {t} is stale")


def init_state(model: Model, config: ChainConfig, rng, selector=None) -> SamplerState:
    T = config.n_trees
    tau = model.bandwidth_mean if model.soft else None
    trees = [Tree.stump(0.0, tau) for _ in range(T)]
    if selector is None:
        selector = make_selector(config.selector, model.meta, dart_a=config.dart_a,
                                 dart_b=config.dart_b, dart_rho=config.dart_rho,
                                 w_a=config.w_a, w_b=config.w_b, grid_size=config.grid_size)
    state = SamplerState(model, trees, np.zeros((T, model.n)), 1.0, selector, rng)
    if model.outcome == "continuous":
        state.sigma2 = model.lam * model.nu / max(model.nu - 2.0, 1.0)
    else:
        state.z = np.zeros(model.n)
        state.z = probit_augment(state, rng)
    return state


# ------------------------------------------------------------------- trees

def _loglik(state: SamplerState, tree: Tree, r):
    """Collapsed likelihood of one tree plus the routing needed to redraw leaves."""
    m = state.model
    if tree.soft:
        W = leaf_weights(tree, m.X)
        return log_marginal_likelihood(W, r, state.sigma2, m.sigma_mu2), W
    idx = leaf_index(tree, m.X)
    counts, sums = hard_stats(idx, r, tree.n_leaves)
    ll = log_marginal_likelihood_hard(counts, sums, r @ r, len(r), state.sigma2, m.sigma_mu2)
    return ll, (idx, counts, sums)


def _redraw_leaves(state: SamplerState, tree: Tree, routing, r) -> np.ndarray:
    """Draw new leaf values in place and return the tree's in-sample fit."""
    m = state.model
    if tree.soft:
        W = routing
        if not state.skip_leaf_update:
            tree.set_values(draw_leaves_soft(W, r, state.sigma2, m.sigma_mu2, state.rng))
        return W @ tree.values()
    idx, counts, sums = routing
    if not state.skip_leaf_update:
        tree.set_values(draw_leaves_hard(counts, sums, state.sigma2, m.sigma_mu2, state.rng))
    return tree.values()[idx]


def update_tree(state: SamplerState, t: int, r: np.ndarray) -> bool:
    """One MH structure move on tree ``t`` followed by a leaf redraw."""
    rng = state.rng
    tree = state.trees[t]
    move = propose_move(tree, state.selector, state.model.grid, state.model.prior, rng)
    ll_old, routing_old = _loglik(state, tree, r)
    ll_new, routing_new = _loglik(state, move.tree, r)
    log_ratio = ll_new - ll_old + move.log_prior_ratio + move.log_proposal_ratio
    state.proposed[move.kind] += 1
    accept = math.log1p(-rng.random()) < log_ratio
    if accept:
        state.accepted[move.kind] += 1
        tree, routing = move.tree, routing_new
        state.trees[t] = tree
    else:
        routing = routing_old
    state.fits[t] = _redraw_leaves(state, tree, routing, r)
    return accept


# ----------------------------------------------------------------- globals

def sample_sigma2(state: SamplerState, rng) -> float:
    """Draw sigma^2 | residuals ~ (nu lam + SSR) / chi2_{nu + n}."""
    m = state.model
    resid = state.target - state.total_fit()
    ssr = float(resid @ resid)
    return (m.nu * m.lam + ssr) / rng.chisquare(m.nu + len(resid))


def probit_augment(state: SamplerState, rng) -> np.ndarray:
    """Latent z_i ~ N(f_i, 1) truncated to the side given by y_i."""
    m = state.model
    mean = m.offset + state.total_fit()
    lower = np.where(m.y == 1, -mean, -np.inf)
    upper = np.where(m.y == 1, np.inf, -mean)
    return mean + truncnorm.rvs(lower, upper, random_state=rng)


def _bandwidth_log_target(state, t, tau, r):
    tree = state.trees[t].copy()
    tree.tau = tau
    W = leaf_weights(tree, state.model.X)
    ll = log_marginal_likelihood(W, r, state.sigma2, state.model.sigma_mu2)
    # Exponential prior on tau plus the log-scale Jacobian
    return ll - tau / state.model.bandwidth_mean + math.log(tau), W


def bandwidth_accept_prob(state: SamplerState, t: int, tau_new: float) -> float:
    r = state.target - state.total_fit() + state.fits[t]
    old, _ = _bandwidth_log_target(state, t, state.trees[t].tau, r)
    new, _ = _bandwidth_log_target(state, t, tau_new, r)
    return float(min(1.0, math.exp(min(0.0, new - old))))


def sample_bandwidth(state: SamplerState, t: int, rng, r=None) -> float:
    """Random-walk MH on log tau for tree ``t``, then redraw its leaf values.

    The MH step targets tau given the partial residual with leaf values
    integrated out; the leaf redraw completes a valid joint update.
    """
    tree = state.trees[t]
    if r is None:
        r = state.target - state.total_fit() + state.fits[t]
    tau = tree.tau
    tau_new = tau * math.exp(state.model.bandwidth_step * rng.standard_normal())
    old, W_old = _bandwidth_log_target(state, t, tau, r)
    new, W_new = _bandwidth_log_target(state, t, tau_new, r)
    state.proposed["bandwidth"] += 1
    if math.log1p(-rng.random()) < new - old:
        state.accepted["bandwidth"] += 1
        tree.tau, W = tau_new, W_new
    else:
        W = W_old
    state.fits[t] = _redraw_leaves(state, tree, W, r)
    return tree.tau


def backfit_iteration(state: SamplerState) -> SamplerState:
    rng = state.rng
    m = state.model
    target = state.target
    total = state.total_fit()
    for t in range(len(state.trees)):
        old = state.fits[t].copy()
        update_tree(state, t, target - total + old)
        total += state.fits[t] - old

    if m.outcome == "continuous":
        state.sigma2 = sample_sigma2(state, rng)
    else:
        state.z = probit_augment(state, rng)

    if m.soft:
        target = state.target
        total = state.total_fit()
        for t in range(len(state.trees)):
            old = state.fits[t].copy()
            sample_bandwidth(state, t, rng, target - total + old)
            total += state.fits[t] - old

    state.selector.update(tally_splits(state.trees, m.meta), rng)
    state.iteration += 1
    if state.debug and state.iteration % 100 == 0:
        state.check_cache()
    return state


# ------------------------------------------------------------ prior draws

def sample_prior_state(state: SamplerState) -> SamplerState:
    """Replace every parameter of ``state`` by a draw from its prior."""
    m = state.model
    rng = state.rng
    state.selector.sample_prior(rng)
    if m.outcome == "continuous":
        state.sigma2 = m.nu * m.lam / rng.chisquare(m.nu)
    for t in range(len(state.trees)):
        tau = rng.exponential(m.bandwidth_mean) if m.soft else None
        tree = m.prior.sample(state.selector, m.grid, rng, m.sigma_mu2, tau)
        state.trees[t] = tree
        state.fits[t] = predict_tree(tree, m.X)
    return state


def sample_data(state: SamplerState, rng) -> np.ndarray:
    """Draw a continuous response from the likelihood at the current parameters."""
    m = state.model
    f = m.offset + state.total_fit()
    return f + math.sqrt(state.sigma2) * rng.standard_normal(m.n)


# ------------------------------------------------------------ checkpoints

def state_to_dict(state: SamplerState) -> dict:
    from .trees import dumps_tree

    return {
        "iteration": state.iteration,
        "sigma2": state.sigma2,
        "z": None if state.z is None else state.z.tolist(),
        "trees": [dumps_tree(t) for t in state.trees],
        "selector": state.selector.get_state(),
        "rng": state.rng.bit_generator.state,
        "accepted": dict(state.accepted),
        "proposed": dict(state.proposed),
    }


def state_from_dict(model: Model, config: ChainConfig, d: dict) -> SamplerState:
    from .trees import loads_tree

    rng = np.random.default_rng()
    rng.bit_generator.state = d["rng"]
    state = init_state(model, config, np.random.default_rng(0))
    state.rng = rng
    state.trees = [loads_tree(s) for s in d["trees"]]
    state.fits = np.array([predict_tree(t, model.X) for t in state.trees])
    state.sigma2 = float(d["sigma2"])
    state.z = None if d["z"] is None else np.array(d["z"])
    state.selector.set_state(d["selector"])
    state.iteration = int(d["iteration"])
    state.accepted = dict(d["accepted"])
    state.proposed = dict(d["proposed"])
    return state


def save_checkpoint(state: SamplerState, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(state_to_dict(state), sort_keys=True))


def load_checkpoint(model: Model, config: ChainConfig, path) -> SamplerState:
    with open(path) as fh:
        return state_from_dict(model, config, json.load(fh))


# ---------------------------------------------------------------- driver

def chain_rng(seed: int, chain: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))


def run_chain(ds: Dataset, meta: GroupingMeta, config: ChainConfig, *, chain: int = 0,
              X_new=None, state: SamplerState | None = None, progress: bool = False):
    """Run burn-in plus ``draws`` retained iterations and collect the draws.

    Passing ``state`` (e.g. from :func:`load_checkpoint`) resumes that chain;
    iterations already done count towards burn-in and draws.
    """
    from .draws import DrawRecorder

    model = build_model(ds, meta, config)
    if state is None:
        state = init_state(model, config, chain_rng(config.seed, chain))
    U_new = None if X_new is None else model.transform.transform(X_new)
    recorder = DrawRecorder(model, config, chain, U_new)
    total = config.burn + config.draws * config.thin
    while state.iteration < total:
        backfit_iteration(state)
        k = state.iteration - config.burn
        if k > 0 and k % config.thin == 0:
            recorder.record(state)
        if progress and state.iteration % 100 == 0:
            print(f"chain {chain}: iteration {state.iteration}/{total}", file=sys.stderr)
    return recorder.finish(state)
