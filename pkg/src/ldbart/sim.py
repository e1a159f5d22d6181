"""Synthetic scenarios and sampler-correctness harnesses."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ColumnTransform, DataError, Dataset, GroupingMeta
from .io import atomic_write_text
from .sampler import (
    ChainConfig,
    Model,
    backfit_iteration,
    init_state,
    sample_data,
    sample_prior_state,
)
from .trees import TreePrior


@dataclass
class Truth:
    name: str
    active: list  # active column indices
    sigma: float
    signal: list  # noiseless mean function (or latent score) at each row
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Truth":
        return cls(**json.loads(text))


def friedman(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return (10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2
            + 10 * X[:, 3] + 5 * X[:, 4])


def gen_friedman(n: int, P: int, sigma: float, seed: int):
    if P < 5:
        raise ValueError("the Friedman function needs P >= 5")
    rng = np.random.default_rng(seed)
    X = rng.random((n, P))
    f = friedman(X)
    y = f + sigma * rng.standard_normal(n)
    truth = Truth("friedman", [0, 1, 2, 3, 4], float(sigma), f.tolist(), {"n": n, "P": P})
    return Dataset(X, y), truth


def longitudinal_names(t: int, sizes) -> list[str]:
    """Column names ``t{k}_x{j}``; past times first, current time last."""
    return [f"t{k}_x{j + 1}" for k in range(1, t + 1) for j in range(sizes[k - 1])]


def gen_longitudinal(n: int, t: int, group_size, active: dict, sigma: float, seed: int,
                     nonlinear: float = 0.0):
    """Predictors U(0,1) in time groups 1..t (t = current) and an additive response.

    ``group_size`` is one size for every group or a list of t sizes (index
    k-1 for time k).  ``active`` maps ``(time, column-within-group)`` to a
    linear coefficient.  ``nonlinear`` scales ``sin(pi x_a x_b)`` on the
    first two current columns.
    """
    sizes = [int(group_size)] * t if np.isscalar(group_size) else [int(s) for s in group_size]
    if len(sizes) != t or any(s < 0 for s in sizes):
        raise DataError("group_size must give t non-negative sizes")
    starts = np.concatenate([[0], np.cumsum(sizes)])
    P = int(starts[-1])
    rng = np.random.default_rng(seed)
    X = rng.random((n, P))
    f = np.zeros(n)
    cols = []
    for (k, j), coef in sorted(active.items()):
        if not (1 <= k <= t and 0 <= j < sizes[k - 1]):
            raise DataError(f"active column ({k}, {j}) lies outside the declared groups")
        c = int(starts[k - 1] + j)
        f += coef * X[:, c]
        cols.append(c)
    if nonlinear:
        if sizes[t - 1] < 2:
            raise DataError("nonlinear term needs two current columns")
        a, b = int(starts[t - 1]), int(starts[t - 1] + 1)
        f += nonlinear * np.sin(np.pi * X[:, a] * X[:, b])
        cols += [a, b]
    y = f + sigma * rng.standard_normal(n)
    time = np.repeat(np.arange(1, t + 1), sizes)
    ds = Dataset(X, y, tuple(longitudinal_names(t, sizes)))
    truth = Truth("longitudinal", sorted(set(cols)), float(sigma), f.tolist(),
                  {"t": t, "sizes": sizes, "nonlinear": nonlinear,
                   "active": [[k, j, c] for (k, j), c in sorted(active.items())]})
    return ds, GroupingMeta(t, time), truth


def gen_probit_separable(n: int, P: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.random((n, P))
    score = X[:, 0] + X[:, 1] - 1.0
    y = (score > 0).astype(float)
    truth = Truth("probit_separable", [0, 1], 0.0, score.tolist(), {"n": n, "P": P})
    return Dataset(X, y, outcome="binary"), truth


def _longitudinal_current(seed):
    return gen_longitudinal(500, 4, 5, {(4, 2): 5.0, (4, 3): 3.0}, 1.0, seed, nonlinear=10.0)


def _longitudinal_past3(seed):
    return gen_longitudinal(500, 4, 5, {(3, 0): 5.0, (3, 1): 5.0, (3, 2): 3.0}, 1.0, seed)


def _with_flat_meta(gen):
    def wrapped(seed):
        ds, truth = gen(seed)
        return ds, GroupingMeta.all_current(ds.P), truth
    return wrapped


SCENARIOS = {
    "toy": _with_flat_meta(lambda s: gen_friedman(50, 6, 1.0, s)),
    "friedman": _with_flat_meta(lambda s: gen_friedman(500, 10, 1.0, s)),
    "friedman_sparse": _with_flat_meta(lambda s: gen_friedman(500, 50, 1.0, s)),
    "longitudinal_current": _longitudinal_current,
    "longitudinal_past3": _longitudinal_past3,
    "probit_separable": _with_flat_meta(lambda s: gen_probit_separable(200, 5, s)),
}


def simulate(name: str, seed: int):
    try:
        gen = SCENARIOS[name]
    except KeyError:
        raise DataError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    return gen(seed)


def meta_text(ds: Dataset, meta: GroupingMeta) -> str:
    lines = [f"@time: {meta.t}"]
    lines += [f"{name}: {meta.label(j)}" for j, name in enumerate(ds.names)]
    lines.append(f"{ds.response}: response({ds.outcome})")
    return "\n".join(lines) + "\n"


def csv_text(ds: Dataset) -> str:
    header = ",".join(list(ds.names) + [ds.response])
    rows = [",".join(repr(float(v)) for v in row) for row in np.column_stack([ds.X, ds.y])]
    return "\n".join([header] + rows) + "\n"


def write_scenario(name: str, seed: int, out_dir) -> dict:
    """Write ``data.csv``, ``data.meta`` and ``truth.json`` into ``out_dir``."""
    ds, meta, truth = simulate(name, seed)
    out = Path(out_dir)
    paths = {"data": out / "data.csv", "meta": out / "data.meta", "truth": out / "truth.json"}
    atomic_write_text(paths["data"], csv_text(ds))
    atomic_write_text(paths["meta"], meta_text(ds, meta))
    atomic_write_text(paths["truth"], truth.to_json() + "\n")
    return paths


# ------------------------------------------------------------ diagnostics

def batch_means_se(x, n_batches: int = 25) -> float:
    """Monte Carlo standard error of the mean of a correlated sequence."""
    x = np.asarray(x, dtype=float)
    b = len(x) // n_batches
    if b < 1:
        raise ValueError("too few samples for batch means")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


# ------------------------------------------------------------ Geweke test

def _mean_prediction(state):
    return float(state.total_fit().mean() + state.model.offset)


def _prediction_sq(state):
    return float(np.mean((state.total_fit() + state.model.offset) ** 2))


def _n_leaves(state):
    return float(sum(t.n_leaves for t in state.trees))


def _w(state):
    return float(getattr(state.selector, "w", np.nan))


def _log_bandwidth(state):
    return float(np.mean([math.log(t.tau) for t in state.trees]))


TEST_FUNCTIONS = {
    "mean_prediction": _mean_prediction,
    "prediction_sq": _prediction_sq,
    "sigma2": lambda s: float(s.sigma2),
    "w": _w,
    "n_leaves": _n_leaves,
    "log_bandwidth": _log_bandwidth,
}


@dataclass
class GewekeResult:
    names: list
    z: np.ndarray
    mc_mean: np.ndarray
    sc_mean: np.ndarray
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) < self.threshold))

    def table(self) -> str:
        rows = [f"{'function':<16}{'marginal':>12}{'successive':>12}{'z':>9}"]
        for name, a, b, z in zip(self.names, self.mc_mean, self.sc_mean, self.z):
            rows.append(f"{name:<16}{a:>12.5f}{b:>12.5f}{z:>9.3f}")
        rows.append(f"{'PASS' if self.passed else 'FAIL'} (|z| < {self.threshold})")
        return "\n".join(rows)


def geweke_model(n=20, P=4, t=2, *, soft=False, seed=0, n_cuts=10, sigma_mu=0.5,
                 nu=5.0, lam=0.5, gamma=0.95, beta=2.0):
    """Small fixed design for joint-distribution tests; columns alternate current/past."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, P))
    transform = ColumnTransform.fit(X)
    if t >= 2:
        time = np.array([t if j % 2 == 0 else 1 + (j // 2) % (t - 1) for j in range(P)])
    else:
        time = np.ones(P, dtype=int)
    meta = GroupingMeta(t, time)
    return Model(
        X=transform.transform(X), y=np.zeros(n), outcome="continuous", meta=meta,
        grid=transform.cutpoints(n_cuts), prior=TreePrior(gamma, beta),
        sigma_mu2=sigma_mu ** 2, nu=nu, lam=lam, soft=soft, transform=transform,
    )


def geweke_harness(n=20, P=4, T=3, t=2, *, selector="ldirichlet", soft=False, n_draws=5000,
                   seed=0, test_functions=None, kernel_steps=1, skip_leaf_update=False,
                   threshold=4.0, n_batches=25) -> GewekeResult:
    """Compare marginal-conditional and successive-conditional simulation.

    The marginal arm draws parameters from the prior and data given them.
    The successive arm alternates a data draw with ``kernel_steps`` sampler
    iterations.  Both target the same joint distribution, so every test
    function has the same mean under both when the sampler is correct.
    """
    if test_functions is None:
        test_functions = ["mean_prediction", "prediction_sq", "sigma2", "n_leaves"]
        if selector == "ldirichlet":
            test_functions.append("w")
        if soft:
            test_functions.append("log_bandwidth")
    funcs = [TEST_FUNCTIONS[name] for name in test_functions]

    model = geweke_model(n, P, t, soft=soft, seed=seed)
    config = ChainConfig(n_trees=T, selector=selector, soft=soft, burn=0, draws=1)
    ss = np.random.SeedSequence(seed, spawn_key=(7,))
    rng_mc, rng_sc = (np.random.default_rng(s) for s in ss.spawn(2))

    state = init_state(model, config, rng_mc)
    mc = np.empty((n_draws, len(funcs)))
    for i in range(n_draws):
        sample_prior_state(state)
        model.y = sample_data(state, rng_mc)
        mc[i] = [g(state) for g in funcs]

    state = init_state(model, config, rng_sc)
    state.skip_leaf_update = skip_leaf_update
    sample_prior_state(state)
    sc = np.empty((n_draws, len(funcs)))
    for i in range(n_draws):
        model.y = sample_data(state, rng_sc)
        for _ in range(kernel_steps):
            backfit_iteration(state)
        sc[i] = [g(state) for g in funcs]

    z = np.empty(len(funcs))
    for k in range(len(funcs)):
        se2 = mc[:, k].var(ddof=1) / n_draws + batch_means_se(sc[:, k], n_batches) ** 2
        z[k] = (mc[:, k].mean() - sc[:, k].mean()) / math.sqrt(se2) if se2 > 0 else 0.0
    return GewekeResult(list(test_functions), z, mc.mean(axis=0), sc.mean(axis=0), threshold)
