"""Fit and predict entry points plus posterior summaries."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .data import ColumnTransform, DataError, Dataset, GroupingMeta, ScalingRecord
from .draws import PosteriorDraws
from .sampler import ChainConfig, run_chain
from .trees import loads_trees, predict_tree


def _run_one(args):
    ds, meta, config, chain, X_new, progress = args
    return run_chain(ds, meta, config, chain=chain, X_new=X_new, progress=progress)


def fit(ds: Dataset, meta: GroupingMeta | None, config: ChainConfig, *, chains: int = 1,
        X_new=None, parallel: bool = False, progress: bool = False) -> PosteriorDraws:
    """Run ``chains`` independent chains and concatenate their draws.

    Chain ``c`` draws its random numbers from ``SeedSequence(seed, spawn_key=(c,))``,
    so results do not depend on ``parallel``.
    """
    if meta is None:
        meta = GroupingMeta.all_current(ds.P)
    if config.selector == "ldirichlet" and meta.P != ds.P:
        raise DataError("grouping metadata does not match the data")
    jobs = [(ds, meta, config, c, X_new, progress) for c in range(chains)]
    if parallel and chains > 1:
        with ProcessPoolExecutor(max_workers=chains) as pool:
            parts = list(pool.map(_run_one, jobs))
    else:
        parts = [_run_one(j) for j in jobs]
    return PosteriorDraws.concat(parts)


@dataclass
class Prediction:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray  # (D, m) per-draw values on the reported scale


def summarize(values, level: float = 0.90) -> Prediction:
    values = np.asarray(values, dtype=float)
    tail = round((1 - level) / 2, 12)  # 0.05 rather than 0.04999... for level 0.9
    lo, hi = np.quantile(values, [tail, 1 - tail], axis=0)
    return Prediction(values.mean(axis=0), lo, hi, values)


def _to_reported(draws: PosteriorDraws, f):
    return ndtr(f) if draws.header["outcome"] == "binary" else f


def posterior_draws_new(draws: PosteriorDraws, X_new) -> np.ndarray:
    """Per-draw mean function at new rows, on the response (or latent) scale."""
    if draws.trees is None:
        raise ValueError("draws carry no trees; refit with save_trees enabled")
    h = draws.header
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != h["P"]:
        raise DataError(f"expected {h['P']} columns, got {X_new.shape[1]}")
    U = ColumnTransform.from_dict(h["transform"]).transform(X_new)
    out = np.empty((draws.n_draws, len(U)))
    for i, serialized in enumerate(draws.trees):
        trees = loads_trees("\n".join(serialized))
        out[i] = h["offset"] + sum(predict_tree(t, U) for t in trees)
    if h["scaling"] is not None:
        out = ScalingRecord(*h["scaling"]).inverse(out)
    return out


def predict(draws: PosteriorDraws, X_new=None, level: float = 0.90) -> Prediction:
    """Posterior mean and central interval; in-sample when ``X_new`` is None.

    Binary outcomes are reported as probabilities Phi(f) per draw before
    summarizing.
    """
    f = draws.predictions if X_new is None else posterior_draws_new(draws, X_new)
    return summarize(_to_reported(draws, f), level)


def inclusion_probabilities(draws: PosteriorDraws) -> np.ndarray:
    """Fraction of retained draws in which each column is used by some split."""
    return (np.asarray(draws.split_counts) > 0).mean(axis=0)


@dataclass
class GroupMass:
    labels: list
    shares: np.ndarray  # (D, G): w, then (1 - w) u_k per retained past time
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def group_mass(draws: PosteriorDraws, level: float = 0.90) -> GroupMass:
    if draws.selector_kind != "ldirichlet":
        raise ValueError(f"group_mass needs an ldirichlet fit, got {draws.selector_kind!r}")
    w = draws.selector["w"]
    u = draws.selector["u"].reshape(len(w), -1)
    groups = draws.header["selector_info"]["groups"]
    shares = np.column_stack([w, (1.0 - w)[:, None] * u])
    s = summarize(shares, level)
    labels = ["current"] + [f"past({k})" for k in groups]
    return GroupMass(labels, shares, s.mean, s.lower, s.upper)


def with_seed(config: ChainConfig, seed: int) -> ChainConfig:
    return replace(config, seed=seed)
