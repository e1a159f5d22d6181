"""YAML run configuration for the command line.

Top-level keys and sections (every key optional except ``data`` and ``meta``)::

    data: train.csv          # CSV with header
    meta: train.meta         # grouping/response metadata
    out: fit_out             # output directory
    chains: 1
    seed: 0
    selector: dart           # uniform | dart | ldirichlet
    grid_size: 1000          # grid points for concentration updates
    chain:   {n_trees, burn, draws, thin, soft, bandwidth_mean, bandwidth_step,
              kappa, nu, q, n_cuts, save_trees, sigma_mu, sigma2_scale}
    tree_prior: {gamma, beta, max_depth}
    dart: {a, b, rho}
    ldirichlet: {w_a, w_b}

Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .sampler import ChainConfig, ConfigError

_TOP = {"data", "meta", "out", "chains", "seed", "selector", "grid_size",
        "chain", "tree_prior", "dart", "ldirichlet"}
_CHAIN = {"n_trees", "burn", "draws", "thin", "soft", "bandwidth_mean", "bandwidth_step",
          "kappa", "nu", "q", "n_cuts", "save_trees", "sigma_mu", "sigma2_scale"}
_SECTIONS = {
    "chain": {k: k for k in _CHAIN},
    "tree_prior": {"gamma": "gamma", "beta": "beta", "max_depth": "max_depth"},
    "dart": {"a": "dart_a", "b": "dart_b", "rho": "dart_rho"},
    "ldirichlet": {"w_a": "w_a", "w_b": "w_b"},
}


@dataclass
class RunConfig:
    data: Path
    meta: Path
    out: Path
    chains: int
    chain: ChainConfig


def parse_run_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("data", "meta"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")
    flat = {}
    for top in ("seed", "selector", "grid_size"):
        if top in raw:
            flat[top] = raw[top]
    for section, mapping in _SECTIONS.items():
        body = raw.get(section) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        bad = sorted(set(body) - set(mapping))
        if bad:
            raise ConfigError(f"unknown config key(s): {', '.join(f'{section}.{b}' for b in bad)}")
        for key, value in body.items():
            flat[mapping[key]] = value
    try:
        chain = ChainConfig.from_dict(flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    chains = int(raw.get("chains", 1))
    if chains < 1:
        raise ConfigError("chains must be >= 1")
    resolve = lambda p: Path(p) if Path(p).is_absolute() else base / p
    return RunConfig(resolve(raw["data"]), resolve(raw["meta"]),
                     resolve(raw.get("out", "fit_out")), chains, chain)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_run_config(raw, path.parent)
