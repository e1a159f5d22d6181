"""Retained posterior draws and their record-per-line JSON file format.

A draws file holds one JSON object per line:

* ``{"type": "header", ...}`` first: data dimensions, column names and
  time groups, outcome type, the chain config and its digest, the response
  scaling, the predictor transform and the probit offset;
* ``{"type": "draw", "chain": c, "sigma2": ..., "pred": [...], "counts": [...],
  "selector": {...}}`` per retained iteration, with optional ``bandwidth``,
  ``trees`` (serialized trees) and ``pred_new`` entries;
* ``{"type": "chain", "chain": c, "accept": {...}}`` per chain, with MH
  acceptance rates.

Predictions are on the response scale for continuous outcomes and on the
latent probit scale for binary ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .io import atomic_write_text
from .trees import dumps_tree


@dataclass
class PosteriorDraws:
    header: dict
    chain: np.ndarray
    predictions: np.ndarray
    sigma2: np.ndarray
    split_counts: np.ndarray
    selector: dict = field(default_factory=dict)
    bandwidth: np.ndarray | None = None
    trees: list | None = None
    new_predictions: np.ndarray | None = None
    accept: dict = field(default_factory=dict)

    def __post_init__(self):
        D = len(self.chain)
        shapes = [len(self.predictions), len(self.sigma2), len(self.split_counts)]
        shapes += [len(v) for v in self.selector.values()]
        if self.bandwidth is not None:
            shapes.append(len(self.bandwidth))
        if self.trees is not None:
            shapes.append(len(self.trees))
        if any(s != D for s in shapes):
            raise ValueError("draw records have inconsistent lengths")

    @property
    def n_draws(self) -> int:
        return len(self.chain)

    @property
    def selector_kind(self) -> str:
        return self.header["config"]["selector"]

    @classmethod
    def concat(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]

        def stack(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals)

        header = dict(first.header)
        header["chains"] = sorted({int(c) for p in parts for c in np.unique(p.chain)})
        accept = {}
        for p in parts:
            accept.update(p.accept)
        return cls(
            header=header,
            chain=stack("chain"),
            predictions=stack("predictions"),
            sigma2=stack("sigma2"),
            split_counts=stack("split_counts"),
            selector={k: np.concatenate([p.selector[k] for p in parts]) for k in first.selector},
            bandwidth=stack("bandwidth"),
            trees=None if first.trees is None else [t for p in parts for t in p.trees],
            new_predictions=stack("new_predictions"),
            accept=accept,
        )

    # ---------------------------------------------------------------- IO
    def dumps(self) -> str:
        lines = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        for i in range(self.n_draws):
            rec = {
                "type": "draw",
                "chain": int(self.chain[i]),
                "sigma2": float(self.sigma2[i]),
                "pred": self.predictions[i].tolist(),
                "counts": self.split_counts[i].tolist(),
                "selector": {k: np.asarray(v[i]).tolist() for k, v in self.selector.items()},
            }
            if self.bandwidth is not None:
                rec["bandwidth"] = self.bandwidth[i].tolist()
            if self.trees is not None:
                rec["trees"] = list(self.trees[i])
            if self.new_predictions is not None:
                rec["pred_new"] = self.new_predictions[i].tolist()
            lines.append(json.dumps(rec, sort_keys=True))
        for c in sorted(self.accept):
            lines.append(json.dumps({"type": "chain", "chain": int(c),
                                     "accept": self.accept[c]}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def loads(cls, text: str) -> "PosteriorDraws":
        header = None
        draws, accept = [], {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type", None)
            if kind == "header":
                header = rec
            elif kind == "draw":
                draws.append(rec)
            elif kind == "chain":
                accept[int(rec["chain"])] = rec["accept"]
            else:
                raise ValueError(f"line {lineno}: unknown record type {kind!r}")
        if header is None:
            raise ValueError("draws file has no header record")
        if not draws:
            raise ValueError("draws file has no draw records")
        sel_keys = draws[0]["selector"].keys()
        opt = lambda key: (np.array([d[key] for d in draws]) if key in draws[0] else None)
        return cls(
            header=header,
            chain=np.array([d["chain"] for d in draws], dtype=int),
            predictions=np.array([d["pred"] for d in draws], dtype=float),
            sigma2=np.array([d["sigma2"] for d in draws], dtype=float),
            split_counts=np.array([d["counts"] for d in draws], dtype=int),
            selector={k: np.array([d["selector"][k] for d in draws], dtype=float)
                      for k in sel_keys},
            bandwidth=opt("bandwidth"),
            trees=[d["trees"] for d in draws] if "trees" in draws[0] else None,
            new_predictions=opt("pred_new"),
            accept=accept,
        )

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        with open(path) as fh:
            return cls.loads(fh.read())


class DrawRecorder:
    """Collects per-iteration records of one chain."""

    def __init__(self, model, config, chain: int, U_new=None):
        self.model = model
        self.config = config
        self.chain = chain
        self.U_new = U_new
        self.rows = []

    def _response_scale(self, f):
        m = self.model
        f = m.offset + f
        return m.scaling.inverse(f) if m.scaling is not None else f

    def record(self, state) -> None:
        from .selectors import tally_splits

        m = self.model
        row = {
            "pred": self._response_scale(state.total_fit()),
            "sigma2": (float(m.scaling.inverse_variance(state.sigma2))
                       if m.scaling is not None else float(state.sigma2)),
            "counts": tally_splits(state.trees, m.meta).per_column,
            "selector": {k: np.asarray(v, dtype=float).copy()
                         for k, v in state.selector.snapshot().items()
                         if v is not None},
        }
        if m.soft:
            row["bandwidth"] = np.array([t.tau for t in state.trees])
        if self.config.save_trees:
            row["trees"] = [dumps_tree(t) for t in state.trees]
        if self.U_new is not None:
            from .trees import predict_tree

            f = sum(predict_tree(t, self.U_new) for t in state.trees)
            row["pred_new"] = self._response_scale(f)
        self.rows.append(row)

    def header(self) -> dict:
        m, cfg = self.model, self.config
        sel = None
        if cfg.selector == "ldirichlet":
            sel = {"groups": [k for k in range(1, m.meta.t) if np.any(m.meta.time == k)]}
        return {
            "n": int(m.n),
            "P": int(m.meta.P),
            "outcome": m.outcome,
            "names": list(m.names),
            "t": int(m.meta.t),
            "time": m.meta.time.tolist(),
            "config": asdict(cfg),
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "chains": [self.chain],
            "scaling": None if m.scaling is None else [m.scaling.lo, m.scaling.hi],
            "transform": m.transform.to_dict() if m.transform is not None else None,
            "offset": m.offset,
            "selector_info": sel,
        }

    def finish(self, state) -> PosteriorDraws:
        rows = self.rows
        if not rows:
            raise ValueError("no draws were recorded")
        opt = lambda key: np.array([r[key] for r in rows]) if key in rows[0] else None
        acc = {k: (state.accepted[k] / state.proposed[k] if state.proposed[k] else None)
               for k in state.proposed}
        return PosteriorDraws(
            header=self.header(),
            chain=np.full(len(rows), self.chain, dtype=int),
            predictions=np.array([r["pred"] for r in rows]),
            sigma2=np.array([r["sigma2"] for r in rows]),
            split_counts=np.array([r["counts"] for r in rows], dtype=int),
            selector={k: np.array([r["selector"][k] for r in rows]) for k in rows[0]["selector"]},
            bandwidth=opt("bandwidth"),
            trees=[r["trees"] for r in rows] if "trees" in rows[0] else None,
            new_predictions=opt("pred_new"),
            accept={self.chain: acc},
        )
