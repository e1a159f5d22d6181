"""Command line interface: ``ldbart fit | predict | simulate | inspect``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .config import load_run_config
from .data import DataError, load_csv
from .draws import PosteriorDraws
from .io import atomic_write_text
from .model import fit, group_mass, inclusion_probabilities, predict
from .sampler import ConfigError
from .sim import SCENARIOS, write_scenario


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def prediction_rows(pred):
    rows = [["row", "mean", "lower", "upper"]]
    for i, (m, lo, hi) in enumerate(zip(pred.mean, pred.lower, pred.upper)):
        rows.append([i, _fmt(m), _fmt(lo), _fmt(hi)])
    return rows


def inclusion_rows(draws):
    h = draws.header
    names = h["names"] or [f"x{j + 1}" for j in range(h["P"])]
    labels = ["current" if k == h["t"] else f"past({k})" for k in h["time"]]
    pip = inclusion_probabilities(draws)
    return [["column", "group", "inclusion_probability"]] + [
        [n, g, _fmt(p)] for n, g, p in zip(names, labels, pip)
    ]


def group_mass_rows(draws):
    gm = group_mass(draws)
    return [["group", "mean", "lower", "upper"]] + [
        [lab, _fmt(m), _fmt(lo), _fmt(hi)]
        for lab, m, lo, hi in zip(gm.labels, gm.mean, gm.lower, gm.upper)
    ]


def cmd_fit(args) -> int:
    cfg = load_run_config(args.config)
    chain = cfg.chain if args.seed is None else replace(cfg.chain, seed=args.seed)
    chains = cfg.chains if args.chains is None else args.chains
    out = Path(args.out) if args.out else cfg.out
    ds, meta = load_csv(cfg.data, cfg.meta)
    draws = fit(ds, meta, chain, chains=chains, parallel=args.parallel, progress=not args.quiet)
    draws.save(out / "draws.jsonl")
    atomic_write_text(out / "fitted.csv", _csv(prediction_rows(predict(draws))))
    atomic_write_text(out / "inclusion.csv", _csv(inclusion_rows(draws)))
    if chain.selector == "ldirichlet":
        atomic_write_text(out / "group_mass.csv", _csv(group_mass_rows(draws)))
    print(f"wrote {draws.n_draws} draws to {out / 'draws.jsonl'}", file=sys.stderr)
    return 0


def read_predictors(path, names) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = [header.index(n) for n in names]
    try:
        return np.array([[float(r[c]) for c in cols] for r in rows[1:]], dtype=float)
    except (ValueError, IndexError):
        raise DataError(f"{path}: non-numeric or short row") from None


def cmd_predict(args) -> int:
    draws = PosteriorDraws.load(args.draws)
    X = read_predictors(args.data, draws.header["names"])
    text = _csv(prediction_rows(predict(draws, X)))
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    paths = write_scenario(args.scenario, args.seed, args.out)
    for p in paths.values():
        print(p)
    return 0


def inspect_report(draws: PosteriorDraws) -> str:
    h = draws.header
    lines = [
        f"draws: {draws.n_draws}  chains: {h['chains']}  seed: {h['seed']}  "
        f"config: {h['config_digest']}",
        f"data: n={h['n']} P={h['P']} t={h['t']} outcome={h['outcome']}  "
        f"selector={draws.selector_kind}",
        "",
        "inclusion probabilities",
    ]
    for name, group, p in inclusion_rows(draws)[1:]:
        lines.append(f"  {name:<20}{group:<12}{float(p):8.3f}")
    if draws.selector_kind == "ldirichlet":
        lines += ["", "group prior mass (mean [90% interval])"]
        for lab, m, lo, hi in group_mass_rows(draws)[1:]:
            lines.append(f"  {lab:<12}{float(m):8.3f} [{float(lo):.3f}, {float(hi):.3f}]")
    s2 = draws.sigma2
    q05, q50, q95 = np.quantile(s2, [0.05, 0.5, 0.95])
    lines += ["", f"sigma2: mean {s2.mean():.4g}  median {q50:.4g}  90% [{q05:.4g}, {q95:.4g}]"
                  f"  first {s2[0]:.4g}  last {s2[-1]:.4g}"]
    lines += ["", "acceptance rates"]
    for c in sorted(draws.accept):
        rates = "  ".join(f"{k}={v:.3f}" for k, v in draws.accept[c].items() if v is not None)
        lines.append(f"  chain {c}: {rates}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    sys.stdout.write(inspect_report(PosteriorDraws.load(args.draws)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldbart", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler and write draws plus summaries")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--out")
    p.add_argument("--parallel", action="store_true", help="run chains in worker processes")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictions for new rows")
    p.add_argument("--draws", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="write a synthetic scenario")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inspect", help="summarize a draws file")
    p.add_argument("--draws", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, OSError, ValueError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
