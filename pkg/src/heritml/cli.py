"""Command-line entry point: ``heritml {simulate,estimate,benchmark,summarize}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (
    BenchmarkConfig,
    ConfigError,
    MethodContext,
    estimate_row,
    load_config,
    parse_method,
    run_benchmark,
    run_method,
    summary_table,
    write_report,
    write_rows,
    write_summary,
)
from .boost import BoostConfig
from .core import HeritabilityError, Method
from .genotype_io import (
    align_samples,
    ensure_dir,
    filter_variants,
    impute_and_center,
    load_genotype_csv,
    load_phenotype_csv,
    write_genotype_csv,
    write_phenotype_csv,
)
from .simulate import SimulationSpec, load_spec, simulate_dataset, simulate_genotypes

log = logging.getLogger("heritml")


def _methods(text: str) -> list[Method]:
    out = [parse_method(t) for t in text.split(",") if t.strip()]
    if not out:
        raise ConfigError("--methods is empty")
    return out


def cmd_simulate(args) -> int:
    spec = load_spec(args.config)
    if args.seed is not None:
        spec = SimulationSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = ensure_dir(args.out)
    raw = simulate_genotypes(spec)
    G = impute_and_center(filter_variants(raw))
    causal_ids = {raw.variant_ids[j] for j in spec.causal_indices()}
    causal = np.array([j for j, v in enumerate(G.variant_ids) if v in causal_ids], dtype=int)
    ds = simulate_dataset(spec, G, causal)
    write_genotype_csv(out / "genotypes.csv", raw)
    write_phenotype_csv(out / "phenotype.csv", ds.phenotype, ds.genotypes.sample_ids)
    beta = dict(zip(ds.genotypes.variant_ids, ds.true_effects.values))
    truth = {
        "true_h2": ds.true_h2,
        "target_h2": spec.target_h2,
        "sigma2_eps": ds.sigma2_eps,
        "model": spec.model,
        "causal_variants": [ds.genotypes.variant_ids[j] for j in ds.true_effects.support],
        "beta": {v: float(beta.get(v, 0.0)) for v in raw.variant_ids},
        "spec": spec.to_dict(),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out / 'genotypes.csv'}, {out / 'phenotype.csv'}, {out / 'truth.json'} (true h2 {ds.true_h2:.6f})")
    return 0


def cmd_estimate(args, parser) -> int:
    methods = _methods(args.methods)
    sigma2 = None
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            sigma2 = float(json.load(fh)["sigma2_eps"])
    if Method.ORACLE in methods and sigma2 is None:
        parser.error("method 'oracle' needs --truth (a file holding the true noise variance sigma2_eps)")
    G = load_genotype_csv(args.genotypes)
    y = load_phenotype_csv(args.phenotype)
    G, y = align_samples(G, y)  # misaligned ids fail here, before any estimation
    G = impute_and_center(filter_variants(G))
    X = np.asarray(G.entries)
    ctx = MethodContext(alpha=args.alpha, seed=args.seed, sigma2_true=sigma2,
                        boost=BoostConfig(B=args.boost_B, n_jobs=1))
    cache: dict = {}
    rows = []
    for m in methods:
        est, secs = run_method(m, X, y.values, ctx, cache)
        rows.append(estimate_row("data", 0, est, secs))
        status = f"{est.h2:.4f}" if est.ok else f"failed ({est.diagnostics.get('error')})"
        print(f"{m.value:<10} {status}")
    out = ensure_dir(args.out)
    write_rows(out / "estimates.csv", rows)
    return 0 if any(r["status"] == "ok" for r in rows) else 1


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    over = {}
    if args.methods:
        over["methods"] = [m.value for m in _methods(args.methods)]
    if args.seed is not None:
        over["base_seed"] = args.seed
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.parallelism is not None:
        over["parallelism"] = args.parallelism
    if args.out:
        over["output_dir"] = args.out
    if over:
        cfg = BenchmarkConfig(**{**cfg.__dict__, **over})
    rows = run_benchmark(cfg)
    rows_path = write_report(cfg, rows)
    print((Path(cfg.output_dir) / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"{len(rows)} rows written to {rows_path}")
    return 0


def cmd_summarize(args) -> int:
    out = args.out or str(Path(args.rows).parent)
    summary = write_summary(args.rows, out)
    print(summary_table(summary), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heritml", description="Heritability estimation and benchmarking.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate genotypes, phenotype and truth file")
    s.add_argument("--config", required=True, help="JSON simulation spec")
    s.add_argument("--seed", type=int, default=None, help="override the seed in the config")
    s.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="run estimators on genotype/phenotype CSV files")
    e.add_argument("--genotypes", required=True)
    e.add_argument("--phenotype", required=True)
    e.add_argument("--truth", default=None, help="truth JSON with sigma2_eps (needed by oracle)")
    e.add_argument("--methods", default="eigenprism,mle,moment,slasso,enet,boosther")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--boost-B", dest="boost_B", type=int, default=100)
    e.add_argument("--out", required=True)

    b = sub.add_parser("benchmark", help="run a replicated simulation benchmark")
    b.add_argument("--config", required=True, help="JSON benchmark config")
    b.add_argument("--methods", default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--alpha", type=float, default=None)
    b.add_argument("--parallelism", type=int, default=None)
    b.add_argument("--out", default=None)

    m = sub.add_parser("summarize", help="summarize a rows CSV")
    m.add_argument("rows")
    m.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "estimate":
            return cmd_estimate(args, parser)
        if args.command == "benchmark":
            return cmd_benchmark(args)
        return cmd_summarize(args)
    except (ConfigError, HeritabilityError, OSError, json.JSONDecodeError) as exc:
        print(f"heritml: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
