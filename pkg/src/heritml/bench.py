"""Benchmark harness: settings, per-cell estimation, report files.

A benchmark is a grid of (setting, replicate) cells.  Every cell derives its
own random stream from ``(base_seed, setting, replicate)``, regenerates the
effects and noise, applies the setting's transformation and runs each
requested method.  Failures are caught per method and recorded as rows with
``status=failed``; nothing propagates out of a cell.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .boost import BoostConfig, boost_heritability
from .core import (
    HeritabilityError,
    HeritabilityEstimate,
    Method,
    PhenotypeVector,
    oracle_estimate,
)
from .direct import eigenprism, mle_heritability, moment_heritability, spectral_decomposition
from .genotype_io import GenotypeMatrix, filter_variants, impute_and_center, load_genotype_csv
from .simulate import SimulationSpec, SpecError, simulate_dataset
from .sparse import enet_heritability, slasso_heritability

log = logging.getLogger(__name__)

SETTINGS = ("wholegenes", "causalgenes", "subsample1500", "subsample500", "t_effect", "gcta_model")
ROW_FIELDS = ("setting", "replicate", "method", "h2", "lo", "hi", "status", "wall_time_s", "support_size")
SUMMARY_FIELDS = ("setting", "method", "n_rows", "n_ok", "mean", "sd", "mean_width", "failures", "failure_rate")
# default subsample sizes as fractions of n (1500 and 500 of the 3051 Maela samples, rounded)
SUBSAMPLE_FRACTIONS = {"subsample1500": 1 / 2, "subsample500": 1 / 6}


class ConfigError(ValueError):
    pass


@dataclass
class BenchmarkConfig:
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    genotypes: Optional[str] = None  # optional genotype CSV replacing the simulated matrix
    methods: list = field(default_factory=lambda: [m.value for m in Method])
    replicates: int = 50
    settings: list = field(default_factory=lambda: list(SETTINGS))
    subsample_sizes: dict = field(default_factory=dict)
    alpha: float = 0.05
    output_dir: str = "bench_out"
    base_seed: int = 0
    parallelism: int = 1
    boost: BoostConfig = field(default_factory=lambda: BoostConfig(B=50))
    enet_alpha: float = 0.01
    cv_folds: int = 10

    def __post_init__(self):
        if isinstance(self.simulation, dict):
            self.simulation = SimulationSpec.from_dict(self.simulation)
        if isinstance(self.boost, dict):
            known = {f.name for f in fields(BoostConfig)}
            bad = set(self.boost) - known
            if bad:
                raise ConfigError(f"unknown key(s) in boost: {sorted(bad)}")
            self.boost = BoostConfig(**self.boost)
        self.methods = [parse_method(m).value for m in self.methods]
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        for s in self.settings:
            if s not in SETTINGS:
                raise ConfigError(f"unknown setting {s!r}; choose from {', '.join(SETTINGS)}")
        for k, v in self.subsample_sizes.items():
            if k not in SUBSAMPLE_FRACTIONS:
                raise ConfigError(f"subsample_sizes key {k!r} is not a subsample setting")
            if not isinstance(v, int) or v < 2:
                raise ConfigError(f"subsample size for {k} must be an integer >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown key(s) in benchmark config: {sorted(bad)}")
        try:
            return cls(**d)
        except SpecError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> BenchmarkConfig:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    return BenchmarkConfig.from_dict(d)


def parse_method(tag) -> Method:
    if isinstance(tag, Method):
        return tag
    try:
        return Method(str(tag).strip().lower())
    except ValueError:
        raise ConfigError(f"unknown method {tag!r}; choose from {', '.join(m.value for m in Method)}") from None


# ------------------------------------------------------------------ dispatch


@dataclass
class MethodContext:
    alpha: float = 0.05
    seed: int = 0
    sigma2_true: Optional[float] = None
    boost: BoostConfig = field(default_factory=BoostConfig)
    enet_alpha: float = 0.01
    cv_folds: int = 10


def _estimate(method: Method, X: np.ndarray, y: np.ndarray, ctx: MethodContext, cache: dict) -> HeritabilityEstimate:
    if method in (Method.EIGENPRISM, Method.MLE) and "spectrum" not in cache:
        cache["spectrum"] = spectral_decomposition(X, y)
    if method is Method.ORACLE:
        if ctx.sigma2_true is None:
            raise ConfigError("the oracle estimator needs the true noise variance")
        return oracle_estimate(y, ctx.sigma2_true)
    if method is Method.EIGENPRISM:
        return eigenprism(X, y, ctx.alpha, spectrum=cache["spectrum"])
    if method is Method.MLE:
        return mle_heritability(X, y, ctx.alpha, spectrum=cache["spectrum"])
    if method is Method.MOMENT:
        return moment_heritability(X, y, ctx.alpha)
    if method is Method.SLASSO:
        return slasso_heritability(X, y, ctx.alpha)
    if method is Method.ENET:
        return enet_heritability(X, y, ctx.enet_alpha, ctx.cv_folds, rng=[ctx.seed, 11])
    if method is Method.BOOSTHER:
        cfg = BoostConfig(**{**ctx.boost.__dict__, "seed": ctx.seed, "n_jobs": 1})
        return boost_heritability(X, y, cfg)
    raise ConfigError(f"unsupported method {method!r}")


def run_method(method, X, y, ctx: MethodContext, cache: Optional[dict] = None) -> tuple[HeritabilityEstimate, float]:
    """Run one estimator, converting numerical failures into a failed estimate; returns (estimate, seconds)."""
    method = parse_method(method)
    cache = {} if cache is None else cache
    t0 = time.perf_counter()
    try:
        est = _estimate(method, X, y, ctx, cache)
    except (HeritabilityError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        log.info("%s failed: %s", method.value, exc)
        est = HeritabilityEstimate.failed(method, f"{type(exc).__name__}: {exc}")
    return est, time.perf_counter() - t0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def estimate_row(setting: str, replicate: int, est: HeritabilityEstimate, seconds: float) -> dict:
    ok = est.ok
    iv = est.interval if ok else None
    support = est.diagnostics.get("support_size") if ok else None
    if isinstance(support, float) and support.is_integer():
        support = int(support)
    return {
        "setting": setting,
        "replicate": str(replicate),
        "method": est.method.value,
        "h2": _fmt(est.h2) if ok else "",
        "lo": _fmt(iv.lo) if iv is not None else "",
        "hi": _fmt(iv.hi) if iv is not None else "",
        "status": est.status,
        "wall_time_s": f"{seconds:.6f}",
        "support_size": _fmt(support),
    }


# ------------------------------------------------------------------ settings


@dataclass
class BenchData:
    G: GenotypeMatrix  # filtered and centered
    causal: np.ndarray


def prepare_bench_data(cfg: BenchmarkConfig) -> BenchData:
    spec = cfg.simulation
    if cfg.genotypes:
        raw = load_genotype_csv(cfg.genotypes)
        G = impute_and_center(filter_variants(raw))
        causal = SimulationSpec.from_dict({**spec.to_dict(), "n": G.n, "p": G.p}).causal_indices()
        return BenchData(G, causal)
    from .simulate import prepare_genotypes

    G, causal = prepare_genotypes(spec)
    return BenchData(G, causal)


def subsample_size(cfg: BenchmarkConfig, setting: str, n: int) -> int:
    m = cfg.subsample_sizes.get(setting)
    if m is None:
        m = int(round(n * SUBSAMPLE_FRACTIONS[setting]))
    if m > n:
        raise ConfigError(f"{setting}: subsample size {m} exceeds n={n}")
    return m


def cell_seed(base_seed: int, setting: str, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), SETTINGS.index(setting), int(replicate)])


def make_cell(cfg: BenchmarkConfig, data: BenchData, setting: str, replicate: int):
    """Data for one cell: (X passed to estimators, y, true noise variance, true h2)."""
    rng = np.random.default_rng(cell_seed(cfg.base_seed, setting, replicate))
    spec = cfg.simulation
    if setting == "t_effect":
        spec = SimulationSpec.from_dict({**spec.to_dict(), "effect_dist": "student_t3"})
    elif setting == "gcta_model":
        spec = SimulationSpec.from_dict({**spec.to_dict(), "model": "gcta_mixed"})
    ds = simulate_dataset(spec, data.G, data.causal, rng=rng)
    X = np.asarray(ds.genotypes.entries)
    y = ds.phenotype.values
    if setting == "causalgenes":
        X = X[:, data.causal]
    elif setting in SUBSAMPLE_FRACTIONS:
        # effects are fixed on the full population before the rows are drawn
        rows = np.sort(rng.choice(len(y), size=subsample_size(cfg, setting, len(y)), replace=False))
        X = X[rows] - X[rows].mean(axis=0)
        y = PhenotypeVector.from_values(y[rows]).values
    return X, y, ds.sigma2_eps, ds.true_h2


def run_cell(cfg: BenchmarkConfig, data: BenchData, setting: str, replicate: int) -> list[dict]:
    seed = int(cell_seed(cfg.base_seed, setting, replicate).generate_state(1)[0])
    try:
        X, y, sigma2, _ = make_cell(cfg, data, setting, replicate)
    except (HeritabilityError, ValueError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ConfigError):
            raise
        reason = f"data generation failed: {exc}"
        return [estimate_row(setting, replicate, HeritabilityEstimate.failed(parse_method(m), reason), 0.0)
                for m in cfg.methods]
    ctx = MethodContext(cfg.alpha, seed, sigma2, cfg.boost, cfg.enet_alpha, cfg.cv_folds)
    cache: dict = {}
    rows = []
    for m in cfg.methods:
        est, secs = run_method(m, X, y, ctx, cache)
        rows.append(estimate_row(setting, replicate, est, secs))
    return rows


def run_benchmark(cfg: BenchmarkConfig, data: Optional[BenchData] = None) -> list[dict]:
    data = data if data is not None else prepare_bench_data(cfg)
    cells = [(s, r) for s in cfg.settings for r in range(cfg.replicates)]
    if cfg.parallelism == 1:
        chunks = [run_cell(cfg, data, s, r) for s, r in cells]
    else:
        chunks = Parallel(n_jobs=cfg.parallelism, prefer="threads")(
            delayed(run_cell)(cfg, data, s, r) for s, r in cells
        )
    return [row for chunk in chunks for row in chunk]


# ------------------------------------------------------------------- reports


def write_rows(path, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise ConfigError(f"{path}: malformed rows header {reader.fieldnames}")
        rows = list(reader)
    for i, r in enumerate(rows, start=2):
        if None in r or any(v is None for v in r.values()):
            raise ConfigError(f"{path}:{i}: wrong number of fields")
        if r["status"] not in ("ok", "failed"):
            raise ConfigError(f"{path}:{i}: bad status {r['status']!r}")
        try:
            if r["status"] == "ok":
                float(r["h2"])
            for k in ("lo", "hi"):
                if r[k]:
                    float(r[k])
        except ValueError:
            raise ConfigError(f"{path}:{i}: non-numeric estimate") from None
    return rows


def summarize_rows(rows: list[dict]) -> list[dict]:
    """Per (setting, method), in order of first appearance: mean, sd, mean interval width, failures."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["setting"], r["method"]), []).append(r)
    out = []
    for (setting, method), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        vals = np.array([float(r["h2"]) for r in ok])
        widths = [float(r["hi"]) - float(r["lo"]) for r in ok if r["lo"] and r["hi"]]
        fails = len(rs) - len(ok)
        out.append({
            "setting": setting,
            "method": method,
            "n_rows": str(len(rs)),
            "n_ok": str(len(ok)),
            "mean": _fmt(vals.mean()) if vals.size else "",
            "sd": _fmt(vals.std(ddof=1) if vals.size > 1 else 0.0) if vals.size else "",
            "mean_width": _fmt(float(np.mean(widths))) if widths else "",
            "failures": str(fails),
            "failure_rate": _fmt(fails / len(rs)),
        })
    return out


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary)
    return buf.getvalue()


def summary_table(summary: list[dict]) -> str:
    """Aligned plain-text rendering of the summary (4 decimals)."""
    def num(v):
        return f"{float(v):.4f}" if v != "" else "-"

    header = ["setting", "method", "n", "mean", "sd", "width", "fail_rate"]
    body = [[s["setting"], s["method"], s["n_rows"], num(s["mean"]), num(s["sd"]),
             num(s["mean_width"]), num(s["failure_rate"])] for s in summary]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [header, *body]]
    return "\n".join(lines) + "\n"


def long_format_csv(rows: list[dict]) -> str:
    """One line per successful estimate, grouped the way box plots are drawn (setting, then method)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "setting", "method", "replicate", "h2"])
    for r in rows:
        if r["status"] == "ok":
            w.writerow([f"{r['setting']}:{r['method']}", r["setting"], r["method"], r["replicate"], r["h2"]])
    return buf.getvalue()


def write_summary(rows_path, out_dir) -> list[dict]:
    """Fold a rows file into summary.csv and summary.txt under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_rows(read_rows(rows_path))
    (out / "summary.csv").write_text(summary_csv(summary), encoding="utf-8")
    (out / "summary.txt").write_text(summary_table(summary), encoding="utf-8")
    return summary


def write_report(cfg: BenchmarkConfig, rows: list[dict], out_dir=None) -> Path:
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / "rows.csv"
    write_rows(rows_path, rows)
    write_summary(rows_path, out)
    (out / "plot_long.csv").write_text(long_format_csv(rows), encoding="utf-8")
    return rows_path
