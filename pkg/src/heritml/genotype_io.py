"""Genotype/phenotype CSV loading, variant filtering, imputation and centering."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DataError, PhenotypeVector

MISSING_TOKEN = "NA"


class ParseError(DataError):
    pass


def allele_stats(entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column minor allele frequency and missing fraction.

    Frequencies come from observed entries only.  Binary (haploid) coding is
    assumed for 0/1 data; for other real-valued codings the column mean is
    rescaled by the largest observed value.
    """
    observed = ~np.isnan(entries)
    n_obs = observed.sum(axis=0)
    missing_frac = 1.0 - n_obs / entries.shape[0]
    filled = np.where(observed, entries, 0.0)
    top = np.where(observed, entries, -np.inf).max(axis=0)
    scale = np.where(np.isfinite(top) & (top > 1.0), top, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = filled.sum(axis=0) / (n_obs * scale)
    freq = np.where(n_obs > 0, freq, 0.0)
    freq = np.clip(freq, 0.0, 1.0)
    maf = np.minimum(freq, 1.0 - freq)
    return maf, missing_frac


@dataclass(frozen=True)
class GenotypeMatrix:
    """n x p variant matrix; missing entries are NaN."""

    entries: np.ndarray
    variant_ids: tuple
    sample_ids: tuple
    maf: np.ndarray
    missing_frac: np.ndarray
    centered: bool = False
    standardized: bool = False

    @classmethod
    def from_array(cls, entries, variant_ids=None, sample_ids=None) -> "GenotypeMatrix":
        X = np.array(entries, dtype=float)
        if X.ndim != 2:
            raise DataError("genotype entries must be a 2-d array")
        n, p = X.shape
        vids = tuple(variant_ids) if variant_ids is not None else tuple(f"v{j}" for j in range(p))
        sids = tuple(sample_ids) if sample_ids is not None else tuple(f"s{i}" for i in range(n))
        if len(vids) != p or len(sids) != n:
            raise DataError("id lengths do not match matrix shape")
        maf, miss = allele_stats(X)
        X.setflags(write=False)
        return cls(X, vids, sids, maf, miss)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    def columns(self, cols) -> "GenotypeMatrix":
        cols = np.asarray(cols, dtype=int)
        return replace(
            self,
            entries=self.entries[:, cols],
            variant_ids=tuple(self.variant_ids[j] for j in cols),
            maf=self.maf[cols],
            missing_frac=self.missing_frac[cols],
        )

    def rows(self, rows, recenter: bool = True) -> "GenotypeMatrix":
        """Row subset; a centered matrix is re-centered so the flag stays truthful."""
        rows = np.asarray(rows, dtype=int)
        X = self.entries[rows]
        if self.centered and recenter:
            X = X - X.mean(axis=0)
        return replace(self, entries=X, sample_ids=tuple(self.sample_ids[i] for i in rows))


def _parse_float(token: str, row: int, col: int) -> float:
    token = token.strip()
    if token == MISSING_TOKEN or token == "":
        return np.nan
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"non-numeric token {token!r} at row {row}, column {col}") from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value at row {row}, column {col}")
    return v


def _read_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    return rows


def _check_unique(ids, what: str, path):
    seen = set()
    for i, x in enumerate(ids):
        if x in seen:
            raise ParseError(f"{path}: duplicate {what} id {x!r} (position {i + 1})")
        seen.add(x)


def load_genotype_csv(path) -> GenotypeMatrix:
    rows = _read_rows(path)
    header = rows[0]
    if len(header) < 2:
        raise ParseError(f"{path}: header must be 'sample_id,<variant ids...>'")
    variant_ids = [h.strip() for h in header[1:]]
    _check_unique(variant_ids, "variant", path)
    if len(rows) < 2:
        raise ParseError(f"{path}: no sample rows")
    p = len(variant_ids)
    sample_ids = []
    X = np.empty((len(rows) - 1, p))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != p + 1:
            raise ParseError(f"{path}: row {i} has {len(r)} fields, expected {p + 1}")
        sample_ids.append(r[0].strip())
        X[i - 2] = [_parse_float(t, i, j + 2) for j, t in enumerate(r[1:])]
    _check_unique(sample_ids, "sample", path)
    return GenotypeMatrix.from_array(X, variant_ids, sample_ids)


def load_phenotype_csv(path, center: bool = True) -> PhenotypeVector:
    rows = _read_rows(path)
    body = rows[1:] if rows[0][0].strip() == "sample_id" else rows
    if not body:
        raise ParseError(f"{path}: no phenotype rows")
    ids, vals = [], []
    for i, r in enumerate(body, start=2):
        if len(r) != 2:
            raise ParseError(f"{path}: row {i} has {len(r)} fields, expected 2")
        v = _parse_float(r[1], i, 2)
        if np.isnan(v):
            raise ParseError(f"{path}: missing phenotype at row {i}")
        ids.append(r[0].strip())
        vals.append(v)
    _check_unique(ids, "sample", path)
    return PhenotypeVector.from_values(vals, center=center, sample_ids=ids)


def align_samples(G: GenotypeMatrix, y: PhenotypeVector) -> tuple[GenotypeMatrix, PhenotypeVector]:
    """Order phenotype rows to match the genotype samples; ids must match exactly."""
    if y.sample_ids is None:
        if y.n != G.n:
            raise DataError("phenotype length does not match genotype rows")
        return G, y
    if set(G.sample_ids) != set(y.sample_ids) or len(G.sample_ids) != len(y.sample_ids):
        missing = sorted(set(G.sample_ids) ^ set(y.sample_ids))[:5]
        raise DataError(f"genotype and phenotype sample ids differ (e.g. {missing})")
    pos = {s: i for i, s in enumerate(y.sample_ids)}
    order = [pos[s] for s in G.sample_ids]
    raw = y.values[order] + y.original_mean
    return G, PhenotypeVector.from_values(raw, center=y.mean_removed, sample_ids=G.sample_ids)


def filter_variants(G: GenotypeMatrix, maf_min: float = 0.05, missing_max: float = 0.10) -> GenotypeMatrix:
    """Keep columns with maf >= maf_min and missing fraction <= missing_max (both inclusive)."""
    keep = np.flatnonzero((G.maf >= maf_min) & (G.missing_frac <= missing_max))
    if keep.size == 0:
        raise DataError("variant filtering removed every column")
    if keep.size == G.p:
        return G
    return G.columns(keep)


def impute_and_center(G: GenotypeMatrix, standardize: bool = False) -> GenotypeMatrix:
    X = np.array(G.entries, dtype=float)
    col_mean = np.nanmean(np.where(np.isnan(X).all(axis=0), 0.0, X), axis=0)
    holes = np.isnan(X)
    if holes.any():
        X[holes] = np.take(col_mean, np.nonzero(holes)[1])
    X -= X.mean(axis=0)
    if standardize:
        sd = X.std(axis=0, ddof=1)
        if np.any(sd <= 0):
            raise DataError("cannot standardize a zero-variance column")
        X /= sd
    X.setflags(write=False)
    return replace(G, entries=X, centered=True, standardized=standardize)


def prepare(G: GenotypeMatrix, maf_min: float = 0.05, missing_max: float = 0.10) -> GenotypeMatrix:
    return impute_and_center(filter_variants(G, maf_min, missing_max))


def write_genotype_csv(path, G: GenotypeMatrix, fmt: str = "%.10g"):
    X = G.entries
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *G.variant_ids])
        for sid, row in zip(G.sample_ids, X):
            w.writerow([sid, *(MISSING_TOKEN if np.isnan(v) else fmt % v for v in row)])


def write_phenotype_csv(path, y: PhenotypeVector, sample_ids: Optional[tuple] = None, fmt: str = "%.17g"):
    ids = sample_ids if sample_ids is not None else y.sample_ids
    if ids is None:
        ids = tuple(f"s{i}" for i in range(y.n))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "value"])
        for sid, v in zip(ids, y.values + y.original_mean):
            w.writerow([sid, fmt % v])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
