"""Observational data containers and CSV loaders."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, SchemaError


@dataclass
class Dataset:
    """Covariates [n, p], binary treatment [n], outcome [n].

    Optional ground-truth columns (mu0, mu1, cate, propensity) ride along
    when the source provides them; estimators never read them.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    mu0: np.ndarray | None = None
    mu1: np.ndarray | None = None
    cate: np.ndarray | None = None
    propensity: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2:
            raise DimensionError(f"covariates must be [n, p], got shape {self.x.shape}")
        n = self.x.shape[0]
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise DimensionError(
                f"treatment/outcome lengths {self.t.shape}/{self.y.shape} "
                f"do not match {n} rows of covariates"
            )
        uniq = np.unique(self.t)
        if not np.all(np.isin(uniq, (0, 1))):
            raise DataError(f"treatment must be binary 0/1, found values {uniq}")
        self.t = self.t.astype(np.int64)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def arm_counts(self):
        n1 = int(self.t.sum())
        return self.n - n1, n1

    def subset(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return Dataset(
            self.x[idx],
            self.t[idx],
            self.y[idx],
            mu0=pick(self.mu0),
            mu1=pick(self.mu1),
            cate=pick(self.cate),
            propensity=pick(self.propensity),
        )


# ---------------------------------------------------------------------------
# real-data loaders

IHDP_COVARIATES = tuple(f"x{i}" for i in range(1, 26))

DW_COVARIATES = (
    "age",
    "education",
    "black",
    "hispanic",
    "married",
    "nodegree",
    "re74",
    "re75",
    "u74",
    "u75",
)

# common short names seen in circulating copies of the job-training file
DW_ALIASES = {
    "treat": "treated",
    "educ": "education",
    "hisp": "hispanic",
    "nodegr": "nodegree",
}


def _read_columns(path, aliases=None):
    """Read a CSV into {lowercased column name: float array}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = [row for row in reader if row]
    names = []
    for raw in header:
        name = raw.strip().lower()
        if aliases:
            name = aliases.get(name, name)
        names.append(name)
    try:
        table = np.array([[float(v) for v in row] for row in rows])
    except ValueError as err:
        raise SchemaError(f"non-numeric cell in {path}: {err}") from None
    if rows and table.shape[1] != len(names):
        raise SchemaError(
            f"{path} rows have {table.shape[1]} cells but the header names {len(names)}"
        )
    if not rows:
        raise SchemaError(f"{path} has a header but no data rows")
    return {name: table[:, j] for j, name in enumerate(names)}


def _require(cols, needed, path):
    for name in needed:
        if name not in cols:
            raise SchemaError(f"{path} is missing required column '{name}'")


def load_ihdp(path):
    """Infant-development study export: factual and counterfactual outcomes
    plus both mean potential outcomes, 6 continuous + 19 binary covariates."""
    cols = _read_columns(path)
    needed = ("treatment", "y_factual", "y_cfactual", "mu0", "mu1", *IHDP_COVARIATES)
    _require(cols, needed, path)
    x = np.column_stack([cols[c] for c in IHDP_COVARIATES])
    mu0 = cols["mu0"]
    mu1 = cols["mu1"]
    return Dataset(
        x=x,
        t=cols["treatment"],
        y=cols["y_factual"],
        mu0=mu0,
        mu1=mu1,
        cate=mu1 - mu0,
    )


def load_dw(path):
    """Job-training study export: 1978 earnings as outcome, no ground truth."""
    cols = _read_columns(path, aliases=DW_ALIASES)
    _require(cols, ("treated", "re78", *DW_COVARIATES), path)
    x = np.column_stack([cols[c] for c in DW_COVARIATES])
    return Dataset(x=x, t=cols["treated"], y=cols["re78"])


LOADERS = {"ihdp": load_ihdp, "dw": load_dw}


def load_real(path, schema):
    if schema not in LOADERS:
        raise SchemaError(
            f"unknown dataset schema '{schema}'; expected one of {sorted(LOADERS)}"
        )
    return LOADERS[schema](path)
