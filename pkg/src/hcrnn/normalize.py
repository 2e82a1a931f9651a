"""Per-variable quantile normalization to (0, 1) and back.

Two marginal models are supported: a fitted Gaussian CDF and the empirical
distribution function of a reference sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

GAUSSIAN_EPS = 1e-9


@dataclass(frozen=True)
class GaussianMarginal:
    mean: float
    std: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not (self.std > 0 and np.isfinite(self.std)):
            raise ValueError(f"invalid Gaussian marginal mean={self.mean}, std={self.std}")

    kind = "gaussian"

    def forward(self, x):
        u = ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)
        return np.clip(u, GAUSSIAN_EPS, 1.0 - GAUSSIAN_EPS)

    def inverse(self, u):
        return self.mean + self.std * ndtri(u)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean, "std": self.std}


@dataclass(frozen=True, eq=False)
class EmpiricalMarginal:
    """EDF of a sorted reference sample.

    A sample value of 1-based (mid-)rank ``r`` maps to ``(r - 0.5) / n``;
    values in between are linearly interpolated and the result is clamped to
    ``[0.5 / n, 1 - 0.5 / n]``.
    """

    sample: np.ndarray

    kind = "empirical"

    def __post_init__(self):
        sample = np.sort(np.asarray(self.sample, dtype=float).ravel())
        if sample.size == 0:
            raise ValueError("empirical marginal needs a non-empty reference sample")
        if not np.all(np.isfinite(sample)):
            raise ValueError("empirical reference sample must be finite")
        sample.flags.writeable = False
        object.__setattr__(self, "sample", sample)
        knots, first = np.unique(sample, return_index=True)
        counts = np.diff(np.append(first, sample.size))
        # mid-rank of each run of tied values, 1-based
        midrank = first + (counts + 1) / 2.0
        object.__setattr__(self, "_knots", knots)
        object.__setattr__(self, "_levels", (midrank - 0.5) / sample.size)

    @property
    def n(self) -> int:
        return self.sample.size

    def forward(self, x):
        lo = 0.5 / self.n
        u = np.interp(np.asarray(x, dtype=float), self._knots, self._levels)
        return np.clip(u, lo, 1.0 - lo)

    def inverse(self, u):
        pos = np.asarray(u, dtype=float) * self.n + 0.5
        return np.interp(pos, np.arange(1, self.n + 1), self.sample)

    def __eq__(self, other):
        return isinstance(other, EmpiricalMarginal) and np.array_equal(self.sample, other.sample)

    def __hash__(self):
        return hash(self.sample.tobytes())

    def to_dict(self) -> dict:
        return {"kind": "empirical", "sample": self.sample.tolist()}


Marginal = GaussianMarginal | EmpiricalMarginal


def fit_marginal(column, kind: str = "empirical") -> Marginal:
    column = np.asarray(column, dtype=float).ravel()
    if column.size < 2:
        raise ValueError("need at least 2 values to fit a normalizer")
    if not np.all(np.isfinite(column)):
        raise ValueError("normalizer input must be finite")
    if kind == "gaussian":
        std = float(np.std(column, ddof=1))
        if std <= 0:
            raise ValueError("cannot fit a Gaussian normalizer to a constant column")
        return GaussianMarginal(float(np.mean(column)), std)
    if kind == "empirical":
        return EmpiricalMarginal(column)
    raise ValueError(f"unknown normalizer kind {kind!r}")


def marginal_from_dict(doc: dict) -> Marginal:
    if doc["kind"] == "gaussian":
        return GaussianMarginal(float(doc["mean"]), float(doc["std"]))
    if doc["kind"] == "empirical":
        return EmpiricalMarginal(np.asarray(doc["sample"], dtype=float))
    raise ValueError(f"unknown normalizer kind {doc['kind']!r}")


@dataclass(frozen=True)
class Normalizer:
    """Independent quantile transforms, one per variable (column)."""

    marginals: tuple[Marginal, ...]
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))
            if len(self.columns) != len(self.marginals):
                raise ValueError("one column name per marginal required")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def forward(self, var: int, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("cannot normalize non-finite values")
        out = self.marginals[var].forward(x)
        return float(out) if out.ndim == 0 else out

    def inverse(self, var: int, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0.0) | (u >= 1.0)) or not np.all(np.isfinite(u)):
            raise ValueError("inverse normalization requires values strictly inside (0, 1)")
        out = self.marginals[var].inverse(u)
        return float(out) if np.ndim(out) == 0 else out

    def _as_matrix(self, data) -> np.ndarray:
        # a 1-D input is a column for one variable, otherwise a single row
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            return data.reshape(-1, 1) if self.dim == 1 else data.reshape(1, -1)
        return data

    def transform(self, data) -> np.ndarray:
        """Normalize every column of an ``(n, dim)`` matrix."""
        data = self._as_matrix(data)
        if data.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {data.shape[1]}")
        return np.column_stack([self.forward(k, data[:, k]) for k in range(self.dim)])

    def inverse_transform(self, u) -> np.ndarray:
        u = self._as_matrix(u)
        if u.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {u.shape[1]}")
        return np.column_stack([self.inverse(k, u[:, k]) for k in range(self.dim)])

    def subset(self, variables) -> "Normalizer":
        variables = list(variables)
        cols = None if self.columns is None else [self.columns[k] for k in variables]
        return Normalizer(tuple(self.marginals[k] for k in variables), cols)

    def to_list(self) -> list[dict]:
        docs = []
        for k, marginal in enumerate(self.marginals):
            doc = marginal.to_dict()
            if self.columns is not None:
                doc["column"] = self.columns[k]
            docs.append(doc)
        return docs

    @classmethod
    def from_list(cls, docs) -> "Normalizer":
        marginals = tuple(marginal_from_dict(d) for d in docs)
        names = [d.get("column") for d in docs]
        return cls(marginals, None if any(n is None for n in names) else names)


def fit_normalizer(data, kind="empirical", columns=None) -> Normalizer:
    """Fit one marginal per column.

    ``data`` may be a single column (1-D) or an ``(n, d)`` matrix; ``kind``
    is ``"gaussian"``, ``"empirical"`` or a per-column list of those.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    kinds = [kind] * data.shape[1] if isinstance(kind, str) else list(kind)
    if len(kinds) != data.shape[1]:
        raise ValueError("one normalizer kind per column required")
    return Normalizer(tuple(fit_marginal(data[:, k], kinds[k]) for k in range(data.shape[1])), columns)


def forward(nz: Normalizer, var: int, x):
    return nz.forward(var, x)


def inverse(nz: Normalizer, var: int, u):
    return nz.inverse(var, u)


def rank_normalize(data) -> np.ndarray:
    """In-sample EDF transform ``(rank - 0.5) / n`` per column, mid-ranks for ties."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        return (rankdata(data) - 0.5) / data.size
    return (rankdata(data, axis=0) - 0.5) / data.shape[0]
