"""Orthonormal polynomial basis on [0, 1] and product bases over [0, 1]^d.

The univariate functions are rescaled Legendre polynomials,
``f_n(x) = sqrt(2n + 1) * P_n(2x - 1)``, so that
``int_0^1 f_i f_j dx = delta_ij`` and ``f_0 = 1``.  A multi-index
``j = (j_1, .., j_d)`` selects the product ``prod_i f_{j_i}(x_i)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_DEGREE = 30
DOMAIN_TOL = 1e-12

SCHEMES = ("full", "pairwise", "total", "explicit")
_SCHEME_ALIASES = {
    "full-tensor": "full",
    "pairwise-only": "pairwise",
    "total-degree": "total",
    "explicit-list": "explicit",
}

MultiIndex = tuple[int, ...]


def _check_degree(degree: int) -> int:
    degree = int(degree)
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds the supported maximum {MAX_DEGREE}")
    return degree


def _check_domain(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size and (np.nanmin(x) < -DOMAIN_TOL or np.nanmax(x) > 1.0 + DOMAIN_TOL):
        raise ValueError("basis arguments must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def poly_table(x, max_degree: int, derivative: bool = False) -> np.ndarray:
    """Evaluate ``f_0 .. f_max_degree`` (or their derivatives) at ``x``.

    Parameters
    ----------
    x : array_like
        Points in [0, 1], any shape.
    max_degree : int
        Highest degree to evaluate.
    derivative : bool
        Return ``d/dx f_n(x)`` instead of ``f_n(x)``.

    Returns
    -------
    numpy.ndarray
        Array of shape ``x.shape + (max_degree + 1,)``.
    """
    max_degree = _check_degree(max_degree)
    x = _check_domain(x)
    z = 2.0 * x - 1.0
    p = np.empty(x.shape + (max_degree + 1,))
    p[..., 0] = 1.0
    if max_degree >= 1:
        p[..., 1] = z
    for n in range(1, max_degree):
        p[..., n + 1] = ((2 * n + 1) * z * p[..., n] - n * p[..., n - 1]) / (n + 1)
    scale = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    if not derivative:
        return p * scale
    # P'_{n+1} = P'_{n-1} + (2n + 1) P_n, in the variable z = 2x - 1
    dp = np.zeros_like(p)
    if max_degree >= 1:
        dp[..., 1] = 1.0
    for n in range(1, max_degree):
        dp[..., n + 1] = dp[..., n - 1] + (2 * n + 1) * p[..., n]
    return 2.0 * dp * scale


def poly_eval(degree: int, x):
    """Value of the orthonormal polynomial ``f_degree`` at ``x``."""
    degree = _check_degree(degree)
    out = poly_table(x, degree)[..., degree]
    return float(out) if out.ndim == 0 else out


def poly_deriv(degree: int, x):
    """Derivative ``f'_degree(x)``, exact polynomial differentiation."""
    degree = _check_degree(degree)
    out = poly_table(x, degree, derivative=True)[..., degree]
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=16)
def _gauss_legendre_01(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gauss_legendre(n_nodes: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    return _gauss_legendre_01(int(n_nodes))


def _normalize_scheme(scheme: str) -> str:
    scheme = _SCHEME_ALIASES.get(scheme, scheme)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown basis scheme {scheme!r}; expected one of {SCHEMES}")
    return scheme


@dataclass(frozen=True)
class BasisSet:
    """Ordered set of multi-indices used by a joint density model.

    Indices are kept in lexicographic order, so the all-zero index (the
    normalization term) always sits at position 0.
    """

    dim: int
    max_degree: int
    indices: tuple[MultiIndex, ...]
    scheme: str = "explicit"
    _lookup: dict = field(init=False, repr=False, compare=False)
    _degrees: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        _check_degree(self.max_degree)
        object.__setattr__(self, "scheme", _normalize_scheme(self.scheme))
        indices = tuple(tuple(int(v) for v in j) for j in self.indices)
        for j in indices:
            if len(j) != self.dim:
                raise ValueError(f"index {j} has length {len(j)}, expected {self.dim}")
            if min(j) < 0 or max(j) > self.max_degree:
                raise ValueError(f"index {j} has degrees outside 0..{self.max_degree}")
        if len(set(indices)) != len(indices):
            raise ValueError("basis indices must be unique")
        zero = (0,) * self.dim
        if not indices or indices[0] != zero:
            raise ValueError("the all-zero index must be present at position 0")
        if list(indices) != sorted(indices):
            raise ValueError("basis indices must be in lexicographic order")
        if self.scheme == "pairwise" and any(sum(v > 0 for v in j) > 2 for j in indices):
            raise ValueError("pairwise basis indices may have at most 2 nonzero entries")
        if self.scheme == "total" and any(sum(j) > self.max_degree for j in indices):
            raise ValueError("total-degree basis indices must satisfy sum(j) <= max_degree")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "_lookup", {j: k for k, j in enumerate(indices)})
        degrees = np.array(indices, dtype=np.intp).reshape(len(indices), self.dim)
        degrees.flags.writeable = False
        object.__setattr__(self, "_degrees", degrees)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, j) -> bool:
        return tuple(j) in self._lookup

    @property
    def degrees(self) -> np.ndarray:
        """Read-only ``(len(self), dim)`` integer array of the indices."""
        return self._degrees

    @property
    def nontrivial(self) -> tuple[MultiIndex, ...]:
        return self.indices[1:]

    def position(self, j) -> int:
        try:
            return self._lookup[tuple(j)]
        except KeyError:
            raise KeyError(f"index {tuple(j)} is not in the basis") from None

    def evaluate(self, data) -> np.ndarray:
        """Products ``f_j(x)`` for every row of ``data`` and every index.

        Returns an ``(n, len(self))`` array; column 0 is all ones.
        """
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2 or data.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {data.shape}")
        table = poly_table(data, self.max_degree)  # (n, d, m + 1)
        n = data.shape[0]
        out = np.empty((n, len(self)))
        cols = np.arange(self.dim)
        # bound the (rows, indices, dim) gather to a few million entries
        step = max(1, 4_000_000 // max(1, len(self) * self.dim))
        for start in range(0, n, step):
            block = table[start:start + step]
            out[start:start + step] = block[:, cols, self._degrees].prod(axis=-1)
        return out

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "max_degree": self.max_degree,
            "scheme": self.scheme,
            "indices": [list(j) for j in self.indices],
        }


def _enumerate(dim: int, max_degree: int, scheme: str) -> list[MultiIndex]:
    grid = itertools.product(range(max_degree + 1), repeat=dim)
    if scheme == "full":
        return list(grid)
    if scheme == "pairwise":
        return [j for j in grid if sum(v > 0 for v in j) <= 2]
    if scheme == "total":
        return [j for j in grid if sum(j) <= max_degree]
    raise AssertionError(scheme)


def make_basis(dim: int, max_degree: int, scheme: str = "full", explicit=None) -> BasisSet:
    """Construct a basis set.

    ``scheme`` is one of ``full`` (all ``(m + 1)^d`` indices), ``pairwise``
    (at most two nonzero entries), ``total`` (``sum(j) <= m``) or
    ``explicit`` (the indices given in ``explicit``, which must contain the
    zero index).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    _check_degree(max_degree)
    scheme = _normalize_scheme(scheme)
    if scheme == "explicit":
        if explicit is None:
            raise ValueError("explicit scheme requires an index list")
        indices = [tuple(int(v) for v in j) for j in explicit]
        if len(set(indices)) != len(indices):
            raise ValueError("explicit index list contains duplicates")
        indices.sort()
    else:
        if explicit is not None:
            raise ValueError(f"scheme {scheme!r} does not take an explicit index list")
        indices = _enumerate(dim, max_degree, scheme)
    return BasisSet(dim, max_degree, tuple(indices), scheme)


def marginal_basis(dim: int, max_degree: int) -> BasisSet:
    """Zero index plus all single-variable indices ``p * e_k``, ``p = 1..m``.

    This is the feature set of a layer of ``dim`` variables each described by
    its first ``max_degree`` moments.
    """
    indices = [(0,) * dim]
    for k in range(dim):
        for p in range(1, max_degree + 1):
            j = [0] * dim
            j[k] = p
            indices.append(tuple(j))
    return make_basis(dim, max_degree, "explicit", indices)


def basis_from_dict(doc: dict) -> BasisSet:
    return BasisSet(
        int(doc["dim"]),
        int(doc["max_degree"]),
        tuple(tuple(j) for j in doc["indices"]),
        doc.get("scheme", "explicit"),
    )


def tensor_eval(b: BasisSet, j, x) -> float:
    """``prod_i f_{j_i}(x_i)`` for a single index ``j`` of ``b``."""
    j = tuple(int(v) for v in j)
    x = np.asarray(x, dtype=float).ravel()
    if len(j) != b.dim or x.shape[0] != b.dim:
        raise ValueError(f"dimension mismatch: basis dim {b.dim}, index {len(j)}, point {x.shape[0]}")
    if j not in b:
        raise KeyError(f"index {j} is not in the basis")
    table = poly_table(x, b.max_degree)
    return float(np.prod(table[np.arange(b.dim), list(j)]))


@dataclass(frozen=True)
class FeatureMatrix:
    """Scaled features ``f_j(x^i) / sqrt(n)`` over the nontrivial indices.

    Column ``c`` corresponds to ``basis.indices[c + 1]``.
    """

    values: np.ndarray
    basis: BasisSet

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def raw(self) -> np.ndarray:
        """Unscaled feature values ``f_j(x^i)``."""
        return self.values * np.sqrt(self.n)


def features(b: BasisSet, data) -> FeatureMatrix:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1) if b.dim == 1 else data.reshape(1, -1)
    if data.shape[0] == 0:
        raise ValueError("cannot build features from an empty dataset")
    values = b.evaluate(data)[:, 1:] / np.sqrt(data.shape[0])
    values.flags.writeable = False
    return FeatureMatrix(values, b)
