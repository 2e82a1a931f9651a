"""Inference through a single HCR neuron in any direction.

Known variables are substituted into the joint model, either as concrete
normalized values (``f_j(v)``) or as densities given by their moment vectors
(``b_j``), unknown non-target variables are marginalized out, and the result
is normalized by the zero-degree nominator.  Density inputs use the
constant-denominator approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.polynomial import Legendre, Polynomial

from .basis import BasisSet, poly_table
from .density import JointDensityModel

DENOMINATOR_GUARD = 1e-6
MEAN_F1 = 1.0 / np.sqrt(12.0)  # int_0^1 x f_1(x) dx


class DegenerateDenominator(ArithmeticError):
    """The normalizing nominator N_0 is too close to zero."""


class DegenerateDenominatorWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Univariate density ``sum_k b_k f_k(u)`` on [0, 1] with ``b_0 = 1``."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).ravel()
        if coeffs.size == 0 or coeffs[0] != 1.0:
            raise ValueError("moment vector must start with b_0 = 1")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def dirac(cls, value: float, degree: int) -> "MomentVector":
        """Moments ``b_j = f_j(value)`` of a point mass."""
        return cls(poly_table(float(value), degree))

    @classmethod
    def uniform(cls, degree: int) -> "MomentVector":
        coeffs = np.zeros(degree + 1)
        coeffs[0] = 1.0
        return cls(coeffs)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def padded(self, degree: int) -> np.ndarray:
        out = np.zeros(degree + 1)
        k = min(degree, self.degree) + 1
        out[:k] = self.coeffs[:k]
        return out

    def truncate(self, degree: int) -> "MomentVector":
        return MomentVector(self.padded(degree))

    def mean(self) -> float:
        b1 = self.coeffs[1] if self.degree >= 1 else 0.0
        return 0.5 + MEAN_F1 * b1

    def second_moment(self) -> float:
        # u^2 = (f_2 / sqrt(5) + 6u - 1) / 6
        b2 = self.coeffs[2] if self.degree >= 2 else 0.0
        return (b2 / np.sqrt(5.0) - 1.0 + 6.0 * self.mean()) / 6.0

    def variance(self) -> float:
        return self.second_moment() - self.mean() ** 2

    def density(self, u):
        return poly_table(u, self.degree) @ self.coeffs


EvidenceEntry = Union[float, MomentVector, None]
Evidence = Sequence[EvidenceEntry]


def _entry_weights(entry, degree: int) -> np.ndarray | None:
    if entry is None:
        return None
    if isinstance(entry, MomentVector):
        return entry.padded(degree)
    v = float(entry)
    if np.isnan(v):
        return None
    return poly_table(v, degree)


def _group_matrix(basis: BasisSet, targets: Sequence[int]):
    """Indicator ``G[k, p]`` of basis index ``k`` having target pattern ``p``."""
    deg = basis.degrees[:, list(targets)]
    patterns = sorted({tuple(int(v) for v in row) for row in deg})
    pos = {p: i for i, p in enumerate(patterns)}
    G = np.zeros((len(basis), len(patterns)))
    for k, row in enumerate(deg):
        G[k, pos[tuple(int(v) for v in row)]] = 1.0
    return patterns, G


def _nominators(model: JointDensityModel, weights: Sequence[np.ndarray | None], targets):
    """``N_p = sum_{j: j_targets = p} a_j prod_{k not target} w_k[j_k]``.

    ``weights[k]`` is an ``(n, m + 1)`` array, or None for a marginalized
    variable; target entries are ignored.  Returns ``(patterns, N)`` with
    ``N`` of shape ``(n, len(patterns))``.
    """
    targets = list(targets)
    deg = model.basis.degrees
    n = next((w.shape[0] for w in weights if w is not None), 1)
    prod = np.broadcast_to(model.coeffs, (n, len(model.basis))).copy()
    for k in range(model.dim):
        if k in targets:
            continue
        w = weights[k]
        if w is None:
            prod[:, deg[:, k] != 0] = 0.0
        else:
            prod *= w[:, deg[:, k]]
    patterns, G = _group_matrix(model.basis, targets)
    return patterns, prod @ G


def _check_evidence(model: JointDensityModel, ev: Evidence, targets) -> None:
    if len(ev) != model.dim:
        raise ValueError(f"evidence has {len(ev)} entries, model has {model.dim} variables")
    for t in targets:
        if not 0 <= t < model.dim:
            raise ValueError(f"target {t} out of range")
        if ev[t] is not None and not (isinstance(ev[t], float) and np.isnan(ev[t])):
            raise ValueError(f"target variable {t} must be unknown in the evidence")


def _evidence_weights(model: JointDensityModel, ev: Evidence):
    return [
        None if w is None else w[None, :]
        for w in (_entry_weights(e, model.max_degree) for e in ev)
    ]


def conditional_density(model: JointDensityModel, ev: Evidence, target: int) -> MomentVector:
    """Moment vector ``c_i = N_i / N_0`` of the target given the evidence."""
    _check_evidence(model, ev, [target])
    patterns, N = _nominators(model, _evidence_weights(model, ev), [target])
    c = np.zeros(model.max_degree + 1)
    for (i,), value in zip(patterns, N[0]):
        c[i] = value
    if abs(c[0]) < DENOMINATOR_GUARD:
        raise DegenerateDenominator(f"normalizing nominator {c[0]:.3g} below {DENOMINATOR_GUARD}")
    c = c / c[0]
    c[0] = 1.0
    return MomentVector(c)


def marginal_moments(model: JointDensityModel, target: int) -> MomentVector:
    c = np.zeros(model.max_degree + 1)
    deg = model.basis.degrees
    others = [k for k in range(model.dim) if k != target]
    for r in np.flatnonzero((deg[:, others] == 0).all(axis=1)):
        c[deg[r, target]] = model.coeffs[r]
    return MomentVector(c)


def conditional_mean(model: JointDensityModel, ev: Evidence, target: int, fallback: bool = True) -> float:
    """``E[x_target | evidence] = 1/2 + c_1 / sqrt(12)``, clamped to [0, 1].

    With ``fallback`` a degenerate denominator yields the prior mean 1/2 and
    a :class:`DegenerateDenominatorWarning`; otherwise it raises.
    """
    try:
        c = conditional_density(model, ev, target)
    except DegenerateDenominator:
        if not fallback:
            raise
        warnings.warn("degenerate denominator, returning prior mean", DegenerateDenominatorWarning, stacklevel=2)
        return 0.5
    return float(np.clip(c.mean(), 0.0, 1.0))


def conditional_joint(model: JointDensityModel, ev: Evidence, targets: Sequence[int]) -> JointDensityModel:
    """Joint model over ``targets`` given the evidence, ``N_p / N_0`` per pattern."""
    targets = list(targets)
    if len(targets) < 2 or len(set(targets)) != len(targets):
        raise ValueError("conditional_joint needs at least two distinct targets")
    _check_evidence(model, ev, targets)
    patterns, N = _nominators(model, _evidence_weights(model, ev), targets)
    N = N[0]
    if abs(N[0]) < DENOMINATOR_GUARD:
        raise DegenerateDenominator(f"normalizing nominator {N[0]:.3g} below {DENOMINATOR_GUARD}")
    coeffs = N / N[0]
    coeffs[0] = 1.0
    basis = BasisSet(len(targets), model.max_degree, tuple(patterns), model.basis.scheme)
    return JointDensityModel(basis, coeffs, model.sample_count)


def predict_moments(model: JointDensityModel, values, target: int, fallback: bool = True) -> np.ndarray:
    """Conditional moment vectors for many rows of value evidence.

    ``values`` is ``(n, d)`` in normalized units with NaN marking unknown
    variables (the target column is ignored).  Returns ``(n, m + 1)``; rows
    with a degenerate denominator fall back to the target's marginal.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} columns, got {values.shape[1]}")
    m = model.max_degree
    weights = []
    for k in range(model.dim):
        col = values[:, k]
        if k == target or np.all(np.isnan(col)):
            weights.append(None)
            continue
        w = poly_table(np.nan_to_num(col, nan=0.5), m)
        unknown = np.isnan(col)
        if unknown.any():
            w[unknown] = 0.0
            w[unknown, 0] = 1.0
        weights.append(w)
    patterns, N = _nominators(model, weights, [target])
    c = np.zeros((values.shape[0], m + 1))
    for col, (i,) in enumerate(patterns):
        c[:, i] = N[:, col]
    bad = np.abs(c[:, 0]) < DENOMINATOR_GUARD
    if bad.any():
        if not fallback:
            raise DegenerateDenominator(f"{int(bad.sum())} rows with degenerate denominator")
        warnings.warn(
            f"{int(bad.sum())} rows with degenerate denominator, using the marginal",
            DegenerateDenominatorWarning,
            stacklevel=2,
        )
        c[bad] = marginal_moments(model, target).coeffs
    good = ~bad
    c[good] = c[good] / c[good, :1]
    c[:, 0] = 1.0
    return c


def predict_mean(model: JointDensityModel, values, target: int, fallback: bool = True) -> np.ndarray:
    c = predict_moments(model, values, target, fallback)
    return np.clip(0.5 + MEAN_F1 * c[:, 1], 0.0, 1.0)


def _check_pairwise(model: JointDensityModel) -> None:
    if np.any((model.basis.degrees > 0).sum(axis=1) > 2):
        raise ValueError("KAN-like propagation needs a pairwise-only basis")


def kan_curves(model: JointDensityModel, target: int, u) -> np.ndarray:
    """Learned univariate contributions ``g_k(u) = sum_{p>=1} a_(target=1, k=p) f_p(u)``.

    Returns shape ``u.shape + (d,)``; the target column is zero.
    """
    _check_pairwise(model)
    u = np.asarray(u, dtype=float)
    table = poly_table(u, model.max_degree)
    deg = model.basis.degrees
    out = np.zeros(u.shape + (model.dim,))
    for r in np.flatnonzero(deg[:, target] == 1):
        others = [k for k in range(model.dim) if k != target and deg[r, k] > 0]
        if len(others) == 1:
            k = others[0]
            out[..., k] += model.coeffs[r] * table[..., deg[r, k]]
    return out


def kan_mean(model: JointDensityModel, values, target: int):
    """Unnormalized first-moment nominator as a sum of per-input polynomials.

    ``a_(target=1) + sum_k g_k(v_k)``; NaN (or None) inputs contribute nothing.
    Accepts one evidence row or an ``(n, d)`` matrix.
    """
    _check_pairwise(model)
    if isinstance(values, np.ndarray):
        arr = values.astype(float)
    else:
        arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} inputs, got {arr.shape[1]}")
    known = ~np.isnan(arr)
    # curve k evaluated at input k
    g = np.diagonal(kan_curves(model, target, np.nan_to_num(arr, nan=0.5)), axis1=-2, axis2=-1)
    g = np.where(known, g, 0.0)
    g[:, target] = 0.0
    base_index = [0] * model.dim
    base_index[target] = 1
    base = model.coeffs[model.basis.position(base_index)] if tuple(base_index) in model.basis else 0.0
    out = base + g.sum(axis=1)
    return float(out[0]) if single else out


def conditional_mean_polynomials(model: JointDensityModel, target: int) -> tuple[Polynomial, Polynomial]:
    """Numerator and denominator of ``E[target | other]`` for a 2-variable model.

    ``E = 1/2 + num(v) / (sqrt(12) * den(v))`` with ``num``, ``den`` power
    series in the other variable's normalized value ``v``.
    """
    if model.dim != 2:
        raise ValueError("conditional_mean_polynomials is defined for 2-variable models")
    other = 1 - target
    m = model.max_degree
    num = np.zeros(m + 1)
    den = np.zeros(m + 1)
    for j, a in zip(model.basis.indices, model.coeffs):
        if j[target] == 1:
            num[j[other]] += a
        elif j[target] == 0:
            den[j[other]] += a
    scale = np.sqrt(2.0 * np.arange(m + 1) + 1.0)

    def to_power(c):
        return Legendre(c * scale, domain=[0.0, 1.0]).convert(kind=Polynomial, domain=[0.0, 1.0], window=[0.0, 1.0])

    return to_power(num), to_power(den)
