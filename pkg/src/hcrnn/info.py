"""Entropy and mutual information from HCR coefficients, and the HCR independence test.

All quantities use the first-order approximation ``ln(1 + a) ~ a`` and are
expressed in nits for normalized (copula-scale) variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import FeatureMatrix, features, make_basis
from .density import JointDensityModel
from .normalize import rank_normalize


def entropy_approx(model: JointDensityModel) -> float:
    """``H ~ -sum_{j in B+} a_j^2``."""
    return -float(np.sum(model.coeffs[1:] ** 2))


def cross_entropy_approx(model_a: JointDensityModel, model_b: JointDensityModel) -> float:
    """``-sum_{j in B+} a_j b_j``; symmetric in its arguments, unlike true cross entropy."""
    if model_a.basis != model_b.basis:
        raise ValueError("cross entropy needs models over identical bases")
    return -float(np.dot(model_a.coeffs[1:], model_b.coeffs[1:]))


def _blocks(model: JointDensityModel, x_vars, y_vars):
    x_vars = sorted({int(v) for v in x_vars})
    if y_vars is None:
        y_vars = [k for k in range(model.dim) if k not in x_vars]
    y_vars = sorted({int(v) for v in y_vars})
    if not x_vars or not y_vars or set(x_vars) & set(y_vars):
        raise ValueError("need two disjoint, non-empty variable blocks")
    if max(x_vars + y_vars) >= model.dim or min(x_vars + y_vars) < 0:
        raise ValueError("variable block out of range")
    deg = model.basis.degrees
    rest = [k for k in range(model.dim) if k not in x_vars and k not in y_vars]
    inside = (deg[:, rest] == 0).all(axis=1) if rest else np.ones(len(deg), dtype=bool)
    in_x = (deg[:, x_vars] > 0).any(axis=1)
    in_y = (deg[:, y_vars] > 0).any(axis=1)
    return inside, in_x, in_y


def mutual_info_approx(model: JointDensityModel, x_vars, y_vars=None) -> float:
    """Sum of squared coefficients nonzero in both blocks.

    ``y_vars`` defaults to every variable not in ``x_vars``; indices touching
    variables outside both blocks are ignored (they are marginalized out).
    """
    inside, in_x, in_y = _blocks(model, x_vars, y_vars)
    return float(np.sum(model.coeffs[inside & in_x & in_y] ** 2))


def joint_entropy_approx(model: JointDensityModel, x_vars, y_vars=None) -> float:
    inside, in_x, in_y = _blocks(model, x_vars, y_vars)
    return -float(np.sum(model.coeffs[inside & (in_x | in_y)] ** 2))


def conditional_entropy_approx(model: JointDensityModel, x_vars, y_vars=None) -> float:
    """``H(X|Y) ~ -sum_{j_x in B_X+, j_y in B_Y} a^2``."""
    inside, in_x, _ = _blocks(model, x_vars, y_vars)
    return -float(np.sum(model.coeffs[inside & in_x] ** 2))


def mixed_moment_stats(x_features: FeatureMatrix, y_features: FeatureMatrix):
    """Mean and unbiased variance of every product sequence ``f_j(x^i) f_k(y^i)``.

    Returns two ``(|B_X+|, |B_Y+|)`` arrays; costs ``O(n |B_X+| |B_Y+|)``.
    """
    if x_features.n != y_features.n:
        raise ValueError("feature matrices must have the same number of rows")
    n = x_features.n
    if n < 2:
        raise ValueError("need at least 2 rows")
    fx = x_features.raw()
    fy = y_features.raw()
    mean = fx.T @ fy / n
    second = (fx ** 2).T @ (fy ** 2) / n
    var = (second - mean ** 2) * n / (n - 1)
    return mean, np.clip(var, 0.0, None)


def mutual_info_features(x_features: FeatureMatrix, y_features: FeatureMatrix) -> float:
    """Uncorrected estimate ``||X^T Y||_F^2`` without any n x n product."""
    if x_features.n != y_features.n:
        raise ValueError("feature matrices must have the same number of rows")
    theta = x_features.values.T @ y_features.values
    return float(np.sum(theta ** 2))


def mutual_info_corrected(x_features: FeatureMatrix, y_features: FeatureMatrix) -> float:
    """``sum_{j,k} mean(f_j f_k)^2 - var(f_j f_k) / n``; may be negative."""
    mean, var = mixed_moment_stats(x_features, y_features)
    return float(np.sum(mean ** 2 - var / x_features.n))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """``C = X X^T`` over the rows of a feature matrix."""

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def trace_with(self, other: "KernelMatrix") -> float:
        """``Tr(C_self C_other)``."""
        if other.n != self.n:
            raise ValueError("kernel sizes differ")
        # both symmetric: Tr(AB) = sum(A * B)
        return float(np.sum(self.values * other.values))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)


def kernel(x_features: FeatureMatrix) -> KernelMatrix:
    X = x_features.values
    C = X @ X.T
    C = 0.5 * (C + C.T)
    C.flags.writeable = False
    return KernelMatrix(C)


def kernel_trace(cx: KernelMatrix, cy: KernelMatrix) -> float:
    return cx.trace_with(cy)


@dataclass(frozen=True, eq=False)
class IndependenceReport:
    """Normalized mixed-moment statistics and the extreme-value p-value."""

    zscores: np.ndarray
    min_z: float
    max_z: float
    p_value: float
    p_min: float
    p_max: float
    mc_samples: int
    x_indices: tuple
    y_indices: tuple

    def to_dict(self) -> dict:
        return {
            "zscores": self.zscores.tolist(),
            "min_z": self.min_z,
            "max_z": self.max_z,
            "p_value": self.p_value,
            "p_min": self.p_min,
            "p_max": self.p_max,
            "mc_samples": self.mc_samples,
            "x_indices": [list(j) for j in self.x_indices],
            "y_indices": [list(j) for j in self.y_indices],
        }


MIN_TEST_ROWS = 30
MIN_MC_SAMPLES = 10_000


@lru_cache(maxsize=32)
def extreme_value_reference(n_stats: int, mc_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted Monte Carlo minima and maxima of ``n_stats`` i.i.d. N(0, 1) draws."""
    rng = np.random.default_rng(seed)
    mins = np.empty(mc_samples)
    maxs = np.empty(mc_samples)
    chunk = max(1, 2_000_000 // n_stats)
    for start in range(0, mc_samples, chunk):
        stop = min(mc_samples, start + chunk)
        z = rng.standard_normal((stop - start, n_stats))
        mins[start:stop] = z.min(axis=1)
        maxs[start:stop] = z.max(axis=1)
    mins.sort()
    maxs.sort()
    mins.flags.writeable = False
    maxs.flags.writeable = False
    return mins, maxs


def independence_test(x, y, degree: int = 4, mc_samples: int = 100_000, seed: int = 0,
                      scheme: str = "full") -> IndependenceReport:
    """Test independence of ``x`` and ``y`` from their normalized mixed moments.

    Each column is rank-normalized, and every pair of nontrivial features
    gives ``z_jk = sqrt(n) mean(f_j f_k) / std(f_j f_k)``, approximately
    N(0, 1) under independence.  The lowest and highest ``z`` are compared
    with Monte Carlo distributions of the min and max of as many i.i.d.
    standard normals; the p-value is twice the smaller tail probability
    (Bonferroni over the two statistics), capped at 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    y = y.reshape(-1, 1) if y.ndim == 1 else y
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y must have the same number of rows")
    if n < MIN_TEST_ROWS:
        raise ValueError(f"independence test needs at least {MIN_TEST_ROWS} rows, got {n}")
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be >= {MIN_MC_SAMPLES}")
    bx = make_basis(x.shape[1], degree, scheme)
    by = make_basis(y.shape[1], degree, scheme)
    fx = features(bx, rank_normalize(x))
    fy = features(by, rank_normalize(y))
    mean, var = mixed_moment_stats(fx, fy)
    std = np.sqrt(var)
    z = np.divide(np.sqrt(n) * mean, std, out=np.zeros_like(mean), where=std > 0)
    mins, maxs = extreme_value_reference(z.size, int(mc_samples), int(seed))
    zmin = float(z.min())
    zmax = float(z.max())
    p_min = (np.searchsorted(mins, zmin, side="right") + 1) / (mc_samples + 1)
    p_max = (mc_samples - np.searchsorted(maxs, zmax, side="left") + 1) / (mc_samples + 1)
    p_value = min(1.0, 2.0 * min(p_min, p_max))
    return IndependenceReport(z, zmin, zmax, float(p_value), float(p_min), float(p_max), int(mc_samples),
                              bx.nontrivial, by.nontrivial)
