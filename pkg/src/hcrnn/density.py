"""HCR joint density model ``rho(x) = sum_j a_j f_j(x)`` on [0, 1]^d."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, basis_from_dict, gauss_legendre, make_basis, poly_table
from .normalize import Normalizer

FORMAT_VERSION = 1
QUADRATURE_NODES = 64
MAX_QUADRATURE_DIM = 3


@dataclass(frozen=True, eq=False)
class JointDensityModel:
    """Coefficients ``a_j`` aligned with ``basis.indices``.

    ``counts`` holds the number of rows each coefficient was averaged over
    (equal to ``sample_count`` unless estimated from incomplete data) and
    ``flagged`` marks coefficients that had no eligible rows.
    """

    basis: BasisSet
    coeffs: np.ndarray
    sample_count: int = 0
    counts: np.ndarray | None = None
    flagged: np.ndarray | None = None
    normalizer: Normalizer | None = field(default=None, compare=False)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).ravel()
        if coeffs.shape[0] != len(self.basis):
            raise ValueError(f"expected {len(self.basis)} coefficients, got {coeffs.shape[0]}")
        if coeffs[0] != 1.0:
            raise ValueError("normalization coefficient a_0 must equal 1")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)
        for name in ("counts", "flagged"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=int if name == "counts" else bool).ravel()
                if arr.shape != coeffs.shape:
                    raise ValueError(f"{name} must align with coefficients")
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        if self.normalizer is not None and self.normalizer.dim != self.basis.dim:
            raise ValueError("normalizer dimension does not match the basis")

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def max_degree(self) -> int:
        return self.basis.max_degree

    def coefficient(self, j) -> float:
        return float(self.coeffs[self.basis.position(j)])

    def with_coeffs(self, coeffs, **changes) -> "JointDensityModel":
        kwargs = dict(
            basis=self.basis,
            coeffs=coeffs,
            sample_count=self.sample_count,
            counts=self.counts,
            flagged=self.flagged,
            normalizer=self.normalizer,
        )
        kwargs.update(changes)
        return JointDensityModel(**kwargs)

    def __call__(self, x) -> np.ndarray:
        """Raw (uncalibrated) density at one point or each row of ``x``."""
        return self.basis.evaluate(x) @ self.coeffs

    def to_dict(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "max_degree": self.max_degree,
            "scheme": self.basis.scheme,
            "indices": [list(j) for j in self.basis.indices],
            "coeffs": self.coeffs.tolist(),
            "sample_count": int(self.sample_count),
            "normalizers": None if self.normalizer is None else self.normalizer.to_list(),
        }
        if self.counts is not None:
            doc["counts"] = self.counts.tolist()
        if self.flagged is not None:
            doc["flagged"] = self.flagged.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "JointDensityModel":
        version = doc.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version}")
        basis = basis_from_dict(doc)
        normalizer = doc.get("normalizers")
        return cls(
            basis,
            np.asarray(doc["coeffs"], dtype=float),
            int(doc.get("sample_count", 0)),
            doc.get("counts"),
            doc.get("flagged"),
            None if normalizer is None else Normalizer.from_list(normalizer),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "JointDensityModel":
        return cls.from_dict(json.loads(text))


def uniform_model(basis: BasisSet) -> JointDensityModel:
    coeffs = np.zeros(len(basis))
    coeffs[0] = 1.0
    return JointDensityModel(basis, coeffs)


def _as_points(data, dim: int) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1) if dim == 1 else data.reshape(1, -1)
    if data.ndim != 2 or data.shape[1] != dim:
        raise ValueError(f"expected an (n, {dim}) matrix, got shape {data.shape}")
    return data


def estimate(basis: BasisSet, data, normalizer: Normalizer | None = None) -> JointDensityModel:
    """Static estimation: ``a_j`` is the sample mean of ``f_j`` over the rows."""
    data = _as_points(data, basis.dim)
    n = data.shape[0]
    if n == 0:
        raise ValueError("cannot estimate a model from an empty dataset")
    coeffs = basis.evaluate(data).mean(axis=0)
    coeffs[0] = 1.0
    return JointDensityModel(basis, coeffs, n, normalizer=normalizer)


def update_ema(model: JointDensityModel, x, eta: float) -> JointDensityModel:
    """One exponential-moving-average step ``a_j <- (1-eta) a_j + eta f_j(x)``."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie strictly inside (0, 1)")
    fx = model.basis.evaluate(_as_points(x, model.dim))[0]
    coeffs = (1.0 - eta) * model.coeffs + eta * fx
    coeffs[0] = 1.0
    return model.with_coeffs(coeffs, sample_count=model.sample_count + 1)


@dataclass(frozen=True)
class CalibrationSpec:
    """Positive transform applied to the raw density.

    ``kind`` is ``"none"``, ``"clamp"`` (``max(rho, floor)``) or
    ``"softplus"`` (``log(1 + exp(nu * rho)) / nu``).  With ``normalize`` the
    result is divided by its integral over the unit cube.
    """

    kind: str = "none"
    floor: float = 0.1
    nu: float = 1.0
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in ("none", "clamp", "softplus"):
            raise ValueError(f"unknown calibration kind {self.kind!r}")
        if not self.floor > 0:
            raise ValueError("calibration floor must be positive")
        if not self.nu > 0:
            raise ValueError("softplus nu must be positive")

    def apply(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "clamp":
            return np.maximum(rho, self.floor)
        if self.kind == "softplus":
            return np.logaddexp(0.0, self.nu * rho) / self.nu
        return rho


NO_CALIBRATION = CalibrationSpec()
LIKELIHOOD_CALIBRATION = CalibrationSpec("clamp", floor=0.1, normalize=True)


def _grid(dim: int, n_nodes: int = QUADRATURE_NODES) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = gauss_legendre(n_nodes)
    pts = np.stack(np.meshgrid(*([nodes] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    w = np.ones(1)
    for _ in range(dim):
        w = np.multiply.outer(w, weights).ravel()
    return pts, w


def integrate(model: JointDensityModel, func) -> float:
    """Tensor-grid Gauss-Legendre integral of ``func(rho(x))`` over [0,1]^d."""
    if model.dim > MAX_QUADRATURE_DIM:
        raise NotImplementedError(
            f"numerical integration is supported for d <= {MAX_QUADRATURE_DIM}, got d={model.dim}"
        )
    pts, w = _grid(model.dim)
    return float(w @ func(model(pts)))


def calibration_integral(model: JointDensityModel, cal: CalibrationSpec) -> float:
    """``int phi(rho)`` over the unit cube.

    Evaluated as ``1 + int (phi(rho) - rho)`` because the linear model
    integrates to exactly 1; this keeps the trivial model exactly normalized.
    """
    if cal.kind == "none":
        return 1.0
    return 1.0 + integrate(model, lambda rho: cal.apply(rho) - rho)


def density_at(model: JointDensityModel, x, cal: CalibrationSpec = NO_CALIBRATION):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and model.dim > 1 or x.ndim == 0
    pts = _as_points(x.reshape(1, 1) if x.ndim == 0 else x, model.dim)
    if cal.normalize and model.dim > MAX_QUADRATURE_DIM:
        raise NotImplementedError("normalized calibration is only supported for d <= 3")
    rho = cal.apply(model(pts))
    if cal.normalize:
        rho = rho / calibration_integral(model, cal)
    return float(rho[0]) if single else rho


def log_likelihood(model: JointDensityModel, data, cal: CalibrationSpec = LIKELIHOOD_CALIBRATION) -> float:
    """Mean base-2 log of the calibrated density over the rows of ``data``."""
    if cal.kind == "none":
        raise ValueError("log-likelihood needs a positive calibration (clamp or softplus)")
    rho = density_at(model, _as_points(data, model.dim), cal)
    if np.any(rho <= 0):
        raise FloatingPointError("calibrated density is not positive")
    return float(np.mean(np.log2(rho)))


def marginalize(model: JointDensityModel, keep) -> JointDensityModel:
    """Model over the variables in ``keep`` (in the given order).

    Keeps exactly the coefficients with zero degree on every dropped variable.
    """
    keep = [int(k) for k in keep]
    if not keep:
        raise ValueError("keep must name at least one variable")
    if len(set(keep)) != len(keep) or min(keep) < 0 or max(keep) >= model.dim:
        raise ValueError(f"invalid variable subset {keep} for a {model.dim}-variable model")
    dropped = [k for k in range(model.dim) if k not in keep]
    deg = model.basis.degrees
    rows = np.flatnonzero((deg[:, dropped] == 0).all(axis=1)) if dropped else np.arange(len(deg))
    projected = [tuple(int(v) for v in deg[r, keep]) for r in rows]
    order = sorted(range(len(rows)), key=lambda i: projected[i])
    rows = rows[order]
    basis = BasisSet(len(keep), model.max_degree, tuple(projected[i] for i in order), model.basis.scheme)
    return JointDensityModel(
        basis,
        model.coeffs[rows],
        model.sample_count,
        None if model.counts is None else model.counts[rows],
        None if model.flagged is None else model.flagged[rows],
        None if model.normalizer is None else model.normalizer.subset(keep),
    )


def estimate_missing(basis: BasisSet, data, missing=None) -> JointDensityModel:
    """Estimate from incomplete rows.

    Missing cells are NaN in ``data`` or True in the boolean ``missing`` mask.
    Each ``a_j`` is averaged over the rows where every variable with
    ``j_i >= 1`` is present; coefficients with no such row are set to 0 and
    flagged.
    """
    data = np.array(_as_points(data, basis.dim), dtype=float)
    mask = np.isnan(data) if missing is None else np.asarray(missing, dtype=bool) | np.isnan(data)
    if mask.shape != data.shape:
        raise ValueError("missing mask must match the data shape")
    if data.shape[0] == 0:
        raise ValueError("cannot estimate a model from an empty dataset")
    if np.any(mask.all(axis=1)):
        raise ValueError("every row needs at least one present value")
    data[mask] = 0.5  # placeholder, excluded below
    vals = basis.evaluate(data)
    deg = basis.degrees
    present = (~mask).astype(float)
    # eligible[i, j] = all variables used by index j are present in row i
    eligible = np.ones(vals.shape, dtype=bool)
    for k in range(basis.dim):
        uses = deg[:, k] > 0
        eligible[:, uses] &= present[:, [k]].astype(bool)
    counts = eligible.sum(axis=0)
    sums = np.where(eligible, vals, 0.0).sum(axis=0)
    flagged = counts == 0
    coeffs = np.divide(sums, counts, out=np.zeros_like(sums), where=~flagged)
    coeffs[0] = 1.0
    flagged[0] = False
    return JointDensityModel(basis, coeffs, data.shape[0], counts, flagged)


@dataclass(frozen=True, eq=False)
class BasisRotation:
    """Optimized univariate basis ``g_i = sum_p u_ip f_p`` for one variable.

    ``matrix`` has orthonormal rows ``u_i`` over degrees ``1..m``; ``sigma``
    holds the matching eigenvalues of ``M M^T`` in descending order.
    ``columns`` lists the remaining-variable index patterns of ``M``.
    """

    variable: int
    matrix: np.ndarray
    sigma: np.ndarray
    columns: tuple[tuple[int, ...], ...]

    @property
    def rank(self) -> int:
        return self.matrix.shape[0]

    def basis_values(self, x) -> np.ndarray:
        """``g_1..g_rank`` at the points ``x`` (shape ``x.shape + (rank,)``)."""
        degree = self.matrix.shape[1]
        return poly_table(x, degree)[..., 1:] @ self.matrix.T


def coefficient_matrix(model: JointDensityModel, variable: int):
    """``M[p - 1, c] = a_j`` with ``j_variable = p >= 1`` and ``c`` the rest of ``j``."""
    if not 0 <= variable < model.dim:
        raise ValueError(f"variable {variable} out of range")
    deg = model.basis.degrees
    rest = [k for k in range(model.dim) if k != variable]
    rows = np.flatnonzero(deg[:, variable] > 0)
    cols = sorted({tuple(int(v) for v in deg[r, rest]) for r in rows})
    col_pos = {c: i for i, c in enumerate(cols)}
    M = np.zeros((model.max_degree, len(cols)))
    for r in rows:
        M[deg[r, variable] - 1, col_pos[tuple(int(v) for v in deg[r, rest])]] = model.coeffs[r]
    return M, tuple(cols)


def optimize_basis(model: JointDensityModel, variable: int, rank: int) -> BasisRotation:
    """Dominant eigenvectors of ``M M^T`` for the chosen variable's slot."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > model.max_degree:
        raise ValueError(f"rank must be <= max_degree ({model.max_degree})")
    M, cols = coefficient_matrix(model, variable)
    evals, evecs = np.linalg.eigh(M @ M.T)
    order = np.argsort(evals)[::-1][:rank]
    sigma = np.clip(evals[order], 0.0, None)
    U = evecs[:, order].T.copy()
    U.flags.writeable = False
    sigma.flags.writeable = False
    return BasisRotation(variable, U, sigma, cols)


def rotate_coefficients(model: JointDensityModel, rot: BasisRotation) -> np.ndarray:
    """Coefficients ``U M`` of the model in the rotated basis (``rank x columns``)."""
    M, cols = coefficient_matrix(model, rot.variable)
    if cols != rot.columns:
        raise ValueError("rotation was computed for a different coefficient layout")
    return rot.matrix @ M


def reconstruct(model: JointDensityModel, rot: BasisRotation) -> JointDensityModel:
    """Model with ``M`` replaced by its projection ``U^T U M`` onto the rotated basis.

    For a full-rank rotation this reproduces the original coefficients.
    """
    M, cols = coefficient_matrix(model, rot.variable)
    approx = rot.matrix.T @ (rot.matrix @ M)
    deg = model.basis.degrees
    rest = [k for k in range(model.dim) if k != rot.variable]
    col_pos = {c: i for i, c in enumerate(cols)}
    coeffs = model.coeffs.copy()
    for r in np.flatnonzero(deg[:, rot.variable] > 0):
        coeffs[r] = approx[deg[r, rot.variable] - 1, col_pos[tuple(int(v) for v in deg[r, rest])]]
    return model.with_coeffs(coeffs)


def fit(data, max_degree: int, scheme: str = "full", normalizer: Normalizer | None = None) -> JointDensityModel:
    """Build the basis for ``data``'s width and estimate a model in one step."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    return estimate(make_basis(data.shape[1], max_degree, scheme), data, normalizer)
