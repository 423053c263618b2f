"""Dataset handling and least-squares machinery for scalar linear regression.

The model is ``Y_t = phi_t' theta + N_t`` with deterministic regressors
``phi_t`` in R^d.  Everything downstream consumes the quantities assembled
here: the averaged outer product ``R = (1/n) sum phi_t phi_t'``, its lower
Cholesky factor, the least-squares estimate and the residual variance
estimate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import BadConfig, DegenerateSample, NumericalFailure, SingularDesign

__all__ = [
    "Dataset",
    "RegressionSummary",
    "outer_product_matrix",
    "factor_rn",
    "least_squares",
    "residuals",
    "noise_variance_estimate",
    "summarize",
    "load_dataset_csv",
    "save_dataset_csv",
    "load_dataset_json",
    "save_dataset_json",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """A finite regression sample.

    Attributes
    ----------
    regressors : (n, d) array
        One regressor row per time step.
    outputs : (n,) array
        The scalar outputs, one per row of ``regressors``.
    """

    regressors: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.regressors, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        n, d = phi.shape
        if y.shape[0] != n:
            raise BadConfig(f"{n} regressor rows but {y.shape[0]} outputs")
        if d < 1 or n < d:
            raise BadConfig(f"need n >= d >= 1, got n={n}, d={d}")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
            raise BadConfig("dataset contains non-finite values")
        object.__setattr__(self, "regressors", phi)
        object.__setattr__(self, "outputs", y)

    @property
    def n(self) -> int:
        return self.regressors.shape[0]

    @property
    def d(self) -> int:
        return self.regressors.shape[1]


@dataclass(frozen=True, eq=False)
class RegressionSummary:
    """Least-squares quantities shared by every region construction.

    ``r_n_half`` is the lower Cholesky factor, so
    ``r_n_half @ r_n_half.T == r_n``.  ``sigma2_hat`` is NaN when ``n == d``
    leaves no residual degrees of freedom.
    """

    r_n: np.ndarray
    r_n_half: np.ndarray
    theta_hat: np.ndarray
    sigma2_hat: float

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]


def outer_product_matrix(data: Dataset) -> np.ndarray:
    """Averaged regressor outer product ``(1/n) sum phi_t phi_t'``.

    Symmetric by construction; singularity is reported by the factorization,
    not here.
    """
    phi = data.regressors
    return phi.T @ phi / data.n


def factor_rn(r_n: np.ndarray, tol_pd: float | None = None) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == r_n``.

    Raises ``SingularDesign`` when a pivot drops below ``tol_pd`` (default
    ``1e-10 * trace(r_n) / d``), which is how a violated invertibility
    assumption surfaces.  No regularization is applied: silently inflating a
    singular design would invalidate the exactness guarantees downstream.
    """
    r = np.asarray(r_n, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise BadConfig("factor_rn expects a square matrix")
    d = r.shape[0]
    scale = float(np.max(np.abs(r))) if r.size else 0.0
    if scale and float(np.max(np.abs(r - r.T))) > 1e-8 * scale:
        raise BadConfig("factor_rn expects a symmetric matrix")
    if tol_pd is None:
        tol_pd = 1e-10 * float(np.trace(r)) / d
    lower = np.zeros_like(r)
    for k in range(d):
        pivot = r[k, k] - lower[k, :k] @ lower[k, :k]
        if pivot <= tol_pd:
            raise SingularDesign(
                f"Cholesky pivot {pivot:.3e} at column {k} is below "
                f"tolerance {tol_pd:.3e}; regressor outer product is singular"
            )
        lower[k, k] = math.sqrt(pivot)
        if k + 1 < d:
            lower[k + 1 :, k] = (r[k + 1 :, k] - lower[k + 1 :, :k] @ lower[k, :k]) / lower[k, k]
    return lower


def least_squares(data: Dataset) -> np.ndarray:
    """Least-squares estimate, solved through the Cholesky factor.

    No explicit matrix inverse is formed; raises ``SingularDesign`` when the
    design is rank deficient.
    """
    lower = factor_rn(outer_product_matrix(data))
    return _solve_normal_equation(data, lower)


def _solve_normal_equation(data: Dataset, lower: np.ndarray) -> np.ndarray:
    rhs = data.regressors.T @ data.outputs / data.n
    z = solve_triangular(lower, rhs, lower=True, check_finite=False)
    return solve_triangular(lower.T, z, lower=False, check_finite=False)


def residuals(data: Dataset, theta: np.ndarray) -> np.ndarray:
    """Prediction errors ``Y_t - phi_t' theta``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != data.d:
        raise BadConfig(f"theta has length {theta.shape[0]}, expected {data.d}")
    return data.outputs - data.regressors @ theta


def noise_variance_estimate(data: Dataset, theta_hat: np.ndarray) -> float:
    """Residual variance ``(1/(n-d)) sum eps_t(theta_hat)^2``."""
    if data.n <= data.d:
        raise DegenerateSample(f"need n > d for a variance estimate, got n={data.n}, d={data.d}")
    eps = residuals(data, theta_hat)
    return float(eps @ eps / (data.n - data.d))


def summarize(data: Dataset) -> RegressionSummary:
    """Compute and validate all shared least-squares quantities at once."""
    r_n = outer_product_matrix(data)
    lower = factor_rn(r_n)
    rebuilt = lower @ lower.T
    if float(np.linalg.norm(rebuilt - r_n)) > 1e-10 * max(1.0, float(np.linalg.norm(r_n))):
        raise NumericalFailure("Cholesky factor does not reproduce the outer product")
    theta_hat = _solve_normal_equation(data, lower)
    # Normal-equation residual check; scale covers both terms of the equation.
    grad = data.regressors.T @ residuals(data, theta_hat)
    scale = float(np.linalg.norm(data.regressors.T @ data.outputs))
    scale += data.n * float(np.linalg.norm(r_n)) * float(np.linalg.norm(theta_hat))
    if float(np.linalg.norm(grad)) > 1e-8 * max(1.0, scale):
        raise NumericalFailure("normal-equation residual is too large")
    sigma2 = noise_variance_estimate(data, theta_hat) if data.n > data.d else math.nan
    return RegressionSummary(r_n=r_n, r_n_half=lower, theta_hat=theta_hat, sigma2_hat=sigma2)


# ---------------------------------------------------------------------------
# Dataset file formats: CSV with header phi_1,...,phi_d,y and a JSON variant.


def save_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"phi_{j + 1}" for j in range(data.d)] + ["y"])
        for row, y in zip(data.regressors, data.outputs):
            writer.writerow([repr(v) for v in row] + [repr(y)])


def load_dataset_csv(path) -> Dataset:
    """Read a ``phi_1,...,phi_d,y`` table; errors carry the offending line number."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise BadConfig(f"{path}:1: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"phi_{j + 1}" for j in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise BadConfig(f"{path}:1: expected header phi_1,...,phi_d,y, got {','.join(header)}")
        rows, outputs = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise BadConfig(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise BadConfig(f"{path}:{lineno}: {exc}") from None
            rows.append(values[:d])
            outputs.append(values[d])
    if not rows:
        raise BadConfig(f"{path}:2: no data rows")
    return Dataset(np.asarray(rows), np.asarray(outputs))


def save_dataset_json(data: Dataset, path) -> None:
    doc = {"regressors": data.regressors.tolist(), "outputs": data.outputs.tolist()}
    with open(path, "w") as handle:
        json.dump(doc, handle)


def load_dataset_json(path) -> Dataset:
    with open(path) as handle:
        doc = json.load(handle)
    try:
        return Dataset(np.asarray(doc["regressors"], dtype=float), np.asarray(doc["outputs"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise BadConfig(f"{path}: invalid dataset document: {exc}") from None
