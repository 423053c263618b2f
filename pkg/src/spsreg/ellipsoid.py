"""Ellipsoidal over-bound of the sign-perturbed-sums region.

For the Euclidean norm, ``||S_0(theta)||^2`` equals the quadratic form
``(theta - theta_hat)' R (theta - theta_hat)``, so replacing each comparison
``||S_0||^2 <= ||S_i||^2`` by its largest admissible value yields a superset
region ``{theta : (theta - theta_hat)' R (theta - theta_hat) <= r}`` with
``r`` the q-th largest of the per-comparison suprema.  Each supremum is the
value of a quadratically-constrained quadratic maximization whose dual
collapses, in the eigenbasis of the constraint Hessian, to a convex
one-dimensional minimization solved here by bracketing plus golden-section
shrinkage.  Strong duality makes the two values equal.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import SpsSetup, _perturbation_tables
from .errors import BadConfig, NormUnsupported, NumericalFailure
from .regression import Dataset, RegressionSummary, factor_rn

__all__ = [
    "Ellipsoid",
    "PerturbationQuadratic",
    "build_quadratic",
    "solve_dual",
    "outer_approximation",
    "ellipsoid_to_json",
    "ellipsoid_from_json",
    "save_ellipsoid_json",
    "load_ellipsoid_json",
    "save_ellipse_boundary_csv",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_MAX_BRACKET = 130  # geometric ladder 1e-9 * 2^k covers ~38 decades
_MAX_SHRINK = 130


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Region ``(x - center)' shape (x - center) <= radius``.

    ``radius`` may be ``inf``, in which case the region is all of R^d.  The
    same container serves the over-bound and the chi-squared / F comparator
    regions, which share center and shape and differ only in radius.
    """

    center: np.ndarray
    shape: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        shape = np.asarray(self.shape, dtype=float)
        d = center.shape[0]
        if shape.shape != (d, d):
            raise BadConfig(f"shape must be {d}x{d}, got {shape.shape}")
        if not self.radius >= 0.0:
            raise BadConfig(f"radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.center.shape[0]

    def quadratic_form(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        return np.einsum("kd,de,ke->k", pts, self.shape, pts)

    def contains(self, points) -> np.ndarray:
        """Membership of one point (returns bool) or of an (k, d) batch."""
        single = np.asarray(points).ndim == 1
        inside = self.quadratic_form(points) <= self.radius
        return bool(inside[0]) if single else inside

    def radial_extent(self, direction) -> float:
        """Distance from the center to the boundary along ``direction``."""
        u = np.asarray(direction, dtype=float).reshape(-1)
        return math.sqrt(self.radius / float(u @ self.shape @ u))

    def bounding_box(self) -> np.ndarray:
        """Axis-aligned box [lo, hi] per coordinate, shape (d, 2)."""
        inv_cols = solve_triangular(factor_rn(self.shape), np.eye(self.d), lower=True, check_finite=False)
        half = np.sqrt(self.radius * np.einsum("ij,ij->j", inv_cols, inv_cols))
        return np.stack([self.center - half, self.center + half], axis=1)

    def boundary_points(self, num: int = 360) -> np.ndarray:
        """Parametric boundary sweep for d = 2, ``num`` points."""
        if self.d != 2:
            raise BadConfig("boundary sweep is only defined for d = 2")
        if not math.isfinite(self.radius):
            raise BadConfig("boundary sweep needs a finite radius")
        lower = factor_rn(self.shape)
        angles = np.linspace(0.0, 2.0 * math.pi, num, endpoint=False)
        circle = np.stack([np.cos(angles), np.sin(angles)])
        return self.center + math.sqrt(self.radius) * solve_triangular(
            lower.T, circle, lower=False, check_finite=False
        ).T


@dataclass(frozen=True, eq=False)
class PerturbationQuadratic:
    """Quadratic data of one reference-vs-perturbed comparison.

    In the whitened variable ``z = R^{T/2}(theta - theta_hat)`` the comparison
    ``||S_0||^2 <= ||S_i||^2`` reads ``z'Az + 2 z'b + c <= 0``; ``q_mat`` and
    ``psi`` are the sign-weighted moment matrices it is built from.  ``a_mat``
    is positive semidefinite by construction (up to rounding).
    """

    q_mat: np.ndarray
    psi: np.ndarray
    a_mat: np.ndarray
    b_vec: np.ndarray
    c_scalar: float


def build_quadratic(setup: SpsSetup, summary: RegressionSummary, data: Dataset, i: int) -> PerturbationQuadratic:
    """Quadratic comparison data for perturbation row ``i`` (1-based).

    All matrix inverses are triangular solves against the Cholesky factor:
    with ``G = L^{-1} Q L^{-T}`` and ``e = L^{-1}(psi - Q theta_hat)`` the
    constraint coefficients are ``A = I - G^2``, ``b = G e``, ``c = -e'e``.
    """
    if not 1 <= i <= setup.m - 1:
        raise BadConfig(f"perturbation index must be in 1..{setup.m - 1}, got {i}")
    phi, y, n = data.regressors, data.outputs, data.n
    alpha = setup.signs[i - 1]
    q_mat = (phi.T * alpha) @ phi / n
    psi = phi.T @ (alpha * y) / n
    lower = summary.r_n_half
    half = solve_triangular(lower, q_mat, lower=True, check_finite=False)
    g = solve_triangular(lower, half.T, lower=True, check_finite=False).T
    g = 0.5 * (g + g.T)
    e = solve_triangular(lower, psi - q_mat @ summary.theta_hat, lower=True, check_finite=False)
    a_mat = np.eye(data.d) - g @ g
    return PerturbationQuadratic(
        q_mat=q_mat,
        psi=psi,
        a_mat=0.5 * (a_mat + a_mat.T),
        b_vec=g @ e,
        c_scalar=-float(e @ e),
    )


def _dual_values(a_mats: np.ndarray, b_vecs: np.ndarray, c_vals: np.ndarray, tol: float) -> np.ndarray:
    """Dual optimum per instance; +inf where the constraint Hessian has a
    (numerically) null direction, since the matched region is then unbounded.

    In the eigenbasis of A the dual value is
    ``min_{lam > 1/lam_min(A)} lam^2 sum_j b_j^2/(lam a_j - 1) - lam c``,
    a convex function minimized by geometric bracketing away from the pole
    followed by interval shrinkage.
    """
    a_sym = 0.5 * (a_mats + a_mats.transpose(0, 2, 1))
    evals, vecs = np.linalg.eigh(a_sym)
    b_rot2 = np.einsum("mdk,md->mk", vecs, b_vecs) ** 2
    lam_min = evals[:, 0]
    tol_eig = 1e-9 * np.maximum(1.0, evals[:, -1])
    out = np.full(a_mats.shape[0], np.inf)
    rows = np.where(lam_min > tol_eig)[0]
    if rows.size == 0:
        return out

    ev = evals[rows]
    b2 = b_rot2[rows]
    c = np.asarray(c_vals, dtype=float)[rows]
    lam_lo = 1.0 / lam_min[rows]

    def gamma(lam: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            denom = lam[:, None] * ev - 1.0
            vals = lam * lam * np.sum(b2 / denom, axis=1) - lam * c
        vals[np.min(denom, axis=1) <= 0.0] = np.inf
        vals[~np.isfinite(vals)] = np.inf
        return vals

    # Bracket: march lam_lo + base * 2^k until gamma turns upward (convexity
    # makes the first non-decrease a valid bracket).
    base = lam_lo * 1e-9
    prev = gamma(lam_lo + base)
    best = prev.copy()
    lo_off = np.zeros(rows.size)
    hi_off = np.full(rows.size, np.nan)
    off_prev = base.copy()
    off_prev2 = np.zeros(rows.size)
    open_rows = np.ones(rows.size, dtype=bool)
    for k in range(1, _MAX_BRACKET + 1):
        idx = np.where(open_rows)[0]
        off = base[idx] * (2.0 ** k)
        vals = gamma(lam_lo[idx] + off)
        best[idx] = np.minimum(best[idx], vals)
        turned = vals >= prev[idx]
        done = idx[turned]
        hi_off[done] = off[turned]
        lo_off[done] = off_prev2[done]
        open_rows[done] = False
        cont = idx[~turned]
        prev[cont] = vals[~turned]
        off_prev2[cont] = off_prev[cont]
        off_prev[cont] = off[~turned]
        if not open_rows.any():
            break
    if open_rows.any():
        raise NumericalFailure("failed to bracket the dual minimum")

    # Interval shrinkage at the golden ratio; track the best value seen.
    a_end = lam_lo + lo_off
    b_end = lam_lo + hi_off
    width_target = max(1e-13, 1e-3 * tol)
    for _ in range(_MAX_SHRINK):
        width = b_end - a_end
        if np.all(width <= width_target * np.maximum(b_end, 1.0)):
            break
        x1 = b_end - _GOLDEN * width
        x2 = a_end + _GOLDEN * width
        f1 = gamma(x1)
        f2 = gamma(x2)
        best = np.minimum(best, np.minimum(f1, f2))
        shrink_right = f1 <= f2
        b_end = np.where(shrink_right, x2, b_end)
        a_end = np.where(shrink_right, a_end, x1)
    final = gamma(0.5 * (a_end + b_end))
    best = np.minimum(best, final)
    out[rows] = np.maximum(best, 0.0)
    return out


def solve_dual(pq: PerturbationQuadratic, tol: float = 1e-9) -> float:
    """Supremum of ``||z||^2`` over one comparison constraint via its dual.

    Returns ``inf`` when the constraint leaves an escaping direction (for
    example when a sign row is constant, making the comparison vacuous); the
    over-bound stays valid because it only ever grows.
    """
    return float(
        _dual_values(
            np.asarray(pq.a_mat, dtype=float)[None],
            np.asarray(pq.b_vec, dtype=float)[None],
            np.asarray([pq.c_scalar], dtype=float),
            tol,
        )[0]
    )


def outer_approximation(setup: SpsSetup, summary: RegressionSummary, data: Dataset, tol: float = 1e-9) -> Ellipsoid:
    """Guaranteed ellipsoidal superset of the confidence region.

    Center and shape match the asymptotic comparator ellipsoid; the radius is
    the q-th largest of the per-comparison dual values (``inf`` if any of the
    q largest is unbounded).  Only defined for the Euclidean norm, which is
    what makes ``||S_0||^2`` a quadratic form.
    """
    if setup.norm != "l2":
        raise NormUnsupported(f"outer approximation requires the l2 norm, setup uses {setup.norm!r}")
    psi, q_all = _perturbation_tables(setup, data)
    m, d = psi.shape
    lower = summary.r_n_half
    qs = q_all[1:]

    def left_solve(mats: np.ndarray) -> np.ndarray:
        flat = mats.transpose(1, 0, 2).reshape(d, -1)
        solved = solve_triangular(lower, flat, lower=True, check_finite=False)
        return solved.reshape(d, m - 1, d).transpose(1, 0, 2)

    half = left_solve(qs)  # L^{-1} Q_i
    g = left_solve(half.transpose(0, 2, 1)).transpose(0, 2, 1)  # (L^{-1} (L^{-1}Q)')' = L^{-1} Q L^{-T}
    g = 0.5 * (g + g.transpose(0, 2, 1))
    rhs = psi[1:] - np.einsum("mij,j->mi", qs, summary.theta_hat)
    e = solve_triangular(lower, rhs.T, lower=True, check_finite=False).T
    a_mats = np.eye(d) - g @ g
    a_mats = 0.5 * (a_mats + a_mats.transpose(0, 2, 1))
    b_vecs = np.einsum("mij,mj->mi", g, e)
    c_vals = -np.einsum("mi,mi->m", e, e)
    gammas = np.sort(_dual_values(a_mats, b_vecs, c_vals, tol))[::-1]
    return Ellipsoid(center=summary.theta_hat.copy(), shape=summary.r_n.copy(), radius=float(gammas[setup.q - 1]))


# ---------------------------------------------------------------------------
# Serialization: JSON {center, shape (row-major), radius}; +inf radius is
# written as the string "inf" so the files stay parseable outside Python.


def ellipsoid_to_json(e: Ellipsoid) -> dict:
    radius = e.radius if math.isfinite(e.radius) else "inf"
    return {"center": e.center.tolist(), "shape": e.shape.reshape(-1).tolist(), "radius": radius}


def ellipsoid_from_json(doc: dict) -> Ellipsoid:
    try:
        center = np.asarray(doc["center"], dtype=float)
        d = center.shape[0]
        shape = np.asarray(doc["shape"], dtype=float).reshape(d, d)
        radius = doc["radius"]
        radius = math.inf if radius == "inf" else float(radius)
        return Ellipsoid(center=center, shape=shape, radius=radius)
    except (KeyError, TypeError, ValueError) as exc:
        raise BadConfig(f"invalid ellipsoid document: {exc}") from None


def save_ellipsoid_json(e: Ellipsoid, path, config: dict | None = None) -> None:
    doc = ellipsoid_to_json(e)
    if config is not None:
        doc["config"] = config
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2)


def load_ellipsoid_json(path) -> Ellipsoid:
    with open(path) as handle:
        return ellipsoid_from_json(json.load(handle))


def save_ellipse_boundary_csv(e: Ellipsoid, path, num: int = 360, config: dict | None = None) -> None:
    """Boundary polyline ``x,y`` for d = 2 (parametric sweep)."""
    points = e.boundary_points(num)
    with open(path, "w", newline="") as handle:
        if config is not None:
            handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        writer = csv.writer(handle)
        writer.writerow(["x", "y"])
        for x, y in points:
            writer.writerow([repr(x), repr(y)])
