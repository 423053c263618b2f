"""The sign-perturbed-sums construction.

A setup holds ``m - 1`` random sign rows and a random tie-break permutation.
For a candidate parameter ``theta`` the reference sum

    S_0(theta) = R^{-1/2} (1/n) sum phi_t eps_t(theta)

is ranked against the sign-perturbed copies

    S_i(theta) = R^{-1/2} (1/n) sum alpha_{i,t} phi_t eps_t(theta),

and ``theta`` belongs to the confidence region iff the rank of
``||S_0||^2`` does not exceed ``m - q``.  For independent noise that is
symmetric about zero the region contains the data-generating parameter with
probability exactly ``1 - q/m``, for any sample size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import solve_triangular

from .errors import BadConfig
from .regression import Dataset, RegressionSummary, residuals

__all__ = [
    "NORMS",
    "SpsSetup",
    "SpsVerdict",
    "init_sps",
    "evaluate_s",
    "rank_of_reference",
    "sps_indicator",
    "membership_predicate",
    "setup_to_json",
    "setup_from_json",
    "derive_seed",
]

NORMS = ("l1", "l2", "linf")

# Scratch budget (elements) for batched membership evaluation.
_BATCH_ELEMENTS = 2_000_000


@dataclass(frozen=True, eq=False)
class SpsSetup:
    """Frozen randomization for one SPS run.

    ``signs`` stores rows 1..m-1 of the perturbation matrix; the reference
    row 0 (all ones) is implicit and never stored.  Within each block of
    ``block_length`` consecutive columns every row is constant, which is what
    makes the construction robust to short-range noise correlation.
    """

    m: int
    q: int
    signs: np.ndarray  # (m - 1, n) of +/-1
    tie_break: np.ndarray  # permutation of 0..m-1
    block_length: int = 1
    norm: str = "l2"
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.q <= 0 or self.q >= self.m:
            raise BadConfig(f"need m > q > 0 with m >= 2, got m={self.m}, q={self.q}")
        if self.norm not in NORMS:
            raise BadConfig(f"norm must be one of {NORMS}, got {self.norm!r}")
        signs = np.asarray(self.signs, dtype=float)
        if signs.shape[0] != self.m - 1:
            raise BadConfig(f"expected {self.m - 1} sign rows, got {signs.shape[0]}")
        if not np.all(np.abs(signs) == 1.0):
            raise BadConfig("sign entries must be +1 or -1")
        n = signs.shape[1]
        t = self.block_length
        if t < 1 or n % t:
            raise BadConfig(f"block length {t} must divide n={n}")
        if t > 1 and not np.all(signs == np.repeat(signs[:, ::t], t, axis=1)):
            raise BadConfig("signs are not constant within blocks")
        pi = np.asarray(self.tie_break)
        if sorted(pi.tolist()) != list(range(self.m)):
            raise BadConfig("tie_break must be a permutation of 0..m-1")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "tie_break", np.asarray(pi, dtype=np.int64))

    @property
    def p(self) -> Fraction:
        """Confidence level 1 - q/m, kept exact."""
        return Fraction(self.m - self.q, self.m)

    @property
    def n(self) -> int:
        return self.signs.shape[1]


@dataclass(frozen=True, eq=False)
class SpsVerdict:
    """Rank of the reference sum and the resulting membership decision."""

    rank: int
    member: bool
    s_norms: np.ndarray  # (m,) squared norms, reference first


def init_sps(m: int, q: int, seed: int, n: int, block_length: int = 1, norm: str = "l2") -> SpsSetup:
    """Draw the random objects for one SPS run.

    Signs are i.i.d. uniform on {-1,+1} per (row, block) and the tie-break
    permutation is uniform over all ``m!`` permutations (Fisher-Yates).  The
    result is a pure function of ``seed``; signs are drawn before the
    permutation.
    """
    if m < 2 or q <= 0 or q >= m:
        raise BadConfig(f"need m > q > 0 with m >= 2, got m={m}, q={q}")
    if norm not in NORMS:
        raise BadConfig(f"norm must be one of {NORMS}, got {norm!r}")
    if n < 1 or block_length < 1 or n % block_length:
        raise BadConfig(f"block length {block_length} must divide n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    blocks = rng.integers(0, 2, size=(m - 1, n // block_length)).astype(float) * 2.0 - 1.0
    signs = np.repeat(blocks, block_length, axis=1)
    pi = rng.permutation(m)
    return SpsSetup(m=m, q=q, signs=signs, tie_break=pi, block_length=block_length, norm=norm, seed=seed)


def derive_seed(master_seed: int, *key: int) -> int:
    """Independent child seed for (master, key) - used to give every Monte
    Carlo trial its own reproducible stream."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def evaluate_s(setup: SpsSetup, summary: RegressionSummary, data: Dataset, theta, i: int) -> np.ndarray:
    """One normalized residual sum; ``i = 0`` is the unperturbed reference.

    Solved through the triangular factor, no explicit inverse.
    """
    if not 0 <= i < setup.m:
        raise BadConfig(f"index i must be in 0..{setup.m - 1}, got {i}")
    eps = residuals(data, theta)
    weighted = data.regressors * eps[:, None]
    if i == 0:
        h = weighted.sum(axis=0)
    else:
        h = setup.signs[i - 1] @ weighted
    return solve_triangular(summary.r_n_half, h / data.n, lower=True, check_finite=False)


def _squared_norm_values(s: np.ndarray, norm: str) -> np.ndarray:
    """Squared norm of each column of ``s`` (shape (d, ...)).

    For l1/linf the squared value of the norm is used; squaring is strictly
    increasing so the ranking (and with it every guarantee) is unchanged.
    """
    if norm == "l2":
        return np.einsum("d...,d...->...", s, s)
    if norm == "l1":
        return np.abs(s).sum(axis=0) ** 2
    return np.abs(s).max(axis=0) ** 2


def _rank_of_first(s2: np.ndarray, pi: np.ndarray) -> int:
    """Ascending-order position of entry 0 under the strict total order
    (bigger value wins; exact ties broken by bigger permutation image)."""
    below = (s2[1:] < s2[0]) | ((s2[1:] == s2[0]) & (pi[1:] < pi[0]))
    return 1 + int(np.count_nonzero(below))


def _all_squared_norms(setup: SpsSetup, summary: RegressionSummary, data: Dataset, theta) -> np.ndarray:
    eps = residuals(data, theta)
    weighted = data.regressors * eps[:, None]
    h = np.empty((setup.m, data.d))
    h[0] = weighted.sum(axis=0)
    np.matmul(setup.signs, weighted, out=h[1:])
    h /= data.n
    s = solve_triangular(summary.r_n_half, h.T, lower=True, check_finite=False)
    return _squared_norm_values(s, setup.norm)


def rank_of_reference(setup: SpsSetup, summary: RegressionSummary, data: Dataset, theta) -> SpsVerdict:
    """Rank ``||S_0(theta)||^2`` against all sign-perturbed copies."""
    s2 = _all_squared_norms(setup, summary, data, theta)
    rank = _rank_of_first(s2, setup.tie_break)
    return SpsVerdict(rank=rank, member=rank <= setup.m - setup.q, s_norms=s2)


def sps_indicator(setup: SpsSetup, summary: RegressionSummary, data: Dataset, theta) -> bool:
    """Confidence-region membership of one candidate parameter."""
    return rank_of_reference(setup, summary, data, theta).member


def _perturbation_tables(setup: SpsSetup, data: Dataset):
    """Per-row averaged moments: psi_i = (1/n) sum alpha phi Y and
    Q_i = (1/n) sum alpha phi phi', with the reference row included first."""
    phi, y, n = data.regressors, data.outputs, data.n
    m, d = setup.m, data.d
    weighted = phi * y[:, None]
    psi = np.empty((m, d))
    psi[0] = weighted.sum(axis=0)
    np.matmul(setup.signs, weighted, out=psi[1:])
    psi /= n
    q = np.empty((m, d, d))
    q[0] = phi.T @ phi
    np.einsum("it,ta,tb->iab", setup.signs, phi, phi, out=q[1:], optimize=True)
    q /= n
    return psi, q


def membership_predicate(setup: SpsSetup, summary: RegressionSummary, data: Dataset):
    """Vectorized membership test: maps an (k, d) array of parameter points
    to a (k,) boolean array.

    Each ||S_i(theta)||^2 is a quadratic in theta, so the whole batch reduces
    to one matrix product per chunk instead of k separate indicator calls.
    """
    psi, q = _perturbation_tables(setup, data)
    m, d = psi.shape
    q_flat = q.reshape(m * d, d)
    psi_flat = psi.reshape(m * d, 1)
    lower = summary.r_n_half
    pi = setup.tie_break
    pi_tail = pi[1:, None]
    threshold = setup.m - setup.q
    chunk = max(1, _BATCH_ELEMENTS // (m * d))

    def member(points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != d:
            raise BadConfig(f"points must have {d} columns, got {pts.shape[1]}")
        out = np.empty(pts.shape[0], dtype=bool)
        for start in range(0, pts.shape[0], chunk):
            block = pts[start : start + chunk]
            k = block.shape[0]
            vals = psi_flat - q_flat @ block.T  # (m*d, k)
            vals = vals.reshape(m, d, k).transpose(1, 0, 2).reshape(d, m * k)
            s = solve_triangular(lower, vals, lower=True, check_finite=False)
            s2 = _squared_norm_values(s.reshape(d, m, k), setup.norm)
            below = (s2[1:] < s2[0]) | ((s2[1:] == s2[0]) & (pi_tail < pi[0]))
            rank = 1 + below.sum(axis=0)
            out[start : start + chunk] = rank <= threshold
        return out

    return member


# ---------------------------------------------------------------------------
# Setup serialization: the sign matrix is regenerated from the seed, never
# stored.


def setup_to_json(setup: SpsSetup) -> dict:
    return {
        "m": setup.m,
        "q": setup.q,
        "seed": setup.seed,
        "block_length": setup.block_length,
        "norm": setup.norm,
    }


def setup_from_json(doc: dict, n: int) -> SpsSetup:
    try:
        return init_sps(
            m=int(doc["m"]),
            q=int(doc["q"]),
            seed=int(doc["seed"]),
            n=n,
            block_length=int(doc.get("block_length", 1)),
            norm=str(doc.get("norm", "l2")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadConfig(f"invalid setup document: {exc}") from None


def _setup_json_roundtrip(setup: SpsSetup, n: int) -> SpsSetup:
    # Used in tests: serialize/deserialize must reproduce the setup exactly.
    return setup_from_json(json.loads(json.dumps(setup_to_json(setup))), n)
