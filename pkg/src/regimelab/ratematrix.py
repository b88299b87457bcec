"""Validated rate-matrix algebra for conservative generators.

Houses the generator Q of the switching chain on S = {0, ..., N}
(n_states = N + 1), the tilted generator Q_p = Q + p diag(kappa), the
spectral quantities eta_p and tau, the exact Feynman-Kac evaluation
E_i exp(p int_0^t kappa d s) = (e^{tQ_p} 1)_i, and the block split /
reduced-chain embedding used by the state-space-reduction bound.

All types are immutable after construction; operations are pure functions.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.csgraph

from .errors import (
    BadSplitIndex,
    DimensionMismatch,
    EigensolveFailure,
    NegativeRate,
    NonConservative,
    Reducible,
)

ROW_SUM_TOL = 1e-12
ROW_REPAIR_TOL = 1e-9
ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True)
class RateMatrix:
    """Conservative, totally stable generator on a finite state space.

    Invariants (enforced by validate): off-diagonal entries >= 0, every
    row sums to zero within 1e-12, all entries finite.
    """

    n_states: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def exit_rates(self):
        """q_i = -q_ii, the total jump rate out of each state."""
        return -np.diag(self.entries)

    def __eq__(self, other):
        if not isinstance(other, RateMatrix):
            return NotImplemented
        return self.n_states == other.n_states and np.array_equal(
            self.entries, other.entries
        )


def validate(raw_matrix) -> RateMatrix:
    """Check generator invariants and return an immutable RateMatrix.

    Rows whose sum residual is below 1e-9 in absolute value are repaired by
    subtracting the residual from the diagonal (documented normalization);
    larger residuals are rejected.

    Args:
        raw_matrix: square array-like of finite reals.

    Returns:
        RateMatrix with off-diagonals >= 0 and exact-to-1e-12 zero row sums.

    Raises:
        NegativeRate: an off-diagonal entry is negative.
        NonConservative: a row sum residual exceeds the repair tolerance.
        DimensionMismatch: input is not a square 2-d array.
    """
    q = np.array(raw_matrix, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise DimensionMismatch("matrix entries must be finite")
    n = q.shape[0]
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise NegativeRate(i, j, q[i, j])
    residuals = q.sum(axis=1)
    bad = np.abs(residuals) > ROW_SUM_TOL
    if np.any(np.abs(residuals) > ROW_REPAIR_TOL):
        row = int(np.argmax(np.abs(residuals)))
        raise NonConservative(row, residuals[row])
    if np.any(bad):
        q = q.copy()
        q[np.diag_indices(n)] -= residuals
    return RateMatrix(n_states=n, entries=q)


def l1_distance(a: RateMatrix, b: RateMatrix) -> float:
    """Maximum absolute row sum of a - b (the l1 operator norm)."""
    if a.n_states != b.n_states:
        raise DimensionMismatch(
            f"size mismatch: {a.n_states} vs {b.n_states} states"
        )
    return float(np.abs(a.entries - b.entries).sum(axis=1).max())


def l1_norm(m) -> float:
    """Maximum absolute row sum of a raw matrix block."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return float(np.abs(m).sum(axis=1).max())


def transition_matrix(q: RateMatrix, t: float) -> np.ndarray:
    """Semigroup e^{tQ} evaluated by scaling-and-squaring Pade.

    Each row is a probability vector within 1e-9 for valid inputs.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t == 0.0:
        return np.eye(q.n_states)
    return scipy.linalg.expm(t * q.entries)


def _strongly_connected(entries) -> bool:
    adjacency = (entries > 0).astype(np.int8)
    np.fill_diagonal(adjacency, 0)
    n_comp, _ = scipy.sparse.csgraph.connected_components(
        adjacency, directed=True, connection="strong"
    )
    return n_comp == 1


def invariant_measure(q: RateMatrix) -> np.ndarray:
    """Invariant probability vector pi with pi Q = 0, sum(pi) = 1.

    Raises:
        Reducible: the embedded jump graph is not strongly connected.
    """
    if q.n_states == 1:
        return np.ones(1)
    if not _strongly_connected(q.entries):
        raise Reducible("embedded jump graph is not strongly connected")
    n = q.n_states
    # Solve pi Q = 0 with the normalization row appended.
    a = np.vstack([q.entries.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return pi


def spectral_gap(q: RateMatrix) -> float:
    """Strong-ergodicity rate tau = -max{Re lam : lam in spec(Q), lam != 0}.

    The zero eigenvalue is identified as the one of smallest modulus; it
    must be within 1e-9 of zero, and the remaining spectrum must lie
    strictly in the open left half plane.

    Raises:
        Reducible: no isolated zero eigenvalue, or tau is not positive.
    """
    if q.n_states == 1:
        raise Reducible("single-state chain has no spectral gap")
    lam = _eigvals(q.entries)
    k0 = int(np.argmin(np.abs(lam)))
    if abs(lam[k0]) > ZERO_EIG_TOL:
        raise Reducible(
            f"no eigenvalue within {ZERO_EIG_TOL} of zero (min |lam| = {abs(lam[k0]):.3e})"
        )
    rest = np.delete(lam, k0)
    tau = -float(rest.real.max())
    if tau <= ZERO_EIG_TOL:
        raise Reducible(f"second eigenvalue too close to zero (tau = {tau:.3e})")
    return tau


def _eigvals(matrix):
    try:
        return np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from exc


@dataclass(frozen=True)
class TiltedGenerator:
    """Q_p = Q + p diag(kappa_0, ..., kappa_N)."""

    base: RateMatrix
    kappa: np.ndarray
    p: float
    matrix: np.ndarray

    def __post_init__(self):
        self.kappa.setflags(write=False)
        self.matrix.setflags(write=False)


def tilt(q: RateMatrix, kappa, p: float) -> TiltedGenerator:
    """Construct the tilted generator Q_p = Q + p diag(kappa)."""
    kappa = np.asarray(kappa, dtype=float).copy()
    if kappa.shape != (q.n_states,):
        raise DimensionMismatch(
            f"kappa length {kappa.shape} does not match {q.n_states} states"
        )
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    matrix = q.entries + p * np.diag(kappa)
    return TiltedGenerator(base=q, kappa=kappa, p=float(p), matrix=matrix)


def eta(g: TiltedGenerator) -> float:
    """eta_p = -max{Re gamma : gamma in spec(Q_p)}.

    Governs the exponential decay rate of E exp(p int kappa); positive
    exactly when the tilted semigroup contracts.
    """
    lam = _eigvals(g.matrix)
    return -float(lam.real.max())


def feynman_kac(q: RateMatrix, kappa, p: float, t: float, i0: int) -> float:
    """Exact E_{i0} exp(p int_0^t kappa_{Lam_s} ds) = (e^{t Q_p} 1)_{i0}."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if not 0 <= i0 < q.n_states:
        raise ValueError(f"state {i0} out of range for {q.n_states} states")
    g = tilt(q, kappa, p)
    return float(scipy.linalg.expm(t * g.matrix).sum(axis=1)[i0])


def c2_estimate(g: TiltedGenerator, t_max: float, grid_points: int = 256):
    """Grid-certified upper sandwich constant C2(p).

    C2 = 1.05 * max over a uniform time grid of
    e^{eta_p t} * max_i (e^{t Q_p} 1)_i.  The sandwich
    E e^{p int kappa} <= C2 e^{-eta_p t} then holds on the grid by
    construction, with 5% safety margin between grid points.

    Returns:
        (c2, horizon): the constant and the time up to which it was
        certified (= t_max).
    """
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if grid_points < 2:
        raise ValueError(f"need at least 2 grid points, got {grid_points}")
    eta_p = eta(g)
    grid = np.linspace(0.0, t_max, int(grid_points))
    best = 1.0  # t = 0 gives exactly 1
    for t in grid[1:]:
        row_sums = scipy.linalg.expm(t * g.matrix).sum(axis=1)
        best = max(best, np.exp(eta_p * t) * row_sums.max())
    return 1.05 * float(best), float(t_max)


def c1_estimate(g: TiltedGenerator, t_max: float, grid_points: int = 256):
    """Grid minimum analog of c2_estimate (lower sandwich constant).

    C1 = (1/1.05) * min over the grid of e^{eta_p t} * min_i (e^{t Q_p} 1)_i.
    """
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if grid_points < 2:
        raise ValueError(f"need at least 2 grid points, got {grid_points}")
    eta_p = eta(g)
    grid = np.linspace(0.0, t_max, int(grid_points))
    best = 1.0
    for t in grid[1:]:
        row_sums = scipy.linalg.expm(t * g.matrix).sum(axis=1)
        best = min(best, np.exp(eta_p * t) * row_sums.min())
    return float(best) / 1.05, float(t_max)


@dataclass(frozen=True)
class SpectralSummary:
    """Derived spectral constants of a generator and its tilt."""

    eta_p: float
    tau: float
    pi: np.ndarray
    c2: float
    c2_grid_horizon: float

    def __post_init__(self):
        self.pi.setflags(write=False)


def spectral_summary(
    q: RateMatrix, kappa, p: float, t_max: float = None, grid_points: int = 256
) -> SpectralSummary:
    """Bundle tau, pi, eta_p and the grid-certified C2 for reporting."""
    tau = spectral_gap(q)
    if t_max is None:
        t_max = 10.0 / tau
    g = tilt(q, kappa, p)
    c2, horizon = c2_estimate(g, t_max, grid_points)
    return SpectralSummary(
        eta_p=eta(g),
        tau=tau,
        pi=invariant_measure(q),
        c2=c2,
        c2_grid_horizon=horizon,
    )


def block_split(q: RateMatrix, m: int):
    """Split Q into blocks [[Q0, A], [B, Q1]] with Q0 of size (m+1)x(m+1).

    The first m+1 states form the block slated for removal; the rest is
    the kept space E.

    Raises:
        BadSplitIndex: unless 0 <= m < n_states - 1.
    """
    n = q.n_states
    if not 0 <= m < n - 1:
        raise BadSplitIndex(m, n)
    k = m + 1
    e = q.entries
    return e[:k, :k].copy(), e[:k, k:].copy(), e[k:, :k].copy(), e[k:, k:].copy()


def embed_reduced(q: RateMatrix, q_hat: RateMatrix, m: int) -> RateMatrix:
    """Extend a reduced generator Q_hat on E back to the full state space.

    The result keeps the top rows of q (blocks Q0 and A unchanged), zeroes
    the bottom-left block, and places q_hat bottom-right, so a chain
    started in E never leaves E and moves there with generator q_hat.
    """
    n = q.n_states
    if not 0 <= m < n - 1:
        raise BadSplitIndex(m, n)
    k = m + 1
    if q_hat.n_states != n - k:
        raise DimensionMismatch(
            f"q_hat has {q_hat.n_states} states, expected {n - k}"
        )
    out = q.entries.copy()
    out[k:, :k] = 0.0
    out[k:, k:] = q_hat.entries
    result = validate(out)
    assert np.allclose(result.entries.sum(axis=1), 0.0, atol=ROW_SUM_TOL)
    return result


def read_csv(path) -> RateMatrix:
    """Read a rate matrix from CSV, one row per line."""
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    return validate(np.array(rows))


def write_csv(q: RateMatrix, path):
    """Write a rate matrix to CSV, one row per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in q.entries:
            writer.writerow([repr(float(x)) for x in row])


def from_config(spec) -> RateMatrix:
    """Build a rate matrix from the structured config schema.

    Schema: {"n_states": n, "entries": row-major flat list of n*n rates}
    or {"entries": nested list of rows}.
    """
    entries = spec["entries"]
    arr = np.asarray(entries, dtype=float)
    if arr.ndim == 1:
        n = int(spec["n_states"])
        if arr.size != n * n:
            raise DimensionMismatch(
                f"flat entries length {arr.size} != n_states^2 = {n * n}"
            )
        arr = arr.reshape(n, n)
    elif "n_states" in spec and int(spec["n_states"]) != arr.shape[0]:
        raise DimensionMismatch(
            f"n_states {spec['n_states']} does not match entries shape {arr.shape}"
        )
    return validate(arr)
