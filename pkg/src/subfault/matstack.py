"""Dense linear-algebra kernel for block-structured system data.

Everything operates on plain float64 numpy arrays. Matrices are dense;
problem sizes here never exceed a few hundred rows, so no sparse machinery
is provided. All decompositions are deterministic: singular-vector signs
are normalized so that each column's first significant entry is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "RankPolicy",
    "RankReport",
    "SubspaceBasis",
    "as_matrix",
    "as_signal",
    "block_hankel",
    "block_toeplitz",
    "extended_observability",
    "fix_column_signs",
    "grassmann_error",
    "min_norm_lsq",
    "nullspace_basis",
    "numerical_rank",
    "principal_angles",
    "range_basis",
    "range_equal",
    "read_matrix_csv",
    "write_matrix_csv",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float array; 1-D input becomes a column vector."""
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size and not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_signal(x, name: str = "signal") -> np.ndarray:
    """Coerce a time series to shape (T, dim); accepts (T,) or objects with .data."""
    data = getattr(x, "data", x)
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def fix_column_signs(m: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry larger than 1e-12*max|col| is positive."""
    m = np.array(m, dtype=float, copy=True)
    for j in range(m.shape[1]):
        col = m[:, j]
        big = np.abs(col) > 1e-12 * max(np.abs(col).max(initial=0.0), 1e-300)
        idx = np.flatnonzero(big)
        if idx.size and col[idx[0]] < 0:
            m[:, j] = -col
    return m


# ---------------------------------------------------------------------------
# rank machinery


@dataclass(frozen=True)
class RankPolicy:
    """Rule for deciding numerical rank from a singular spectrum.

    kind "abs": count values above ``tol``.
    kind "rel": count values above ``tol * sigma_1``.
    kind "gap": rank at the smallest index maximizing sigma_i / sigma_{i+1};
        the winning ratio must reach ``min_ratio``, otherwise the relative
        rule with ``tol`` is used as fallback.
    kind "floor": count values above ``scale`` times the smallest singular
        value, treating the spectrum bottom as the noise floor. On exact-
        arithmetic data the bottom is the machine floor, so this reduces to
        counting all structurally nonzero values.
    """

    kind: str = "rel"
    tol: float = 1e-8
    min_ratio: float = 10.0
    scale: float = 3.0

    def __post_init__(self):
        if self.kind not in ("abs", "rel", "gap", "floor"):
            raise ValueError(f"unknown rank policy kind {self.kind!r}")
        if self.tol < 0:
            raise ValueError("tolerance must be nonnegative")

    @classmethod
    def absolute(cls, tol: float) -> "RankPolicy":
        return cls(kind="abs", tol=tol)

    @classmethod
    def relative(cls, tol: float = 1e-8) -> "RankPolicy":
        return cls(kind="rel", tol=tol)

    @classmethod
    def gap(cls, min_ratio: float = 10.0, fallback_tol: float = 1e-8) -> "RankPolicy":
        return cls(kind="gap", tol=fallback_tol, min_ratio=min_ratio)

    @classmethod
    def noise_floor(cls, scale: float = 3.0) -> "RankPolicy":
        return cls(kind="floor", scale=scale)

    def threshold(self, singular_values) -> float:
        """Absolute cutoff implied by this policy for the given spectrum."""
        s = np.asarray(singular_values, dtype=float)
        if s.size == 0:
            return self.tol
        if self.kind == "abs":
            return self.tol
        if self.kind == "rel":
            return self.tol * s[0]
        if self.kind == "floor":
            if s[0] <= 0:
                return 0.0
            machine = s[0] * 1e-15
            floor = s[-1] if s[-1] > machine else machine
            return float(self.scale * floor)
        # gap: stop ranking once the spectrum hits exact zeros
        floor = s[0] * 1e-300 if s[0] > 0 else 0.0
        best_i, best_ratio = None, 0.0
        for i in range(len(s) - 1):
            hi, lo = s[i], s[i + 1]
            if hi <= floor:
                break
            ratio = hi / lo if lo > 0 else np.inf
            if ratio > best_ratio:
                best_ratio, best_i = ratio, i
        if best_i is not None and best_ratio >= self.min_ratio:
            hi, lo = s[best_i], s[best_i + 1]
            # geometric-mean cutoff between kept and dropped values
            return float(np.sqrt(hi * max(lo, hi * 1e-14)))
        return self.tol * s[0]


@dataclass
class RankReport:
    """Numerical rank of a matrix together with the full spectrum."""

    singular_values: np.ndarray
    rank: int
    tolerance_used: float
    gap_ratio: float

    def __post_init__(self):
        self.singular_values = np.asarray(self.singular_values, dtype=float)
        if np.any(np.diff(self.singular_values) > 1e-12):
            raise ValueError("singular values must be nonincreasing")


def numerical_rank(m, policy: RankPolicy | None = None) -> RankReport:
    """Numerical rank of ``m`` under ``policy`` (default: relative 1e-8)."""
    m = as_matrix(m)
    if m.size == 0:
        raise ValueError("cannot compute the rank of an empty matrix")
    policy = policy or RankPolicy.relative()
    s = np.linalg.svd(m, compute_uv=False)
    tau = policy.threshold(s)
    rank = int(np.sum(s > tau))
    if rank == 0:
        gap = np.inf if s[0] == 0 else 0.0
    elif rank == len(s) or s[rank] == 0:
        gap = np.inf
    else:
        gap = float(s[rank - 1] / s[rank])
    return RankReport(singular_values=s, rank=rank, tolerance_used=float(tau), gap_ratio=gap)


# ---------------------------------------------------------------------------
# block constructions


def block_hankel(signal, depth: int, width: int | None = None) -> np.ndarray:
    """Block-Hankel matrix of a time series.

    Block (i, j) is sample ``signal[i + j]`` as a column, i in 0..depth-1,
    j in 0..width-1, so column j stacks the window starting at sample j.
    """
    data = as_signal(signal)
    t, dim = data.shape
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if width is None:
        width = t - depth + 1
    if width < 1:
        raise ValueError("width must be at least 1")
    needed = depth + width - 1
    if t < needed:
        raise ValueError(
            f"signal too short: block Hankel with depth {depth} and width {width} "
            f"requires {needed} samples, only {t} available"
        )
    h = np.empty((depth * dim, width))
    for i in range(depth):
        h[i * dim:(i + 1) * dim, :] = data[i:i + width].T
    return h


def extended_observability(a, c, s: int) -> np.ndarray:
    """Stack [C; CA; ...; C A^(s-1)]."""
    a = as_matrix(a, "A")
    c = as_matrix(c, "C")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"A must be square, got {a.shape}")
    if c.shape[1] != n:
        raise ValueError(f"C has {c.shape[1]} columns but A is {n}x{n}")
    if s < 1:
        raise ValueError("s must be at least 1")
    blocks = [c]
    for _ in range(s - 1):
        blocks.append(blocks[-1] @ a)
    return np.vstack(blocks)


def block_toeplitz(a, b, c, d, s: int) -> np.ndarray:
    """Lower block-triangular impulse-response matrix.

    D on the block diagonal and C A^(k-1) B on the k-th block subdiagonal;
    maps a stacked input window to the stacked output window.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    c = as_matrix(c, "C")
    d = as_matrix(d, "D")
    n = a.shape[0]
    if a.shape[1] != n or b.shape[0] != n or c.shape[1] != n:
        raise ValueError("A, B, C have inconsistent state dimensions")
    p, m = c.shape[0], b.shape[1]
    if d.shape != (p, m):
        raise ValueError(f"D must be {p}x{m}, got {d.shape}")
    if s < 1:
        raise ValueError("s must be at least 1")
    # Markov parameters D, CB, CAB, ...
    params = [d]
    cak = c
    for _ in range(s - 1):
        params.append(cak @ b)
        cak = cak @ a
    t = np.zeros((s * p, s * m))
    for i in range(s):
        for j in range(i + 1):
            t[i * p:(i + 1) * p, j * m:(j + 1) * m] = params[i - j]
    return t


# ---------------------------------------------------------------------------
# subspaces


@dataclass
class SubspaceBasis:
    """Orthonormal basis of a subspace of R^ambient_dim."""

    basis: np.ndarray

    def __post_init__(self):
        self.basis = as_matrix(self.basis, "basis")
        k = self.basis.shape[1]
        if k:
            gram = self.basis.T @ self.basis
            if np.abs(gram - np.eye(k)).max() > 1e-10:
                raise ValueError("basis columns are not orthonormal")
        if k > self.basis.shape[0]:
            raise ValueError("more basis vectors than ambient dimensions")

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def range_basis(m, policy: RankPolicy | None = None, rank: int | None = None) -> SubspaceBasis:
    """Orthonormal basis of the column space, truncated at the numerical rank."""
    m = as_matrix(m)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if rank is None:
        policy = policy or RankPolicy.relative()
        rank = int(np.sum(s > policy.threshold(s)))
    return SubspaceBasis(fix_column_signs(u[:, :rank]))


def nullspace_basis(m, tol: float = 1e-8, policy: RankPolicy | None = None) -> SubspaceBasis:
    """Orthonormal basis of the right nullspace at the given relative tolerance.

    A RankPolicy may be supplied instead of the plain relative tolerance,
    e.g. gap detection when the spectrum is noise-contaminated.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ValueError("cannot compute the nullspace of an empty matrix")
    _, s, vt = np.linalg.svd(m, full_matrices=True)
    policy = policy or RankPolicy.relative(tol)
    rank = int(np.sum(s > policy.threshold(s)))
    return SubspaceBasis(fix_column_signs(vt[rank:].T))


def _coerce_basis(u) -> np.ndarray:
    if isinstance(u, SubspaceBasis):
        return u.basis
    b = as_matrix(u, "basis")
    if b.shape[1] == 0:
        return b
    # orthonormalize arbitrary spanning sets for convenience
    q, r = np.linalg.qr(b)
    keep = np.abs(np.diag(r)) > 1e-12 * max(np.abs(np.diag(r)).max(), 1e-300)
    return q[:, : int(np.sum(keep))]


def principal_angles(u, v) -> np.ndarray:
    """Principal angles between two subspaces, nonincreasing, in [0, pi/2].

    Accepts SubspaceBasis objects or plain matrices whose columns span the
    subspaces; count equals the smaller of the two dimensions.
    """
    bu = _coerce_basis(u)
    bv = _coerce_basis(v)
    if bu.shape[0] != bv.shape[0]:
        raise ValueError(
            f"ambient dimensions differ: {bu.shape[0]} vs {bv.shape[0]}"
        )
    if bu.shape[1] == 0 or bv.shape[1] == 0:
        return np.zeros(0)
    angles = scipy.linalg.subspace_angles(bu, bv)
    return np.sort(angles)[::-1]


def grassmann_error(u, v) -> float:
    """Normalized Grassmannian distance between equal-dimensional subspaces.

    Returns 100 * sqrt(sum theta_i^2) / (sqrt(k) * pi/2): 0% for equal
    subspaces, 100% for mutually orthogonal ones. Requires both subspaces
    to have the same dimension k with 2k <= ambient dimension, since the
    normalization constant is only attained in that regime.
    """
    bu = _coerce_basis(u)
    bv = _coerce_basis(v)
    if bu.shape[0] != bv.shape[0]:
        raise ValueError("ambient dimensions differ")
    k = bu.shape[1]
    if bv.shape[1] != k:
        raise ValueError(f"subspace dimensions differ: {k} vs {bv.shape[1]}")
    if k == 0:
        raise ValueError("empty subspaces have no defined distance")
    if 2 * k > bu.shape[0]:
        raise ValueError(
            f"normalization undefined for 2k > ambient ({2 * k} > {bu.shape[0]})"
        )
    theta = principal_angles(bu, bv)
    return float(100.0 * np.sqrt(np.sum(theta**2)) / (np.sqrt(k) * np.pi / 2.0))


def range_equal(m1, m2, tol: float = 1e-8) -> bool:
    """True iff both matrices and their concatenation share numerical rank.

    A single absolute threshold derived from the concatenated spectrum is
    applied to all three matrices so borderline directions are judged
    consistently.
    """
    m1 = as_matrix(m1, "M1")
    m2 = as_matrix(m2, "M2")
    if m1.shape[0] != m2.shape[0]:
        raise ValueError(f"row counts differ: {m1.shape[0]} vs {m2.shape[0]}")
    both = np.hstack([m1, m2])
    s_all = np.linalg.svd(both, compute_uv=False)
    if s_all.size == 0 or s_all[0] == 0:
        return True
    shared = RankPolicy.absolute(tol * s_all[0])
    r1 = numerical_rank(m1, shared).rank
    r2 = numerical_rank(m2, shared).rank
    r12 = int(np.sum(s_all > shared.tol))
    return r1 == r2 == r12


# ---------------------------------------------------------------------------
# least squares


def min_norm_lsq(a, b, rcond: float | None = None) -> np.ndarray:
    """Minimum-Frobenius-norm minimizer of ||A X - B||_F.

    Shape of X follows B: a 1-D right-hand side yields a 1-D solution.
    """
    a = as_matrix(a, "A")
    b_arr = np.asarray(b, dtype=float)
    vector = b_arr.ndim == 1
    b2 = b_arr.reshape(-1, 1) if vector else b_arr
    if a.shape[0] != b2.shape[0]:
        raise ValueError(f"row counts differ: A has {a.shape[0]}, B has {b2.shape[0]}")
    x, _, _, _ = scipy.linalg.lstsq(a, b2, cond=rcond, lapack_driver="gelsd")
    return x[:, 0] if vector else x


# ---------------------------------------------------------------------------
# CSV persistence ("rows,cols" header, one row per line)


def write_matrix_csv(path, m) -> None:
    m = as_matrix(m)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            rows, cols = (int(x) for x in header.split(","))
        except ValueError as exc:
            raise ValueError(f"bad matrix CSV header {header!r}") from exc
        data = [[float(x) for x in line.strip().split(",")] for line in fh if line.strip()]
    m = np.asarray(data, dtype=float)
    if m.shape != (rows, cols):
        raise ValueError(f"matrix CSV body {m.shape} does not match header ({rows},{cols})")
    return m
