"""Fault-subspace recovery from residual Hankel data.

Given the nominal quadruple, the residual Hankel matrix R_s = Y_s - T_s U_s
satisfies R_s = O_s X + T^f_s V. Its column space therefore carries the
fault channel: the rank difference between R_{s+1} and R_s is the minimal
fault dimension, and the Toeplitz structure of T^f_s pins down every fault
matrix pair compatible with the data, up to output-behavioral equivalence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .matstack import (
    RankPolicy,
    SubspaceBasis,
    as_matrix,
    block_hankel,
    block_toeplitz,
    extended_observability,
    fix_column_signs,
    min_norm_lsq,
    nullspace_basis,
    numerical_rank,
    range_basis,
    range_equal,
)
from .sysgen import FaultPair, StateSpace, Trajectory, _traj_data, simulate, transmission_zeros

__all__ = [
    "FaultBasis",
    "annihilator_fault_basis",
    "FaultRecovery",
    "FaultReconstruction",
    "RecoveryError",
    "behaviorally_equivalent",
    "estimate_fault_dim",
    "fault_dim_from_ranks",
    "recover",
    "recover_fault_matrices",
    "reconstruct_fault",
    "residual_hankel",
    "select_representative",
    "verify_rank_formula",
    "window_in_behavior",
]


class RecoveryError(RuntimeError):
    """Fault recovery failed (empty solution set or inconsistent ranks)."""


@dataclass
class FaultDimDiagnostics:
    """Spectra and ranks behind a fault-dimension estimate."""

    rank_s: int
    rank_s_plus_1: int
    singular_values_s: np.ndarray
    singular_values_s_plus_1: np.ndarray
    threshold: float


@dataclass
class FaultBasis:
    """Maximal basis of fault-matrix pairs compatible with one residual Hankel."""

    F_hat: np.ndarray
    G_hat: np.ndarray
    n_z: int
    Q: SubspaceBasis
    constraint_singular_values: np.ndarray

    def stack(self) -> np.ndarray:
        return np.vstack([self.F_hat, self.G_hat])


@dataclass
class FaultRecovery:
    """Full fault-recovery result with rank diagnostics."""

    F_hat: np.ndarray
    G_hat: np.ndarray
    n_z: int
    n_v_estimate: int
    rank_s: int
    rank_s_plus_1: int
    singular_values_s: np.ndarray
    singular_values_s_plus_1: np.ndarray
    window_s: int
    Q: SubspaceBasis

    def __post_init__(self):
        if self.n_v_estimate != self.rank_s_plus_1 - self.rank_s or self.n_v_estimate < 0:
            raise ValueError("fault-dimension estimate inconsistent with the ranks")
        if self.n_z < self.n_v_estimate:
            raise ValueError(
                f"solution basis ({self.n_z}) smaller than the fault dimension "
                f"({self.n_v_estimate}); rank policy too aggressive"
            )
        stack = self.stack()
        if numerical_rank(stack, RankPolicy.relative(1e-10)).rank < self.n_z:
            raise ValueError("recovered fault-pair columns are linearly dependent")

    def stack(self) -> np.ndarray:
        return np.vstack([self.F_hat, self.G_hat])


@dataclass
class FaultReconstruction:
    """Reconstructed residual-system initial state and fault signal."""

    xi0: np.ndarray
    v: Trajectory
    replay_residual: float
    x_full: Trajectory


def residual_hankel(y, u, sys: StateSpace, s: int, x_tilde_0=None) -> np.ndarray:
    """R_s = Y_s - T_s U_s, the Hankel matrix of the fault residual.

    With ``x_tilde_0`` given, the block Hankel of the full simulated nominal
    response from that initial state is subtracted instead, leaving only the
    residual-subsystem contribution (useful for spectra where the
    input-driven state directions would dominate the picture).
    """
    y_data = _traj_data(y, "y")
    u_data = _traj_data(u, "u")
    if y_data.shape[0] != u_data.shape[0]:
        raise ValueError("y and u lengths differ")
    if y_data.shape[1] != sys.n_y or u_data.shape[1] != sys.n_u:
        raise ValueError("trajectory channel counts do not match the system")
    if x_tilde_0 is not None:
        y_nom, _ = simulate(sys, None, x_tilde_0, u_data)
        return block_hankel(y_data - y_nom.data, s)
    y_h = block_hankel(y_data, s)
    u_h = block_hankel(u_data, s)
    t_s = block_toeplitz(sys.A, sys.B, sys.C, sys.D, s)
    return y_h - t_s @ u_h


def fault_dim_from_ranks(rank_s: int, rank_s_plus_1: int) -> int:
    """Rank difference rule; a negative difference signals a bad rank policy."""
    n_v = rank_s_plus_1 - rank_s
    if n_v < 0:
        raise RecoveryError(
            f"rank of the deeper residual Hankel ({rank_s_plus_1}) fell below the "
            f"shallower one ({rank_s}); the rank policy is inconsistent"
        )
    return n_v


def estimate_fault_dim(y, u, sys: StateSpace, s: int, policy: RankPolicy | None = None):
    """Minimal fault dimension from the residual Hankel rank difference.

    One absolute threshold, resolved by the policy on the deeper spectrum,
    is applied to both Hankels so the difference is taken consistently.
    Returns (n_v, FaultDimDiagnostics).
    """
    policy = policy or RankPolicy.gap()
    r_s = residual_hankel(y, u, sys, s)
    r_s1 = residual_hankel(y, u, sys, s + 1)
    sv_s = np.linalg.svd(r_s, compute_uv=False)
    sv_s1 = np.linalg.svd(r_s1, compute_uv=False)
    tau = policy.threshold(sv_s1)
    rank_s = int(np.sum(sv_s > tau))
    rank_s1 = int(np.sum(sv_s1 > tau))
    n_v = fault_dim_from_ranks(rank_s, rank_s1)
    diag = FaultDimDiagnostics(
        rank_s=rank_s,
        rank_s_plus_1=rank_s1,
        singular_values_s=sv_s,
        singular_values_s_plus_1=sv_s1,
        threshold=float(tau),
    )
    return n_v, diag


def verify_rank_formula(a, f, c, g, s: int, tol: float = 1e-8) -> bool:
    """Check rank([O_s T^f_s]) = n_x + s n_v - zeta against the zero count."""
    a = as_matrix(a, "A")
    f = as_matrix(f, "F")
    c = as_matrix(c, "C")
    g = as_matrix(g, "G")
    report = transmission_zeros(a, f, c, g, tol=tol)
    if report.l_delay is None:
        raise ValueError("channel is not left invertible; the rank formula does not apply")
    if s < max(report.l_delay, a.shape[0]):
        raise ValueError(f"window s={s} below max(l, n_x)")
    combined = np.hstack(
        [extended_observability(a, c, s), block_toeplitz(a, f, c, g, s)]
    )
    rank = numerical_rank(combined, RankPolicy.relative(tol)).rank
    return rank == a.shape[0] + s * f.shape[1] - report.zeta


def _structure_constraints(q_blocks, obs, s: int, r: int, n_x: int, n_y: int) -> np.ndarray:
    """Linear system whose nullspace parameterizes all compatible (Z, F) stacks.

    Row order is fixed for reproducibility: zero-block constraints, then
    shift constraints by increasing block row, then the observability
    coupling of the first block column.
    """
    width = s * r + n_x
    rows = []
    for i in range(s):
        for j in range(i + 1, s):
            blk = np.zeros((n_y, width))
            blk[:, j * r:(j + 1) * r] = q_blocks[i]
            rows.append(blk)
    for i in range(s - 1):
        for j in range(i + 1):
            blk = np.zeros((n_y, width))
            blk[:, j * r:(j + 1) * r] += q_blocks[i]
            blk[:, (j + 1) * r:(j + 2) * r] -= q_blocks[i + 1]
            rows.append(blk)
    coupling = np.zeros(((s - 1) * n_y, width))
    coupling[:, :r] = -np.vstack(q_blocks[1:])
    coupling[:, s * r:] = obs
    rows.append(coupling)
    return np.vstack(rows)


def recover_fault_matrices(
    r_s,
    sys: StateSpace,
    s: int,
    tol: float = 1e-8,
    rank: int | None = None,
    rank_policy: RankPolicy | None = None,
    null_policy: RankPolicy | None = None,
    n_z_override: int | None = None,
) -> FaultBasis:
    """Maximal basis (F_hat, G_hat) of fault pairs explaining a residual Hankel.

    Writes R_s = Q Z with Q an orthonormal basis of the column space of R_s
    (SVD truncated at the numerical rank), imposes on the unknown blocks the
    strictly-upper-zero and constant-block-diagonal structure of the fault
    Toeplitz matrix together with the observability coupling of its first
    block column, and returns the nullspace of the assembled constraints.
    Columns of [F_hat; G_hat] are unit length with positive leading entry.
    """
    r_mat = as_matrix(r_s, "R_s")
    if s < 2:
        raise ValueError("recovery needs a window of at least 2 block rows")
    if s < sys.n_x:
        raise ValueError(f"window s={s} below the state dimension {sys.n_x}")
    n_y, n_x = sys.n_y, sys.n_x
    if r_mat.shape[0] != s * n_y:
        raise ValueError(
            f"residual Hankel has {r_mat.shape[0]} rows, expected s*n_y={s * n_y}"
        )
    q = range_basis(r_mat, policy=rank_policy or RankPolicy.relative(tol), rank=rank)
    r = q.dim
    if r == 0:
        raise RecoveryError("residual Hankel is numerically zero; nothing to recover")
    q_blocks = [q.basis[i * n_y:(i + 1) * n_y] for i in range(s)]
    obs = extended_observability(sys.A, sys.C, s - 1)
    m = _structure_constraints(q_blocks, obs, s, r, n_x, n_y)
    if n_z_override is not None:
        # fixed solution-space dimension (noisy data lifts the exact zeros of
        # the constraint spectrum, so the caller supplies the theory count)
        _, m_svals, vt = np.linalg.svd(m, full_matrices=True)
        n_z = int(n_z_override)
        if n_z < 1 or n_z > vt.shape[0]:
            raise RecoveryError(
                f"requested solution dimension {n_z} not available "
                f"({vt.shape[0]} unknowns)"
            )
        sol = fix_column_signs(vt[vt.shape[0] - n_z:].T)
    else:
        m_svals = np.linalg.svd(m, compute_uv=False)
        null = nullspace_basis(m, tol=tol, policy=null_policy)
        n_z = null.dim
        if n_z == 0:
            raise RecoveryError(
                "structure constraints admit no solution; the rank policy or "
                "the window s is too aggressive"
            )
        sol = null.basis
    f_hat = sol[s * r:, :]
    g_hat = q_blocks[0] @ sol[:r, :]
    stack = np.vstack([f_hat, g_hat])
    norms = np.linalg.norm(stack, axis=0)
    if np.any(norms < 1e-12):
        raise RecoveryError("recovered a fault direction with zero magnitude")
    stack = fix_column_signs(stack / norms)
    return FaultBasis(
        F_hat=stack[:n_x],
        G_hat=stack[n_x:],
        n_z=n_z,
        Q=q,
        constraint_singular_values=m_svals,
    )


def annihilator_fault_basis(
    r_s,
    sys: StateSpace,
    s: int,
    floor_scale: float = 1.2,
    n_z: int | None = None,
) -> FaultBasis:
    """Fault-pair basis from the annihilator of the residual column space.

    Every direction orthogonal to the structural range of R_s kills the
    fault Toeplitz columns, which gives homogeneous constraints directly on
    the (n_x + n_y)-dimensional fault pair: for an annihilating direction n
    split into s output blocks, n_j G + sum_{i>j} n_i C A^(i-j-1) F = 0 for
    each shift j. The known observability range is projected out first, and
    the annihilating directions are the ones left at the bottom of the
    remaining spectrum (within ``floor_scale`` of its smallest value). The
    solution set equals that of the structure-constraint formulation, but
    the few unknowns are averaged over many constraint rows, which is far
    better conditioned against measurement noise.

    ``n_z`` fixes the basis size; by default it is read at the dominant gap
    of the constraint spectrum.
    """
    r_mat = as_matrix(r_s, "R_s")
    n_x, n_y = sys.n_x, sys.n_y
    if s < 2 or r_mat.shape[0] != s * n_y:
        raise ValueError("residual Hankel shape does not match the window")
    obs = extended_observability(sys.A, sys.C, s)
    u_o = np.linalg.svd(obs, full_matrices=True)[0]
    b_perp = u_o[:, n_x:]
    proj = b_perp.T @ r_mat
    u2, s2, _ = np.linalg.svd(proj, full_matrices=True)
    positive = s2[s2 > 0]
    tau = floor_scale * (positive[-1] if positive.size else 0.0)
    weak = [i for i in range(u2.shape[1]) if i >= s2.size or s2[i] <= tau]
    dirs = (b_perp @ u2[:, weak]).T
    powers = [np.eye(n_x)]
    for _ in range(s - 1):
        powers.append(powers[-1] @ sys.A)
    rows = []
    for n_dir in dirs:
        blocks = n_dir.reshape(s, n_y)
        for j in range(s):
            f_coef = np.zeros(n_x)
            for i in range(j + 1, s):
                f_coef += blocks[i] @ sys.C @ powers[i - j - 1]
            rows.append(np.concatenate([f_coef, blocks[j]]))
    k_mat = np.vstack(rows)
    _, svals, vt = np.linalg.svd(k_mat, full_matrices=True)
    n_total = vt.shape[0]
    if n_z is None:
        pos = svals[svals > svals[0] * 1e-14] if svals[0] > 0 else svals
        ratios = [(pos[i] / pos[i + 1], i) for i in range(len(pos) - 1) if pos[i + 1] > 0]
        if ratios:
            n_z = n_total - (max(ratios)[1] + 1)
        else:
            n_z = n_total - len(pos)
    n_z = int(n_z)
    if n_z < 1 or n_z > n_total:
        raise RecoveryError(f"annihilator constraints leave no solution basis (n_z={n_z})")
    sol = fix_column_signs(vt[n_total - n_z:].T)
    norms = np.linalg.norm(sol, axis=0)
    if np.any(norms < 1e-12):
        raise RecoveryError("annihilator produced a zero fault direction")
    sol = sol / norms
    return FaultBasis(
        F_hat=sol[:n_x],
        G_hat=sol[n_x:],
        n_z=n_z,
        Q=range_basis(r_mat),
        constraint_singular_values=svals,
    )


def recover(
    y,
    u,
    sys: StateSpace,
    s: int,
    policy: RankPolicy | None = None,
    null_policy: RankPolicy | None = None,
    method: str = "structure",
) -> FaultRecovery:
    """Full pipeline: residual Hankels, fault dimension, and matrix basis.

    The rank threshold resolved on the R_{s+1} spectrum is shared by the
    rank difference and by the truncation of the recovery basis Q.

    method "structure" runs the constraint-matrix construction with the
    solution dimension pinned to the theory count n_v + zeta_eff (zeta_eff =
    n_x + s n_v - rank_s), which matches the exact nullspace dimension on
    clean data. method "annihilator" uses the noise-robust annihilator
    formulation with its own spectral-gap solution count; both compute the
    same solution set on clean data.
    """
    policy = policy or RankPolicy.gap()
    n_v, diag = estimate_fault_dim(y, u, sys, s, policy=policy)
    if n_v < 1:
        raise RecoveryError(
            "no fault detected (rank difference is zero); nothing to recover"
        )
    r_s = residual_hankel(y, u, sys, s)
    if method == "structure":
        zeta_eff = sys.n_x + s * n_v - diag.rank_s
        n_z_expected = n_v + zeta_eff
        if n_z_expected < 1:
            raise RecoveryError(
                f"no fault directions to recover (n_v estimate {n_v}, "
                f"effective zero count {zeta_eff})"
            )
        basis = recover_fault_matrices(
            r_s, sys, s, rank=diag.rank_s, null_policy=null_policy,
            n_z_override=n_z_expected,
        )
    elif method == "annihilator":
        basis = annihilator_fault_basis(r_s, sys, s)
        expected = n_v + max(sys.n_x + s * n_v - diag.rank_s, 0)
        if basis.n_z > expected:
            warnings.warn(
                f"solution basis has {basis.n_z} columns, more than the "
                f"fault dimension plus the effective zero count ({expected}); "
                "the rank readings may be inconsistent",
                stacklevel=2,
            )
    else:
        raise ValueError(f"unknown recovery method {method!r}")
    return FaultRecovery(
        F_hat=basis.F_hat,
        G_hat=basis.G_hat,
        n_z=basis.n_z,
        n_v_estimate=n_v,
        rank_s=diag.rank_s,
        rank_s_plus_1=diag.rank_s_plus_1,
        singular_values_s=diag.singular_values_s,
        singular_values_s_plus_1=diag.singular_values_s_plus_1,
        window_s=s,
        Q=basis.Q,
    )


def behaviorally_equivalent(a, c, fg1: FaultPair, fg2: FaultPair, tol: float = 1e-8) -> bool:
    """Finite-horizon output-behavior equality of two fault pairs on (A, C).

    Compares the ranges of [O_m T^f_m] over m = n_x + 1 block rows, which is
    sufficient for equality of the full behavior sets.
    """
    a = as_matrix(a, "A")
    c = as_matrix(c, "C")
    n_x = a.shape[0]
    if fg1.F.shape[0] != n_x or fg2.F.shape[0] != n_x:
        raise ValueError("fault pairs do not match the state dimension")
    if fg1.G.shape[0] != c.shape[0] or fg2.G.shape[0] != c.shape[0]:
        raise ValueError("fault pairs do not match the output dimension")
    m = n_x + 1
    obs = extended_observability(a, c, m)
    m1 = np.hstack([obs, block_toeplitz(a, fg1.F, c, fg1.G, m)])
    m2 = np.hstack([obs, block_toeplitz(a, fg2.F, c, fg2.G, m)])
    return range_equal(m1, m2, tol)


def window_in_behavior(a, f, c, g, window, tol: float = 1e-8) -> bool:
    """Whether a stacked output window is producible by the channel.

    ``window`` has shape (m, n_y); membership means the stacked vector is in
    the range of [O_m T^f_m] up to the relative tolerance.
    """
    w = _traj_data(window, "window")
    m = w.shape[0]
    basis_mat = np.hstack(
        [extended_observability(a, c, m), block_toeplitz(a, f, c, g, m)]
    )
    vec = w.reshape(-1)
    norm = np.linalg.norm(vec)
    if norm == 0:
        return True
    p = range_basis(basis_mat, policy=RankPolicy.relative(tol)).basis
    resid = vec - p @ (p.T @ vec)
    return bool(np.linalg.norm(resid) <= tol * norm)


def reconstruct_fault(y, u, sys: StateSpace, fg: FaultPair, x_tilde_0) -> FaultReconstruction:
    """Recover the residual-system initial state and a compatible fault signal.

    The residual signal r(k) = y(k) - C x~(k) - D u(k) is replayed against
    the stacked map [O_T T^f_T]; the minimum-norm solution is reported. With
    invariant zeros in the channel the solution is one representative of a
    family, so only replay consistency is guaranteed.
    """
    y_data = _traj_data(y, "y")
    u_data = _traj_data(u, "u")
    fg.check_matches(sys)
    t = y_data.shape[0]
    y_nom, x_nom = simulate(sys, None, x_tilde_0, u_data)
    resid = y_data - y_nom.data

    obs = extended_observability(sys.A, sys.C, t)
    toep = block_toeplitz(sys.A, fg.F, sys.C, fg.G, t)
    big = np.hstack([obs, toep])
    rhs = resid.reshape(-1)
    theta = min_norm_lsq(big, rhs)
    xi0 = theta[: sys.n_x]
    v_hat = theta[sys.n_x:].reshape(t, fg.n_v)
    norm = np.linalg.norm(rhs)
    replay = float(np.linalg.norm(big @ theta - rhs) / norm) if norm > 0 else 0.0

    _, xi = simulate(StateSpace(sys.A, fg.F, sys.C, fg.G), None, xi0, v_hat)
    x_full = Trajectory(xi.data + x_nom.data, role="state")
    return FaultReconstruction(
        xi0=xi0,
        v=Trajectory(v_hat, role="fault"),
        replay_residual=replay,
        x_full=x_full,
    )


def select_representative(
    recovery,
    policy: str = "leading",
    n_v: int | None = None,
    feasibility: float = 0.3,
) -> FaultPair:
    """Pick a concrete n_v-column fault pair from the recovered basis.

    "leading" takes the dominant right-singular directions of [F_hat; G_hat].
    "sparse-G" / "sparse-F" pick directions annihilating G_hat / F_hat, for
    use when prior structure (state-only or output-only faults) is known;
    they fail when no sufficiently annihilating direction exists.
    """
    stack = np.vstack([as_matrix(recovery.F_hat, "F_hat"), as_matrix(recovery.G_hat, "G_hat")])
    n_x = recovery.F_hat.shape[0]
    n_z = stack.shape[1]
    if n_v is None:
        n_v = getattr(recovery, "n_v_estimate", None)
    if not n_v or n_v < 1:
        raise ValueError("a positive fault dimension is required")
    if n_v > n_z:
        raise ValueError(f"cannot select {n_v} directions from a basis of {n_z}")
    if n_z == n_v:
        p = np.eye(n_z)
    elif policy == "leading":
        _, _, vt = np.linalg.svd(stack, full_matrices=False)
        p = vt[:n_v].T
    elif policy in ("sparse-G", "sparse-F"):
        target = stack[n_x:] if policy == "sparse-G" else stack[:n_x]
        _, _, vt = np.linalg.svd(target, full_matrices=True)
        p = vt[n_z - n_v:].T
        rep = stack @ p
        leak = np.linalg.norm(target @ p) / max(np.linalg.norm(rep), 1e-300)
        if leak > feasibility:
            raise ValueError(
                f"policy {policy} infeasible: best directions leak {leak:.3g} "
                f"of their energy into the structured block"
            )
    else:
        raise ValueError(f"unknown representative policy {policy!r}")
    rep = stack @ p
    norms = np.linalg.norm(rep, axis=0)
    if np.any(norms < 1e-12):
        raise ValueError("selected representative has a zero column")
    rep = fix_column_signs(rep / norms)
    return FaultPair(rep[:n_x], rep[n_x:])
