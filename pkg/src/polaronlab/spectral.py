"""Eigenvalue and linear solvers for the assembled operators.

Small problems (dimension at or below ``dense_threshold``) are handled by
dense LAPACK routines, which doubles as the built-in oracle for the sparse
path; larger ones use Lanczos iteration with a deterministic seeded start
vector.  Resolvent applications use a Cholesky factorization under the
dense fallback and conjugate-gradient iteration otherwise; both paths
check positive definiteness first and report indefiniteness as a
first-class error instead of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, IndefiniteOperatorError, SolverError
from .fock import FockBasis, SparseOperator

MatrixLike = Union[np.ndarray, sp.spmatrix, SparseOperator]


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs shared by every solver call."""

    eig_tol: float = 1e-10
    lin_tol: float = 1e-12
    max_iterations: int = 5000
    dense_threshold: int = 500
    seed: int = 2024

    def buffer(self, h: float) -> float:
        """Edge buffer for eigenvalue counting: ``max(h^2, 10 * eig_tol)``."""
        return max(h * h, 10.0 * self.eig_tol)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SpectralResult:
    """Low-lying spectral data of one fiber Hamiltonian instance."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    ground_vector: np.ndarray = field(repr=False)
    vacuum_overlap: float
    nu1: Optional[float] = None
    nu2: Optional[float] = None
    method: str = "dense"
    iterations: int = 0

    @property
    def e0(self) -> float:
        return float(self.eigenvalues[0])

    def to_json_dict(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
            "vacuum_overlap": float(self.vacuum_overlap),
            "nu1": None if self.nu1 is None else float(self.nu1),
            "nu2": None if self.nu2 is None else float(self.nu2),
            "diagnostics": {"method": self.method, "iterations": int(self.iterations)},
        }


def _as_matrix(op: MatrixLike):
    if isinstance(op, SparseOperator):
        return op.matrix
    return op


def _dense(mat) -> np.ndarray:
    if sp.issparse(mat):
        return mat.toarray()
    return np.asarray(mat, dtype=float)


def _gershgorin_lower(mat) -> float:
    """Rigorous lower bound for the spectrum of a symmetric matrix."""
    if sp.issparse(mat):
        m = mat.tocsr()
        diag = m.diagonal()
        radii = np.asarray(np.abs(m).sum(axis=1)).ravel() - np.abs(diag)
    else:
        dense = np.asarray(mat, dtype=float)
        diag = np.diag(dense)
        radii = np.abs(dense).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - radii))


def start_vector(dim: int, seed: int) -> np.ndarray:
    """Deterministic unit start vector for iterative solvers."""
    rng = np.random.RandomState(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def lowest_eigenpairs(
    op: MatrixLike, count: int, config: SolverConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """``count`` smallest eigenpairs of a real symmetric operator.

    Dense diagonalization below the fallback threshold, Lanczos above it.
    Every returned pair is certified by its residual ``|A x - lam x|``.
    """
    mat = _as_matrix(op)
    dim = mat.shape[0]
    if count < 1 or count > dim:
        raise ConfigError(f"cannot compute {count} eigenpairs of a dim-{dim} operator")
    if dim <= config.dense_threshold or count >= dim - 1:
        dense = _dense(mat)
        vals, vecs = sla.eigh(dense)
        vals, vecs = vals[:count], vecs[:, :count]
        method = "dense"
    else:
        # Shift-invert around a point strictly below the spectrum.  Plain
        # smallest-algebraic Lanczos silently loses eigenvectors the matrix
        # (nearly) annihilates -- their Krylov components never grow -- so
        # it is not trustworthy for counting; the inverted operator makes
        # the low end dominant instead.
        v0 = start_vector(dim, config.seed)
        sigma = _gershgorin_lower(mat) - 1.0
        try:
            vals, vecs = spla.eigsh(
                mat,
                k=count,
                sigma=sigma,
                which="LM",
                tol=config.eig_tol,
                maxiter=config.max_iterations,
                v0=v0,
            )
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"Lanczos failed to converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        method = "shift-invert"
    residuals = np.array(
        [np.linalg.norm(mat @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(count)]
    )
    scale = max(1.0, float(np.abs(vals).max()))
    tol = max(config.eig_tol, 1e-12 * scale * dim)
    if np.any(residuals > max(tol, 1e-8)):
        raise SolverError(
            f"eigenpair residual {residuals.max():.3e} exceeds tolerance ({method})"
        )
    return vals, vecs


def ground_energy(op: MatrixLike, config: SolverConfig) -> Tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit ground vector."""
    vals, vecs = lowest_eigenpairs(op, 1, config)
    vec = vecs[:, 0]
    vec = vec / np.linalg.norm(vec)
    # fix the overall sign so reruns are bit-identical
    pivot = int(np.argmax(np.abs(vec)))
    if vec[pivot] < 0:
        vec = -vec
    return float(vals[0]), vec


def spectrum_summary(
    op: MatrixLike, basis: FockBasis, e0_shift: Optional[float], count: int, config: SolverConfig
) -> SpectralResult:
    """Low-lying eigenvalues plus the sector gaps nu_1 and nu_2."""
    mat = _as_matrix(op)
    count = min(count, mat.shape[0])
    vals, vecs = lowest_eigenpairs(op, count, config)
    residuals = np.array(
        [np.linalg.norm(mat @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(count)]
    )
    ground = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
    pivot = int(np.argmax(np.abs(ground)))
    if ground[pivot] < 0:
        ground = -ground
    e0 = float(vals[0]) if e0_shift is None else e0_shift
    result = SpectralResult(
        eigenvalues=vals,
        residuals=residuals,
        ground_vector=ground,
        vacuum_overlap=float(ground[0]),
        method="dense" if mat.shape[0] <= config.dense_threshold else "lanczos",
    )
    if basis.nmax >= 1:
        result.nu1 = nu(op, e0, 1, basis, config)
    if basis.nmax >= 2:
        result.nu2 = nu(op, e0, 2, basis, config)
    return result


def nu(op: MatrixLike, e0: float, n: int, basis: FockBasis, config: SolverConfig) -> float:
    """Spectral gap of the ``>= n`` boson tail above the one-boson line.

    Returns the smallest eigenvalue of the tail restriction of
    ``H - 1 - e0``; positivity of ``nu(2)`` is the standing assumption
    behind the two-boson resolvent.
    """
    if n < 1 or n > basis.nmax:
        raise ConfigError(f"tail index {n} outside 1..{basis.nmax}")
    mat = _as_matrix(op).tocsr()
    start = basis.tail_start(n)
    sub = mat[start:, start:]
    vals, _ = lowest_eigenpairs(sub, 1, config)
    return float(vals[0]) - 1.0 - e0


def count_below(
    op: MatrixLike, threshold: float, buffer: float, config: SolverConfig
) -> int:
    """Number of eigenvalues at or below ``threshold - buffer``.

    The buffer keeps the count stable against eigenvalues sitting right at
    the threshold; each counted eigenvalue is certified by the residual
    check inside the eigenpair solver.
    """
    if buffer < 0:
        raise ConfigError(f"buffer must be >= 0, got {buffer}")
    mat = _as_matrix(op)
    dim = mat.shape[0]
    cut = threshold - buffer
    if dim <= config.dense_threshold:
        vals = sla.eigvalsh(_dense(mat))
        return int(np.sum(vals <= cut))
    k = min(8, dim - 2)
    while True:
        vals, _ = lowest_eigenpairs(op, k, config)
        if vals[-1] > cut or k >= dim - 2:
            return int(np.sum(vals <= cut))
        k = min(2 * k, dim - 2)


class SpdSolver:
    """Repeated solves against one symmetric positive definite matrix.

    Below the dense threshold the matrix is Cholesky-factored once and
    reused (the factorization doubles as the definiteness check); above
    it, each solve runs conjugate gradients after a one-time smallest-
    eigenvalue check.  Instances are immutable after construction and safe
    to share across threads.
    """

    def __init__(self, mat, config: SolverConfig, label: str = "operator"):
        self.config = config
        self.label = label
        self._mat = _as_matrix(mat)
        self.dim = self._mat.shape[0]
        self._dense_factor = None
        self._checked = False
        if self.dim <= config.dense_threshold:
            dense = _dense(self._mat)
            try:
                self._dense_factor = sla.cho_factor(dense, lower=True)
            except np.linalg.LinAlgError as exc:
                raise IndefiniteOperatorError(
                    f"{label} is not positive definite (Cholesky failed)"
                ) from exc
            self._checked = True

    def _check_definite(self) -> None:
        if self._checked:
            return
        if _gershgorin_lower(self._mat) > 0:  # cheap rigorous certificate
            self._checked = True
            return
        try:
            vals, _ = lowest_eigenpairs(self._mat, 1, self.config)
        except SolverError as exc:
            raise SolverError(f"definiteness check failed for {self.label}") from exc
        if vals[0] <= 0:
            raise IndefiniteOperatorError(
                f"{self.label} has smallest eigenvalue {vals[0]:.3e} <= 0"
            )
        self._checked = True

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A x = rhs`` to the configured linear tolerance."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise ConfigError(f"rhs has dim {rhs.shape[0]}, operator has {self.dim}")
        if self._dense_factor is not None:
            return sla.cho_solve(self._dense_factor, rhs)
        self._check_definite()
        if rhs.ndim == 2:
            return np.column_stack([self.solve(rhs[:, j]) for j in range(rhs.shape[1])])
        x, info = spla.cg(
            self._mat,
            rhs,
            rtol=self.config.lin_tol,
            atol=0.0,
            maxiter=self.config.max_iterations,
        )
        if info != 0:
            raise SolverError(f"conjugate gradients failed on {self.label} (info={info})")
        return x

    def solve_many(self, rhs_matrix: np.ndarray) -> np.ndarray:
        """Batched solve with the rhs vectors as columns."""
        return self.solve(np.asarray(rhs_matrix, dtype=float))


def resolvent_apply(
    op: MatrixLike, shift: float, rhs: np.ndarray, config: SolverConfig
) -> np.ndarray:
    """Apply ``(A - shift)^{-1}`` to ``rhs`` for symmetric ``A - shift > 0``."""
    mat = _as_matrix(op)
    shifted = mat - shift * sp.identity(mat.shape[0], format="csr") if sp.issparse(mat) else (
        np.asarray(mat, dtype=float) - shift * np.eye(mat.shape[0])
    )
    return SpdSolver(shifted, config, label="shifted operator").solve(rhs)
