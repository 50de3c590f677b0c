"""Truncated bosonic Fock space over the grid modes and operator assembly.

States are occupation vectors ``(n_1, ..., n_M)`` with ``sum n_j <= nmax``,
ordered by total boson number and lexicographically inside each sector, so
the vacuum always has index 0 and every sector is one contiguous index
range.  Creation operators annihilate the top sector: raising out of the
truncation maps to zero.  All assembled operators are real symmetric and
stored in compressed sparse row form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Dict, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionCapError
from .grid import FormFactor, MomentumGrid

DEFAULT_FOCK_CAP = 200_000


def fock_dimension(n_modes: int, nmax: int) -> int:
    """Number of occupation vectors with at most ``nmax`` bosons."""
    return sum(comb(n_modes + n - 1, n) for n in range(nmax + 1))


def _compositions(total: int, slots: int):
    """All ways to put ``total`` bosons into ``slots`` modes, lexicographic."""
    if slots == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, slots - 1):
            yield (first,) + rest


@dataclass(eq=False)
class FockBasis:
    """Enumerated occupation basis for ``n_modes`` modes up to ``nmax`` bosons."""

    n_modes: int
    nmax: int
    occupations: np.ndarray = field(repr=False)  # (dim, n_modes) int32
    sector_offsets: np.ndarray = field(repr=False)  # (nmax + 2,) int64
    _index: Dict[bytes, int] = field(repr=False, default_factory=dict)

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    def index_of(self, occupation: Sequence[int]) -> int:
        """Index of an occupation vector; raises ConfigError if absent."""
        key = np.asarray(occupation, dtype=np.int32).tobytes()
        try:
            return self._index[key]
        except KeyError:
            raise ConfigError(
                f"occupation {list(occupation)} is not a basis state (nmax={self.nmax})"
            ) from None

    def sector_range(self, n: int) -> range:
        """Contiguous index range of the ``n``-boson sector."""
        if not 0 <= n <= self.nmax:
            raise ConfigError(f"sector {n} outside 0..{self.nmax}")
        return range(int(self.sector_offsets[n]), int(self.sector_offsets[n + 1]))

    def tail_start(self, n: int) -> int:
        """First index of the ``>= n`` boson tail."""
        if not 0 <= n <= self.nmax:
            raise ConfigError(f"sector {n} outside 0..{self.nmax}")
        return int(self.sector_offsets[n])

    def boson_counts(self) -> np.ndarray:
        """Total boson number of every basis state, shape ``(dim,)``."""
        return self.occupations.sum(axis=1).astype(np.int64)

    def momentum_sums(self, grid: MomentumGrid) -> np.ndarray:
        """Total momentum ``sum_j n_j k_j`` of every state, shape ``(dim, d)``."""
        return self.occupations.astype(float) @ grid.modes


def enumerate_basis(n_modes: int, nmax: int, cap: int = DEFAULT_FOCK_CAP) -> FockBasis:
    """Enumerate the truncated occupation basis, sector-major.

    The dimension ``sum_{n<=nmax} C(M+n-1, n)`` must stay below ``cap``.
    """
    if n_modes < 1:
        raise ConfigError(f"need at least one mode, got {n_modes}")
    if nmax < 0:
        raise ConfigError(f"nmax must be >= 0, got {nmax}")
    dim = fock_dimension(n_modes, nmax)
    if dim > cap:
        raise DimensionCapError(f"Fock dimension {dim} exceeds cap {cap}")
    occ = np.empty((dim, n_modes), dtype=np.int32)
    offsets = np.zeros(nmax + 2, dtype=np.int64)
    row = 0
    for n in range(nmax + 1):
        offsets[n] = row
        for state in _compositions(n, n_modes):
            occ[row] = state
            row += 1
    offsets[nmax + 1] = row
    assert row == dim
    index = {occ[i].tobytes(): i for i in range(dim)}
    return FockBasis(
        n_modes=n_modes, nmax=nmax, occupations=occ, sector_offsets=offsets, _index=index
    )


@dataclass(eq=False)
class SparseOperator:
    """Real sparse operator on the Fock basis with a symmetry flag."""

    matrix: sp.csr_matrix
    hermitian: bool

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def _canonical_csr(mat: sp.spmatrix) -> sp.csr_matrix:
    out = mat.tocsr()
    out.sum_duplicates()
    out.sort_indices()
    out.eliminate_zeros()
    return out


def _lowering_triplets(basis: FockBasis, mode: int):
    """Triplets (row, col, sqrt(n_mode)) of the annihilator for one mode."""
    occ = basis.occupations
    cols = np.nonzero(occ[:, mode] > 0)[0]
    rows = np.empty_like(cols)
    vals = np.empty(cols.shape[0], dtype=float)
    for i, c in enumerate(cols):
        lowered = occ[c].copy()
        lowered[mode] -= 1
        rows[i] = basis._index[lowered.tobytes()]
        vals[i] = np.sqrt(float(occ[c, mode]))
    return rows, cols, vals


def annihilator(basis: FockBasis, mode: int) -> SparseOperator:
    """Mode annihilation operator ``a_k`` (lowers every sector)."""
    if not 0 <= mode < basis.n_modes:
        raise ConfigError(f"mode {mode} outside 0..{basis.n_modes - 1}")
    rows, cols, vals = _lowering_triplets(basis, mode)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    return SparseOperator(matrix=_canonical_csr(mat), hermitian=False)


def creator(basis: FockBasis, mode: int) -> SparseOperator:
    """Mode creation operator ``a_k^+``; maps the top sector to zero."""
    low = annihilator(basis, mode)
    return SparseOperator(matrix=_canonical_csr(low.matrix.T), hermitian=False)


def field_operator(basis: FockBasis, ff: FormFactor) -> SparseOperator:
    """Coupling field ``sum_k v_k (a_k + a_k^+)``, connecting adjacent sectors."""
    if ff.values.shape[0] != basis.n_modes:
        raise ConfigError(
            f"form factor has {ff.values.shape[0]} amplitudes, basis has {basis.n_modes} modes"
        )
    occ = basis.occupations
    dim = basis.dim
    rows, cols, vals = [], [], []
    for c in range(dim):
        state = occ[c]
        for mode in np.nonzero(state > 0)[0]:
            lowered = state.copy()
            lowered[mode] -= 1
            r = basis._index[lowered.tobytes()]
            amp = float(ff.values[mode]) * np.sqrt(float(state[mode]))
            rows.append(r)
            cols.append(c)
            vals.append(amp)
            rows.append(c)
            cols.append(r)
            vals.append(amp)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim))
    return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)


def number_diagonal(basis: FockBasis) -> np.ndarray:
    """Diagonal of the boson number operator."""
    return basis.boson_counts().astype(float)


def momentum_diagonal(basis: FockBasis, grid: MomentumGrid, axis: int) -> np.ndarray:
    """Diagonal of the total-momentum component ``P_i``."""
    if not 0 <= axis < grid.d:
        raise ConfigError(f"axis {axis} outside 0..{grid.d - 1}")
    return basis.momentum_sums(grid)[:, axis]


def shifted_kinetic_diagonal(
    basis: FockBasis, grid: MomentumGrid, k0: Sequence[float]
) -> np.ndarray:
    """Diagonal of ``(P + k0)^2``; ``k0`` may be any point of ``R^d``."""
    k0 = np.asarray(k0, dtype=float)
    if k0.shape != (grid.d,):
        raise ConfigError(f"shift has shape {k0.shape}, expected ({grid.d},)")
    p = basis.momentum_sums(grid) + k0[None, :]
    return np.sum(p * p, axis=1)


def assemble_component(
    basis: FockBasis,
    grid: MomentumGrid,
    which: str,
    *,
    ff: Optional[FormFactor] = None,
    axis: int = 0,
    k0: Optional[Sequence[float]] = None,
    mode: Optional[int] = None,
) -> SparseOperator:
    """Assemble one named building block of the fiber Hamiltonian.

    ``which`` selects among ``"N"`` (boson number), ``"P"`` (momentum
    component ``axis``), ``"Psquared_shift"`` (``(P+k0)^2``), ``"Phi"``
    (coupling field, needs ``ff``), ``"annihilator"`` and ``"creator"``
    (single-mode ladder operators, need ``mode``).
    """
    if which == "N":
        mat = sp.diags(number_diagonal(basis), format="csr")
        return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)
    if which == "P":
        mat = sp.diags(momentum_diagonal(basis, grid, axis), format="csr")
        return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)
    if which == "Psquared_shift":
        if k0 is None:
            raise ConfigError("Psquared_shift needs the shift vector k0")
        mat = sp.diags(shifted_kinetic_diagonal(basis, grid, k0), format="csr")
        return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)
    if which == "Phi":
        if ff is None:
            raise ConfigError("Phi needs a form factor")
        return field_operator(basis, ff)
    if which == "annihilator":
        if mode is None:
            raise ConfigError("annihilator needs a mode index")
        return annihilator(basis, mode)
    if which == "creator":
        if mode is None:
            raise ConfigError("creator needs a mode index")
        return creator(basis, mode)
    raise ConfigError(f"unknown component selector {which!r}")


def assemble_hamiltonian(
    basis: FockBasis,
    grid: MomentumGrid,
    ff: FormFactor,
    xi: Optional[Sequence[float]] = None,
) -> SparseOperator:
    """Fiber Hamiltonian ``(P - xi)^2 + Phi(v) + N`` at total momentum ``xi``."""
    if xi is None:
        xi = np.zeros(grid.d)
    xi = np.asarray(xi, dtype=float)
    diag = shifted_kinetic_diagonal(basis, grid, -xi) + number_diagonal(basis)
    phi = field_operator(basis, ff)
    mat = phi.matrix + sp.diags(diag, format="csr")
    return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)


def sector_projector(basis: FockBasis, n_low: int, n_high: Optional[int] = None) -> SparseOperator:
    """Orthogonal projector onto sectors ``n_low..n_high`` (inclusive)."""
    if n_high is None:
        n_high = basis.nmax
    if not 0 <= n_low <= n_high <= basis.nmax:
        raise ConfigError(f"bad sector window [{n_low}, {n_high}] for nmax={basis.nmax}")
    diag = np.zeros(basis.dim)
    diag[basis.tail_start(n_low) : int(basis.sector_offsets[n_high + 1])] = 1.0
    mat = sp.diags(diag, format="csr")
    return SparseOperator(matrix=_canonical_csr(mat), hermitian=True)


def one_boson_vector(basis: FockBasis, ff: FormFactor) -> np.ndarray:
    """Full-space vector with the coupling amplitudes in the 1-boson sector.

    This is the state obtained by applying the raising part of the field
    to the vacuum; it seeds every reduction object.
    """
    vec = np.zeros(basis.dim)
    if basis.nmax >= 1:
        sec = basis.sector_range(1)
        # inside the 1-boson sector, state j has a single boson in one mode;
        # lexicographic enumeration puts mode M-1 first, so map explicitly
        for idx in sec:
            mode = int(np.nonzero(basis.occupations[idx])[0][0])
            vec[idx] = ff.values[mode]
    return vec
