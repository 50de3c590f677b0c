"""Schur-complement reduction of the fiber Hamiltonian onto small blocks.

Everything here is organized around three resolvent families built from
one instance (grid, form factor, truncation level) and its ground energy
``e0``:

* ``Y(k)``   — inverse of ``(P+k)^2 + Phi + N - e0`` on the >=1 boson tail,
* ``Z(s)``   — inverse of ``(P+s)^2 + Phi + N + 1 - e0`` on the full space,
* ``X(eps)`` — inverse of ``H - e0 - 1 + eps`` on the >=2 boson tail.

From these the module assembles the vacuum Schur scalar, the mode energy
curve ``E(k) = -<v|Y(k)|v>``, the one-particle kernels ``D`` and ``C``,
and the derived decomposition (``c0``, ``psi``, ``F``, ``phi``, ``A``,
``S``) behind the Birman-Schwinger lower bound.  Momentum arguments enter
only through diagonal blueprints, so probe momenta off the grid are fine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fock
from .errors import ConfigError, IndefiniteOperatorError, SolverError
from .fock import FockBasis, SparseOperator
from .grid import FormFactor, MomentumGrid
from .spectral import SolverConfig, SpdSolver, ground_energy, lowest_eigenpairs, nu

Momentum = Union[float, Sequence[float], np.ndarray]

#: restriction tags for resolvent handles
TAIL_ONE = "tail>=1"
TAIL_TWO = "tail>=2"
FULL = "full"


@dataclass(eq=False)
class ResolventHandle:
    """One factorized resolvent: restriction, momentum shift, scalar shift."""

    kind: str
    k: np.ndarray
    shift: float
    start: int
    solver: SpdSolver
    solves: int = 0

    def solve_restricted(self, rhs: np.ndarray) -> np.ndarray:
        self.solves += 1
        return self.solver.solve(rhs)


@dataclass(eq=False)
class ReductionBundle:
    """All reduction objects of one instance at one regularization ``eps``.

    ``cmat_ext`` is the kernel ``C`` on grid modes plus the zero momentum:
    row/column 0 is the zero-momentum point, rows/columns ``1..M`` are the
    grid modes in grid order.  ``phi`` and ``smat`` are ``None`` when
    ``c0 <= 0`` (free coupling); the decomposition is then reported absent.
    """

    eps: float
    e0: float
    mode_norms: np.ndarray
    v: np.ndarray
    e_k: np.ndarray
    dmat: np.ndarray
    cmat_ext: np.ndarray
    c0: float
    psi: np.ndarray
    fmat: np.ndarray
    lam: np.ndarray
    lam0: float
    amat: np.ndarray
    omat: np.ndarray
    phi: Optional[np.ndarray] = None
    smat: Optional[np.ndarray] = None
    nu1: Optional[float] = None
    nu2: Optional[float] = None

    @property
    def c0_positive(self) -> bool:
        return self.c0 > 0.0

    @property
    def cmat(self) -> np.ndarray:
        """Kernel ``C`` restricted to grid modes."""
        return self.cmat_ext[1:, 1:]

    @property
    def a_norm(self) -> float:
        return float(np.max(np.abs(sla.eigvalsh(self.amat))))

    @property
    def phi_norm(self) -> Optional[float]:
        return None if self.phi is None else float(np.linalg.norm(self.phi))

    def s_min_eigenvalue(self) -> Optional[float]:
        if self.smat is None:
            return None
        return float(sla.eigvalsh(self.smat)[0])


@dataclass
class AssumptionReport:
    """Standing smallness assumptions evaluated on one instance."""

    e0: float
    nu2: float
    c0: float
    a_norm: Optional[float]
    #: c0 and the contraction bound only apply at non-zero coupling
    coupling_active: bool

    @property
    def e0_above_minus_one(self) -> bool:
        return self.e0 > -1.0

    @property
    def tail_gap_positive(self) -> bool:
        return self.nu2 > 0.0

    @property
    def c0_positive(self) -> bool:
        return self.c0 > 0.0

    @property
    def contraction(self) -> Optional[bool]:
        return None if self.a_norm is None else self.a_norm < 1.0

    def all_hold(self) -> bool:
        base = self.e0_above_minus_one and self.tail_gap_positive
        if not self.coupling_active:
            return base
        return base and self.c0_positive and bool(self.contraction)

    def to_json_dict(self) -> dict:
        return {
            "e0": self.e0,
            "nu2": self.nu2,
            "c0": self.c0,
            "a_norm": self.a_norm,
            "coupling_active": self.coupling_active,
            "e0_above_minus_one": self.e0_above_minus_one,
            "tail_gap_positive": self.tail_gap_positive,
            "c0_positive": self.c0_positive,
            "contraction": self.contraction,
            "all_hold": self.all_hold(),
        }


class ReductionWorkspace:
    """Shared state for all reduction computations on one instance.

    Builds the Hamiltonian once, solves for the ground energy, and hands
    out cached resolvent factorizations keyed by momentum shift.  All
    public methods treat vectors in the full Fock space; restrictions are
    handled internally through the contiguous sector layout.
    """

    def __init__(
        self,
        grid: MomentumGrid,
        ff: FormFactor,
        basis: FockBasis,
        config: Optional[SolverConfig] = None,
        xi: Optional[Sequence[float]] = None,
    ):
        if basis.nmax < 2:
            raise ConfigError("the reduction needs at least two boson sectors (nmax >= 2)")
        self.grid = grid
        self.ff = ff
        self.basis = basis
        self.config = config or SolverConfig()
        self.xi = np.zeros(grid.d) if xi is None else np.asarray(xi, dtype=float)
        if self.xi.shape != (grid.d,):
            raise ConfigError(f"xi has shape {self.xi.shape}, expected ({grid.d},)")

        self.phi_op = fock.field_operator(basis, ff)
        self.n_diag = fock.number_diagonal(basis)
        self.p_state = basis.momentum_sums(grid)
        self.hamiltonian = SparseOperator(
            matrix=(
                self.phi_op.matrix
                + sp.diags(self._kinetic_diag(np.zeros(grid.d)) + self.n_diag, format="csr")
            ),
            hermitian=True,
        )
        self.e0, self.ground_vector = ground_energy(self.hamiltonian, self.config)
        self.v = fock.one_boson_vector(basis, ff)
        self.start1 = basis.tail_start(1)
        self.start2 = basis.tail_start(2)
        self.sector1 = basis.sector_range(1)
        # mode j <-> the 1-boson basis state carrying that mode
        self.mode_state = np.array(
            [basis.index_of(np.eye(basis.n_modes, dtype=int)[j]) for j in range(basis.n_modes)],
            dtype=np.int64,
        )
        self._handles: Dict[Tuple, ResolventHandle] = {}
        self._u_cache: Dict[bytes, np.ndarray] = {}
        self.schur_gap = abs(self.e0 - self.vacuum_kinetic() + self.vacuum_schur(1.0))
        if self.schur_gap > 1e-6:
            raise SolverError(
                f"ground energy fails its vacuum Schur cross-check by {self.schur_gap:.3e}"
            )

    # -- low-level operator plumbing ------------------------------------

    def _as_momentum(self, k: Momentum) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(k, dtype=float))
        if arr.shape != (self.grid.d,):
            raise ConfigError(f"momentum has shape {arr.shape}, expected ({self.grid.d},)")
        return arr

    def _kinetic_diag(self, k: np.ndarray) -> np.ndarray:
        p = self.p_state + (k - self.xi)[None, :]
        return np.sum(p * p, axis=1)

    def vacuum_kinetic(self) -> float:
        """Kinetic energy of the vacuum state (``|xi|^2``)."""
        return float(self.xi @ self.xi)

    def restricted_matrix(self, kind: str, k: Momentum, shift: float) -> sp.csr_matrix:
        """Matrix of ``(P+k)^2 + Phi + N + shift`` on the given restriction."""
        k = self._as_momentum(k)
        diag = self._kinetic_diag(k) + self.n_diag + shift
        mat = self.phi_op.matrix + sp.diags(diag, format="csr")
        if kind == FULL:
            return mat.tocsr()
        start = self.start1 if kind == TAIL_ONE else self.start2
        return mat.tocsr()[start:, start:]

    def _handle(self, kind: str, k: Momentum, shift: float) -> ResolventHandle:
        k = self._as_momentum(k)
        key = (kind, k.tobytes(), round(shift, 14))
        handle = self._handles.get(key)
        if handle is None:
            start = {FULL: 0, TAIL_ONE: self.start1, TAIL_TWO: self.start2}[kind]
            mat = self.restricted_matrix(kind, k, shift)
            solver = SpdSolver(mat, self.config, label=f"{kind} resolvent at k={k.tolist()}")
            handle = ResolventHandle(kind=kind, k=k, shift=shift, start=start, solver=solver)
            self._handles[key] = handle
        return handle

    def y_handle(self, k: Momentum) -> ResolventHandle:
        """Resolvent of ``(P+k)^2 + Phi + N - e0`` on the >=1 tail."""
        return self._handle(TAIL_ONE, k, -self.e0)

    def z_handle(self, s: Momentum) -> ResolventHandle:
        """Full-space resolvent of ``(P+s)^2 + Phi + N + 1 - e0``."""
        return self._handle(FULL, s, 1.0 - self.e0)

    def x_handle(self, eps: float = 0.0) -> ResolventHandle:
        """Resolvent of ``H - e0 - 1 + eps`` on the >=2 tail."""
        if eps < 0:
            raise ConfigError(f"regularization must be >= 0, got {eps}")
        return self._handle(TAIL_TWO, np.zeros(self.grid.d), eps - 1.0 - self.e0)

    def _embed(self, restricted: np.ndarray, start: int) -> np.ndarray:
        out = np.zeros(self.basis.dim)
        out[start:] = restricted
        return out

    def apply_y(self, k: Momentum, vec: np.ndarray) -> np.ndarray:
        """Apply ``Y(k)`` to the >=1 tail of a full-space vector."""
        h = self.y_handle(k)
        return self._embed(h.solve_restricted(vec[h.start :]), h.start)

    def apply_z(self, s: Momentum, vec: np.ndarray) -> np.ndarray:
        """Apply ``Z(s)`` to a full-space vector."""
        return self.z_handle(s).solve_restricted(vec)

    def apply_x(self, vec: np.ndarray, eps: float = 0.0) -> np.ndarray:
        """Apply ``X(eps)`` to the >=2 tail of a full-space vector."""
        h = self.x_handle(eps)
        return self._embed(h.solve_restricted(vec[h.start :]), h.start)

    def project_tail(self, vec: np.ndarray, n: int) -> np.ndarray:
        """Zero out all sectors below ``n``."""
        out = vec.copy()
        out[: self.basis.tail_start(n)] = 0.0
        return out

    def project_sector(self, vec: np.ndarray, n: int) -> np.ndarray:
        """Keep only the ``n``-boson sector."""
        out = np.zeros_like(vec)
        sec = self.basis.sector_range(n)
        out[sec.start : sec.stop] = vec[sec.start : sec.stop]
        return out

    def vacuum_vector(self) -> np.ndarray:
        out = np.zeros(self.basis.dim)
        out[0] = 1.0
        return out

    def sector1_components(self, vec: np.ndarray) -> np.ndarray:
        """1-boson sector of a full vector as an M-vector in mode order."""
        return vec[self.mode_state]

    def embed_sector1(self, amplitudes: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`sector1_components`."""
        out = np.zeros(self.basis.dim)
        out[self.mode_state] = np.asarray(amplitudes, dtype=float)
        return out

    # -- scalar reduction objects ----------------------------------------

    def vacuum_schur(self, eps: float) -> float:
        """Vacuum Schur scalar ``<v| (H|>=1 - 1 - e0 + eps)^{-1} |v>``.

        Strictly decreasing in ``eps``; at ``eps = 1`` it returns the
        ground energy through ``e0 = <vacuum kinetic> - <v|Y(0)|v>``.
        """
        handle = self._handle(TAIL_ONE, np.zeros(self.grid.d), eps - 1.0 - self.e0)
        rhs = self.v[handle.start :]
        return float(rhs @ handle.solve_restricted(rhs))

    def y_on_v(self, k: Momentum) -> np.ndarray:
        """Cached ``Y(k)|v>`` as a full-space vector."""
        k = self._as_momentum(k)
        key = k.tobytes()
        got = self._u_cache.get(key)
        if got is None:
            got = self.apply_y(k, self.v)
            self._u_cache[key] = got
        return got

    def energy_curve(self, k: Momentum) -> float:
        """Mode energy ``E(k) = -<v|Y(k)|v>`` (equals ``e0`` at ``k = 0``)."""
        return -float(self.v @ self.y_on_v(k))

    # -- kernels ---------------------------------------------------------

    def d_kernel(self, eps: float = 0.0) -> np.ndarray:
        """Direct kernel ``D(k,l) = <v| a_k X(eps) a_l^+ |v>`` on grid modes.

        This is the exact Schur coupling of the truncated operator through
        the >=2 tail (no pull-through rewriting involved).
        """
        m = self.basis.n_modes
        handle = self.x_handle(eps)
        rhs = np.empty((self.basis.dim - handle.start, m))
        for j in range(m):
            raised = fock.creator(self.basis, j).matrix @ self.v
            rhs[:, j] = raised[handle.start :]
        solved = handle.solver.solve_many(rhs)
        handle.solves += m
        return rhs.T @ solved

    def _c_points(self) -> np.ndarray:
        """Momentum points of the extended kernel: zero first, then modes."""
        return np.vstack([np.zeros((1, self.grid.d)), self.grid.modes])

    def c_kernel(self, k: Momentum, l: Momentum) -> float:
        """Kernel ``C(k,l) = 1/(1+e0) - <w_k|Z(k+l)|w_l> - <Yv_k|X|Yv_l>``.

        Here ``w_k = vacuum - Y(k)|v>`` and ``Yv_k`` is the >=2 tail of
        ``Y(k)|v>``.  The sum ``k+l`` enters only through a diagonal, so
        the points need not be grid modes.
        """
        k = self._as_momentum(k)
        l = self._as_momentum(l)
        w_k = self.vacuum_vector() - self.y_on_v(k)
        w_l = self.vacuum_vector() - self.y_on_v(l)
        term1 = float(w_k @ self.apply_z(k + l, w_l))
        xk = self.y_on_v(k)[self.start2 :]
        xl = self.y_on_v(l)[self.start2 :]
        term2 = float(xk @ self.x_handle(0.0).solver.solve(xl))
        return 1.0 / (1.0 + self.e0) - term1 - term2

    def c_matrix(self) -> np.ndarray:
        """Extended kernel ``C`` on zero + all grid modes, batched solves."""
        points = self._c_points()
        n = points.shape[0]
        dim = self.basis.dim
        u = np.empty((dim, n))
        for i in range(n):
            u[:, i] = self.y_on_v(points[i])
        w = -u
        w[0, :] += 1.0  # vacuum component
        g2 = u[self.start2 :, :]
        x2 = self.x_handle(0.0).solver.solve_many(g2)
        term2 = g2.T @ x2

        term1 = np.empty((n, n))
        groups: Dict[bytes, List[Tuple[int, int]]] = {}
        sums: Dict[bytes, np.ndarray] = {}
        for i in range(n):
            for j in range(i, n):
                s = points[i] + points[j]
                key = np.round(s / self.grid.h).astype(np.int64).tobytes()
                groups.setdefault(key, []).append((i, j))
                sums[key] = s
        for key, pairs in groups.items():
            handle = self.z_handle(sums[key])
            cols = sorted({j for _, j in pairs})
            solved = handle.solver.solve_many(w[:, cols])
            handle.solves += len(cols)
            pos = {j: c for c, j in enumerate(cols)}
            for i, j in pairs:
                val = float(w[:, i] @ solved[:, pos[j]])
                term1[i, j] = val
                term1[j, i] = val
        return 1.0 / (1.0 + self.e0) - term1 - term2

    def lambda_direct(self, k: Momentum) -> float:
        """Transfer scalar ``lam(k) = <w_k|Z(k)|w_0> + <Yv_k|X|Yv_0>``.

        Evaluated on its own solve chain; coincides with
        ``1/(1+e0) - C(k, 0)`` by construction, so the pair of code paths
        cross-checks the kernel bookkeeping.
        """
        k = self._as_momentum(k)
        w_k = self.vacuum_vector() - self.y_on_v(k)
        w_0 = self.vacuum_vector() - self.y_on_v(np.zeros(self.grid.d))
        term1 = float(w_k @ self.apply_z(k, w_0))
        xk = self.y_on_v(k)[self.start2 :]
        x0 = self.y_on_v(np.zeros(self.grid.d))[self.start2 :]
        term2 = float(xk @ self.x_handle(0.0).solver.solve(x0))
        return term1 + term2

    # -- bundle assembly ---------------------------------------------------

    def one_particle_operator(self, eps: float, dmat: Optional[np.ndarray] = None) -> np.ndarray:
        """Schur complement on the 1-boson sector at spectral offset ``eps``.

        ``O(eps) = eps + k^2 - e0 - D(eps) + |v><v| / (1 + e0 - eps)`` as an
        ``M x M`` matrix; its zero eigenvalues flag fiber eigenvalues at
        energy ``e0 + 1 - eps``.  A nonzero fiber shift is folded into the
        kinetic diagonals (one-boson and vacuum blocks alike), which keeps
        the matrix the exact Schur complement of the fiber Hamiltonian.
        """
        kin = self._kinetic_diag(np.zeros(self.grid.d))
        denom = 1.0 + self.e0 - eps - float(kin[0])
        if abs(denom) < 1e-12:
            raise IndefiniteOperatorError(
                f"vacuum block is singular at eps={eps} (e0={self.e0})"
            )
        if dmat is None:
            dmat = self.d_kernel(eps)
        vvals = self.ff.values
        return np.diag(eps + kin[self.mode_state] - self.e0) - dmat + np.outer(vvals, vvals) / denom

    def build_bundle(self, eps: float = 0.0) -> ReductionBundle:
        """Assemble every reduction object of this instance at once.

        The momentum-weighted decomposition (``A``, ``phi``, ``S``) is a
        zero-fiber-shift construction, so a workspace with a nonzero shift
        cannot build a bundle.
        """
        if float(np.linalg.norm(self.xi)) != 0.0:
            raise ConfigError(
                "the weighted decomposition requires a zero fiber shift; "
                "spectra and Schur complements remain available"
            )
        modes = self.grid.modes
        norms = np.linalg.norm(modes, axis=1)
        vvals = self.ff.values
        cext = self.c_matrix()
        c0 = float(cext[0, 0])
        psi = cext[1:, 0] - c0
        fmat = cext[1:, 1:] - c0 - psi[:, None] - psi[None, :]
        e_k = np.array([self.energy_curve(k) for k in modes])
        lam0 = 1.0 / (1.0 + self.e0) - c0
        lam = 1.0 / (1.0 + self.e0) - cext[1:, 0]

        amat = np.diag((e_k - self.e0) / norms**2) + (
            (vvals / norms)[:, None] * fmat * (vvals / norms)[None, :]
        )
        phi = None
        smat = None
        if c0 > 0.0:
            phi = vvals * psi / (np.sqrt(c0) * norms)
            smat = np.eye(len(norms)) + amat - np.outer(phi, phi)

        dmat = self.d_kernel(eps)
        omat = self.one_particle_operator(eps, dmat=dmat)
        nu1 = nu(self.hamiltonian, self.e0, 1, self.basis, self.config)
        nu2 = nu(self.hamiltonian, self.e0, 2, self.basis, self.config)
        return ReductionBundle(
            eps=eps,
            e0=self.e0,
            mode_norms=norms,
            v=vvals.copy(),
            e_k=e_k,
            dmat=dmat,
            cmat_ext=cext,
            c0=c0,
            psi=psi,
            fmat=fmat,
            lam=lam,
            lam0=lam0,
            amat=amat,
            omat=omat,
            phi=phi,
            smat=smat,
            nu1=nu1,
            nu2=nu2,
        )

    # -- spectral correspondence ------------------------------------------

    def excited_eigenvalue_test(self, eps: float, tol: float = 1e-7) -> dict:
        """Probe for a fiber eigenvalue at energy ``e0 + 1 - eps``.

        Returns the smallest and the smallest-magnitude eigenvalue of the
        one-particle Schur complement ``O(eps)``; the verdict is positive
        when an eigenvalue of ``O(eps)`` vanishes to tolerance.
        """
        if not 0.0 <= eps <= 1.0:
            raise ConfigError(f"spectral offset must lie in [0, 1], got {eps}")
        vals = sla.eigvalsh(self.one_particle_operator(eps))
        smallest = float(vals[0])
        min_abs = float(np.min(np.abs(vals)))
        return {
            "eps": eps,
            "energy": self.e0 + 1.0 - eps,
            "smallest_eigenvalue": smallest,
            "min_abs_eigenvalue": min_abs,
            "eigenvalue_exists": bool(min_abs <= tol),
        }

    def bs_limit_check(
        self, bundle: ReductionBundle, eps_ladder: Iterable[float] = (1e-1, 1e-2, 1e-3)
    ) -> dict:
        """Regularized Birman-Schwinger infima against ``min spec S``.

        For each ladder value computes the smallest eigenvalue of
        ``(k^2 + eps)^{-1/2} O(0) (k^2 + eps)^{-1/2}`` and reports the gap
        to the smallest eigenvalue of ``S``.
        """
        ladder = sorted(eps_ladder, reverse=True)
        if not ladder:
            raise ConfigError("need at least one regularization value")
        omat0 = self.one_particle_operator(0.0, dmat=bundle.dmat)
        ksq = bundle.mode_norms**2
        values = []
        for eps in ladder:
            if eps <= 0:
                raise ConfigError(f"regularization must be positive, got {eps}")
            scale = 1.0 / np.sqrt(ksq + eps)
            weighted = scale[:, None] * omat0 * scale[None, :]
            values.append(float(sla.eigvalsh(weighted)[0]))
        target = bundle.s_min_eigenvalue()
        gap = None if target is None else abs(values[-1] - target)
        return {
            "eps_ladder": list(ladder),
            "values": values,
            "s_min_eigenvalue": target,
            "final_gap": gap,
        }

    def assumptions(self, bundle: Optional[ReductionBundle] = None) -> AssumptionReport:
        """Evaluate the standing assumptions on this instance."""
        if bundle is None:
            bundle = self.build_bundle()
        nu2 = bundle.nu2
        if nu2 is None:
            nu2 = nu(self.hamiltonian, self.e0, 2, self.basis, self.config)
        active = self.ff.g > 0.0
        return AssumptionReport(
            e0=self.e0,
            nu2=float(nu2),
            c0=bundle.c0,
            a_norm=bundle.a_norm if active else None,
            coupling_active=active,
        )


def build_workspace(
    grid: MomentumGrid,
    ff: FormFactor,
    nmax: int,
    config: Optional[SolverConfig] = None,
    xi: Optional[Sequence[float]] = None,
    fock_cap: int = fock.DEFAULT_FOCK_CAP,
) -> ReductionWorkspace:
    """Convenience constructor: enumerate the basis and set up a workspace."""
    basis = fock.enumerate_basis(grid.size, nmax, cap=fock_cap)
    return ReductionWorkspace(grid, ff, basis, config=config, xi=xi)
