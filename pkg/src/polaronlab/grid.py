"""Symmetric momentum grids and coupling form factors.

The single-boson momenta live on the lattice ``h * Z^d`` intersected with
the cube ``[-K, K]^d``, with the origin removed.  A form factor attaches a
real, even amplitude ``v_k = g * w(k) * h**(d/2)`` to every mode; the
``h**(d/2)`` quadrature weight is folded in once here so that all
downstream operators are plain weighted sums over modes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionCapError

#: profiles available for the radial amplitude w(k)
PROFILES = ("froehlich", "gaussian", "constant")

DEFAULT_MODE_CAP = 16384


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    """Finite symmetric momentum grid.

    Attributes
    ----------
    d : spatial dimension (>= 1)
    K : cube half-width, a positive integer multiple of ``h``
    h : lattice spacing (> 0)
    index : integer coordinates of the modes, shape ``(M, d)``; mode ``j``
        sits at momentum ``index[j] * h``.  Ordered lexicographically by
        integer coordinates; the origin is excluded.
    """

    d: int
    K: float
    h: float
    index: np.ndarray = field(repr=False)

    @property
    def modes(self) -> np.ndarray:
        """Momentum vectors, shape ``(M, d)`` float64."""
        return self.index * self.h

    @property
    def size(self) -> int:
        return self.index.shape[0]

    def norms(self) -> np.ndarray:
        """Euclidean norm |k| of every mode, shape ``(M,)``."""
        return np.linalg.norm(self.modes, axis=1)

    def mode_id(self, k: Sequence[float]) -> int:
        """Index of the grid mode equal to ``k``; raises if off-grid."""
        k = np.asarray(k, dtype=float)
        if k.shape != (self.d,):
            raise ConfigError(f"momentum has shape {k.shape}, expected ({self.d},)")
        steps = k / self.h
        ints = np.rint(steps).astype(np.int64)
        if not np.allclose(steps, ints, atol=1e-9):
            raise ConfigError(f"momentum {k.tolist()} is not on the grid")
        hits = np.nonzero((self.index == ints).all(axis=1))[0]
        if hits.size == 0:
            raise ConfigError(f"momentum {k.tolist()} is outside the grid box")
        return int(hits[0])

    def negation_table(self) -> np.ndarray:
        """Index of ``-k`` for every mode ``k`` (the grid is symmetric)."""
        order = {tuple(row): j for j, row in enumerate(self.index.tolist())}
        return np.array([order[tuple((-row).tolist())] for row in self.index], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FormFactor:
    """Even real coupling amplitudes on a grid.

    ``values[j]`` is ``v_k = g * w(k_j) * h**(d/2)`` for mode ``j``.
    """

    profile: str
    g: float
    alpha: float
    values: np.ndarray = field(repr=False)

    @property
    def norm(self) -> float:
        """l2 norm of the amplitude vector."""
        return float(np.linalg.norm(self.values))


def build_grid(d: int, K: float, h: float, mode_cap: int = DEFAULT_MODE_CAP) -> MomentumGrid:
    """Construct the symmetric grid ``h*Z^d`` in ``[-K, K]^d`` minus the origin.

    The mode count is ``(2K/h + 1)**d - 1``; ``K`` must be a positive
    integer multiple of ``h``.
    """
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    if h <= 0:
        raise ConfigError(f"spacing must be positive, got {h}")
    if K <= 0:
        raise ConfigError(f"half-width must be positive, got {K}")
    steps = K / h
    m = int(round(steps))
    if m < 1 or abs(steps - m) > 1e-9:
        raise ConfigError(f"K={K} is not a positive integer multiple of h={h}")
    count = (2 * m + 1) ** d - 1
    if count > mode_cap:
        raise DimensionCapError(f"grid would have {count} modes, cap is {mode_cap}")
    axis = np.arange(-m, m + 1, dtype=np.int64)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    index = np.stack([g.ravel() for g in mesh], axis=1)
    index = index[np.any(index != 0, axis=1)]
    # meshgrid with 'ij' already yields lexicographic order on the tuples
    return MomentumGrid(d=d, K=float(K), h=float(h), index=index)


def _profile_amplitude(profile: str, norms: np.ndarray, alpha: float) -> np.ndarray:
    if profile == "froehlich":
        return norms ** (-alpha)
    if profile == "gaussian":
        return np.exp(-(norms**2))
    if profile == "constant":
        return np.ones_like(norms)
    raise ConfigError(f"unknown form-factor profile {profile!r}, expected one of {PROFILES}")


def sample_form_factor(
    grid: MomentumGrid, profile: str, g: float, alpha: float = 1.0
) -> FormFactor:
    """Sample ``v_k = g * w(k) * h**(d/2)`` on every grid mode.

    The singular profile exponent ``alpha`` only applies to ``froehlich``;
    it must satisfy ``0 < alpha < d`` so that the squared amplitude stays
    locally summable under refinement.
    """
    if g < 0:
        raise ConfigError(f"coupling must be non-negative, got {g}")
    if profile == "froehlich" and not 0 < alpha < grid.d:
        raise ConfigError(
            f"froehlich exponent must satisfy 0 < alpha < d={grid.d}, got {alpha}"
        )
    norms = grid.norms()
    weight = grid.h ** (grid.d / 2.0)
    values = g * _profile_amplitude(profile, norms, alpha) * weight
    if not np.all(np.isfinite(values)):
        raise ConfigError("form factor produced non-finite amplitudes")
    return FormFactor(profile=profile, g=float(g), alpha=float(alpha), values=values)


def triple_norm(
    grid: MomentumGrid,
    ff: FormFactor,
    probes: Optional[Iterable[Sequence[float]]] = None,
) -> float:
    """Probe-sampled lower bound for ``sup_p ||(1 + |. - p|)^{-1} v||``.

    Evaluates the weighted l2 norm ``(sum_j v_j^2 / (1 + |k_j - p|)^2)^{1/2}``
    at every probe point ``p`` and returns the maximum.  The default probe
    set is all grid modes plus the origin.
    """
    if probes is None:
        probe_arr = np.vstack([grid.modes, np.zeros((1, grid.d))])
    else:
        probe_arr = np.asarray(list(probes), dtype=float)
        if probe_arr.size == 0:
            raise ConfigError("triple_norm needs at least one probe point")
        probe_arr = probe_arr.reshape(len(probe_arr), grid.d)
    modes = grid.modes
    best = 0.0
    for p in probe_arr:
        dist = np.linalg.norm(modes - p[None, :], axis=1)
        val = float(np.sqrt(np.sum((ff.values / (1.0 + dist)) ** 2)))
        best = max(best, val)
    return best


def export_form_factor_csv(grid: MomentumGrid, ff: FormFactor, path=None) -> str:
    """Render the sampled amplitudes as CSV (k components, then v_k).

    Returns the CSV text; also writes it to ``path`` when one is given.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"k{i}" for i in range(grid.d)] + ["v"])
    for row, v in zip(grid.modes, ff.values):
        writer.writerow([repr(float(x)) for x in row] + [repr(float(v))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
