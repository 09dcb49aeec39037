"""Independent ground-truth generators backing the example and acceptance
tests: a principal-eigenvalue oracle for the quadratic-Hamiltonian ergodic
problem, fine-grid self-convergence references, and an exhaustive pair scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NonPositiveEigenvector, TooManyPairs
from .grid import (
    DiffusionStencil,
    ScalarField,
    TorusGrid,
    wrapped_displacement,
)
from .problem import DiffusionSpec

__all__ = [
    "OracleResult",
    "hopf_cole_ergodic",
    "fine_grid_reference",
    "restrict_to_coarse",
    "brute_pair_max",
    "BRUTE_PAIR_CAP",
]

BRUTE_PAIR_CAP = 10**8


@dataclass(frozen=True)
class OracleResult:
    kind: str
    c: Optional[float]
    field: Optional[ScalarField]
    error_estimate: float

    def __post_init__(self):
        if self.error_estimate < 0:
            raise ValueError("error_estimate must be nonnegative")


def hopf_cole_ergodic(
    ell: ScalarField, nu: float, tol: float = 1e-10, max_iter: int = 500
) -> OracleResult:
    """Ergodic constant and corrector for A = nu I, H = |p|^2 + ell(x).

    The substitution v = -nu log(phi) turns the ergodic problem into the
    principal eigenvalue problem (-nu^2 Lap - ell) phi = -c phi, solved here
    by shifted inverse power iteration on the discrete periodic Laplacian.
    The returned field is anchored to 0 at node 0.
    """
    if nu <= 0:
        raise ValueError("the eigenvalue transform needs nu > 0")
    grid = ell.grid
    n = grid.size
    lap = DiffusionStencil(grid, DiffusionSpec.isotropic(1.0, grid.dim).a_at_nodes(grid))
    ell_flat = ell.flat()
    operator = (-(nu**2) * lap.as_sparse() - sp.diags(ell_flat)).tocsc()
    # shift strictly below the bottom of the spectrum: B >= -max(ell) I
    shift = -float(np.max(ell_flat)) - 1.0
    solver = splu(operator - shift * sp.identity(n, format="csc"))
    phi = np.ones(n)
    lam = np.inf
    for _ in range(max_iter):
        w = solver.solve(phi)
        w /= np.linalg.norm(w)
        lam_new = float(w @ (operator @ w))
        stable = abs(lam_new - lam) <= tol * max(1.0, abs(lam_new))
        phi, lam = w, lam_new
        if stable and float(
            np.linalg.norm(operator @ phi - lam * phi)
        ) <= tol * (1.0 + abs(lam)) * math.sqrt(n):
            break
    if np.sum(phi) < 0:
        phi = -phi
    if np.min(phi) <= 0:
        raise NonPositiveEigenvector(
            "principal eigenvector has non-positive entries"
        )
    eig_residual = float(np.linalg.norm(operator @ phi - lam * phi))
    v = -nu * np.log(phi)
    v -= v[0]
    return OracleResult(
        kind="hopf_cole",
        c=-lam,
        field=ScalarField(grid, v.reshape(grid.counts)),
        error_estimate=eig_residual,
    )


def restrict_to_coarse(fine: ScalarField, coarse_grid: TorusGrid) -> ScalarField:
    """Subsample a fine-grid field at the nodes of a coarser, nested grid."""
    factors = []
    for n_f, n_c in zip(fine.grid.counts, coarse_grid.counts):
        if n_f % n_c:
            raise ValueError("fine grid must refine the coarse grid by an integer factor")
        factors.append(n_f // n_c)
    if fine.grid.dim == 1:
        vals = fine.values[:: factors[0]]
    else:
        vals = fine.values[:: factors[0], :: factors[1]]
    return ScalarField(coarse_grid, vals)


def fine_grid_reference(
    solve: Callable[[TorusGrid], ScalarField],
    grid: TorusGrid,
    refine_factor: int,
) -> OracleResult:
    """Self-convergence reference: re-solve on a refined grid and restrict.

    solve maps a grid to the solution field for the same problem; the
    sup-gap between the coarse solve and the restricted fine solve is the
    error estimate.
    """
    if refine_factor not in (2, 4):
        raise ValueError("refine_factor must be 2 or 4")
    fine_grid = TorusGrid(tuple(n * refine_factor for n in grid.counts))
    fine = solve(fine_grid)
    coarse = solve(grid)
    restricted = restrict_to_coarse(fine, grid)
    gap = float(np.max(np.abs(restricted.values - coarse.values)))
    return OracleResult(
        kind="fine_grid", c=None, field=restricted, error_estimate=gap
    )


def brute_pair_max(field: ScalarField, penalty: Callable[[np.ndarray], np.ndarray]):
    """Exhaustive max over all node pairs of v(x) - v(y) - penalty(d(x, y)).

    Enumerates rows in descending order (the reverse of the analyzer's scan)
    with no subsampling; used to validate the subsampled path. Raises
    TooManyPairs above the hard cap.
    """
    grid = field.grid
    n = grid.size
    if n * (n - 1) // 2 > BRUTE_PAIR_CAP:
        raise TooManyPairs(f"{n * (n - 1) // 2} pairs exceed the cap {BRUTE_PAIR_CAP}")
    coords = grid.node_coordinates()
    vals = field.flat()
    best = -np.inf
    best_pair = (0, 0)
    for i in range(n - 1, 0, -1):
        deltas = wrapped_displacement(coords[i] - coords[:i])
        dist = np.sqrt(np.sum(deltas**2, axis=-1))
        scores = np.abs(vals[i] - vals[:i]) - penalty(dist)
        j = int(np.argmax(scores))
        if scores[j] > best:
            best = float(scores[j])
            # report the ordered pair realizing v(x) - v(y) - psi
            if vals[i] >= vals[j]:
                best_pair = (i, j)
            else:
                best_pair = (j, i)
    return best, best_pair
