"""Periodic lattice geometry, scalar fields and finite-difference stencils on
the flat torus [0,1)^d, d in {1, 2}.

Grids and fields are immutable after construction; every operation here is a
pure read, so they are safe to share across threads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import StencilNotMonotone

__all__ = [
    "TorusGrid",
    "ScalarField",
    "periodic_distance",
    "wrapped_displacement",
    "one_sided_gradients",
    "one_sided_gradient_fields",
    "centered_gradient_fields",
    "second_difference_fields",
    "DiffusionStencil",
    "diffusion_term",
    "sample_function",
    "field_to_csv",
    "field_from_csv",
    "field_to_json",
    "field_from_json",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice on [0,1)^d with wrap-around indexing.

    counts holds the per-axis cell counts n_i; the spacing is h_i = 1/n_i and
    node (i_0, ..) sits at (i_0*h_0, ..). There are no boundary cells: index
    arithmetic wraps modulo n_i on every axis.
    """

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(n) for n in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {len(counts)}")
        if any(n < 8 for n in counts):
            raise ValueError(f"every axis needs at least 8 cells, got {counts}")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def node_coordinates(self) -> np.ndarray:
        """All lattice points as an (size, dim) array, row-major order."""
        axes = [np.arange(n) / n for n in self.counts]
        if self.dim == 1:
            return axes[0][:, None]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def coordinate(self, index: Sequence[int] | int) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(index, dtype=int))
        return np.array(
            [(idx[k] % self.counts[k]) / self.counts[k] for k in range(self.dim)]
        )


class ScalarField:
    """Real values attached to the nodes of a TorusGrid.

    The value array is shaped like ``grid.counts`` and frozen after
    construction. Multi-index access wraps modulo the axis counts.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=float).reshape(grid.counts)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def at(self, index: Sequence[int] | int) -> float:
        idx = np.atleast_1d(np.asarray(index, dtype=int))
        wrapped = tuple(int(idx[k]) % self.grid.counts[k] for k in range(self.grid.dim))
        return float(self.values[wrapped])

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def shift(self, constant: float) -> "ScalarField":
        return ScalarField(self.grid, self.values + constant)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def wrapped_displacement(dx: np.ndarray) -> np.ndarray:
    """Reduce coordinate differences to the torus fundamental range.

    Returns values in [-1/2, 1/2); works elementwise on arrays.
    """
    return dx - np.round(dx)


def periodic_distance(grid: TorusGrid, i, j) -> float:
    """Geodesic (minimum over integer shifts) distance between two nodes."""
    xi = grid.coordinate(i)
    xj = grid.coordinate(j)
    return float(np.sqrt(np.sum(wrapped_displacement(xi - xj) ** 2)))


def one_sided_gradients(field: ScalarField, i) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward difference quotients at one node.

    p_minus[k] = (v_i - v_{i-e_k})/h_k, p_plus[k] = (v_{i+e_k} - v_i)/h_k,
    with indices wrapping on every axis.
    """
    grid = field.grid
    idx = np.atleast_1d(np.asarray(i, dtype=int))
    p_minus = np.empty(grid.dim)
    p_plus = np.empty(grid.dim)
    v0 = field.at(idx)
    for k in range(grid.dim):
        step = np.zeros(grid.dim, dtype=int)
        step[k] = 1
        h = grid.spacing[k]
        p_minus[k] = (v0 - field.at(idx - step)) / h
        p_plus[k] = (field.at(idx + step) - v0) / h
    return p_minus, p_plus


def one_sided_gradient_fields(values: np.ndarray, grid: TorusGrid):
    """Vectorized one-sided gradients for a whole field.

    Returns (p_minus, p_plus), each a list of arrays (one per axis) shaped
    like the field.
    """
    p_minus, p_plus = [], []
    for k in range(grid.dim):
        h = grid.spacing[k]
        p_minus.append((values - np.roll(values, 1, axis=k)) / h)
        p_plus.append((np.roll(values, -1, axis=k) - values) / h)
    return p_minus, p_plus


def centered_gradient_fields(values: np.ndarray, grid: TorusGrid):
    """Per-axis centered difference quotients, shaped like the field."""
    out = []
    for k in range(grid.dim):
        h = grid.spacing[k]
        out.append((np.roll(values, -1, axis=k) - np.roll(values, 1, axis=k)) / (2 * h))
    return out


def second_difference_fields(values: np.ndarray, grid: TorusGrid):
    """Per-axis second difference quotients (v_{i+1} - 2v_i + v_{i-1})/h^2."""
    out = []
    for k in range(grid.dim):
        h = grid.spacing[k]
        out.append(
            (np.roll(values, -1, axis=k) - 2 * values + np.roll(values, 1, axis=k))
            / h**2
        )
    return out


class DiffusionStencil:
    """Monotone second-order discretization of v -> trace(A(x) D^2 v).

    In 1D this is the standard three-point second difference scaled by
    a_11(x). In 2D the mixed term uses the 7-point stencil that slants with
    the sign of a_12(x); it is monotone (all off-center weights >= 0) exactly
    when |a_12| <= min(a_11 h_2/h_1, a_22 h_1/h_2) at every node, and
    construction fails with StencilNotMonotone otherwise.
    """

    def __init__(self, grid: TorusGrid, a_nodes: np.ndarray):
        # a_nodes: array shaped counts + (d, d) with A(x) = sigma sigma^T per node
        self.grid = grid
        a_nodes = np.asarray(a_nodes, dtype=float)
        expected = tuple(grid.counts) + (grid.dim, grid.dim)
        if a_nodes.shape != expected:
            raise ValueError(f"A samples must have shape {expected}")
        h = grid.spacing
        # shifts: list of (shift tuple, weight array); weights multiply (v_shifted - v_center)
        self.shifts: list[tuple[tuple[int, ...], np.ndarray]] = []
        if grid.dim == 1:
            w = a_nodes[..., 0, 0] / h[0] ** 2
            self._check_nonneg(w, "a_11")
            self.shifts = [((1,), w), ((-1,), w.copy())]
        else:
            a11 = a_nodes[..., 0, 0]
            a22 = a_nodes[..., 1, 1]
            a12 = 0.5 * (a_nodes[..., 0, 1] + a_nodes[..., 1, 0])
            s = np.abs(a12) / (h[0] * h[1])
            wx = a11 / h[0] ** 2 - s
            wy = a22 / h[1] ** 2 - s
            scale = max(np.max(a11), np.max(a22), 1.0) / min(h) ** 2
            if np.min(wx) < -1e-12 * scale or np.min(wy) < -1e-12 * scale:
                raise StencilNotMonotone(
                    "cross term |a_12| exceeds min(a_11 h2/h1, a_22 h1/h2) "
                    f"(worst axis weight {min(np.min(wx), np.min(wy)):.3e})"
                )
            wx = np.maximum(wx, 0.0)
            wy = np.maximum(wy, 0.0)
            w_pp = np.maximum(a12, 0.0) / (h[0] * h[1])
            w_pm = np.maximum(-a12, 0.0) / (h[0] * h[1])
            self.shifts = [
                ((1, 0), wx),
                ((-1, 0), wx.copy()),
                ((0, 1), wy),
                ((0, -1), wy.copy()),
                ((1, 1), w_pp),
                ((-1, -1), w_pp.copy()),
                ((1, -1), w_pm),
                ((-1, 1), w_pm.copy()),
            ]

    @staticmethod
    def _check_nonneg(w: np.ndarray, name: str):
        if np.min(w) < 0:
            raise StencilNotMonotone(f"{name} negative at some node")

    def apply(self, values: np.ndarray) -> np.ndarray:
        """trace(A D^2 v) at every node (array shaped like the field)."""
        out = np.zeros_like(values)
        for shift, w in self.shifts:
            shifted = values
            for axis, s in enumerate(shift):
                if s:
                    shifted = np.roll(shifted, -s, axis=axis)
            out += w * (shifted - values)
        return out

    def neighbor_weights(self):
        """Off-center (shift, weight array) pairs; all weights are >= 0."""
        return [(shift, w.copy()) for shift, w in self.shifts]

    def as_sparse(self):
        """The stencil as a scipy CSR matrix acting on flattened fields."""
        import scipy.sparse as sp

        n = self.grid.size
        counts = self.grid.counts
        flat_index = np.arange(n).reshape(counts)
        rows, cols, vals = [], [], []
        diag = np.zeros(counts)
        for shift, w in self.shifts:
            target = flat_index
            for axis, s in enumerate(shift):
                if s:
                    target = np.roll(target, -s, axis=axis)
            rows.append(flat_index.ravel())
            cols.append(target.ravel())
            vals.append(w.ravel())
            diag -= w
        rows.append(flat_index.ravel())
        cols.append(flat_index.ravel())
        vals.append(diag.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )


def diffusion_term(field: ScalarField, diff, i) -> float:
    """Monotone approximation of trace(A(x_i) D^2 v(x_i)) at one node."""
    stencil = DiffusionStencil(field.grid, diff.a_at_nodes(field.grid))
    idx = tuple(
        int(v) % field.grid.counts[k]
        for k, v in enumerate(np.atleast_1d(np.asarray(i, dtype=int)))
    )
    return float(stencil.apply(field.values)[idx])


def sample_function(grid: TorusGrid, fn: Callable[[np.ndarray], np.ndarray]) -> ScalarField:
    """Sample fn (taking (N, d) coordinates) at the grid nodes."""
    vals = np.asarray(fn(grid.node_coordinates()), dtype=float)
    return ScalarField(grid, vals.reshape(grid.counts))


# --- serialization -----------------------------------------------------------
#
# CSV: header "index_0[,index_1],value", row-major rows.
# JSON envelope: {"grid": {"dim": d, "counts": [...]}, "values": [...]}.


def field_to_csv(field: ScalarField, path):
    grid = field.grid
    header = ["index_0", "value"] if grid.dim == 1 else ["index_0", "index_1", "value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        if grid.dim == 1:
            for i, v in enumerate(field.values):
                writer.writerow([i, repr(float(v))])
        else:
            for i in range(grid.counts[0]):
                for j in range(grid.counts[1]):
                    writer.writerow([i, j, repr(float(field.values[i, j]))])


def field_from_csv(path) -> ScalarField:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 1
        indices, values = [], []
        for row in reader:
            indices.append(tuple(int(c) for c in row[:dim]))
            values.append(float(row[dim]))
    counts = tuple(max(idx[k] for idx in indices) + 1 for k in range(dim))
    grid = TorusGrid(counts)
    arr = np.empty(counts)
    for idx, v in zip(indices, values):
        arr[idx] = v
    return ScalarField(grid, arr)


def field_to_json(field: ScalarField) -> str:
    payload = {
        "grid": {"dim": field.grid.dim, "counts": list(field.grid.counts)},
        "values": [float(v) for v in field.flat()],
    }
    return json.dumps(payload)


def field_from_json(text: str) -> ScalarField:
    payload = json.loads(text)
    grid = TorusGrid(tuple(payload["grid"]["counts"]))
    return ScalarField(grid, np.array(payload["values"]).reshape(grid.counts))
