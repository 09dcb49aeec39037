"""Monotone discrete operator: Lax-Friedrichs numerical Hamiltonian plus the
monotone diffusion stencil.

The discrete residual of the discounted problem at node i is

    F(v)_i = eps v_i - trace(A(x_i) D^2 v)_i + H_LF(x_i, p^-, p^+)

with H_LF(x, p^-, p^+) = H(x, (p^- + p^+)/2) - sum_k theta_k (p_k^+ - p_k^-)/2.
The splitting only needs pointwise H evaluations, so non-convex Hamiltonians
are handled uniformly; theta must dominate the sampled |dH/dp_k| over the
gradient box for the scheme to be monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .grid import (
    DiffusionStencil,
    ScalarField,
    TorusGrid,
    one_sided_gradient_fields,
)
from .problem import DiffusionSpec, HamiltonianSpec, _as_points

__all__ = [
    "SchemeConfig",
    "calibrate_theta",
    "sampled_gradient_derivative_max",
    "validate_theta",
    "lf_hamiltonian",
    "SchemeOperator",
    "residual",
    "jacobian_apply",
]

JACOBIAN_PROBE = 1e-6
THETA_MARGIN = 1.05


@dataclass(frozen=True)
class SchemeConfig:
    """Artificial viscosity coefficients and solver knobs.

    theta holds one coefficient per axis (same units as |dH/dp|);
    gradient_box holds the per-axis bound P_k on |p_k| that theta was sized
    for. tol_residual is the sup-norm target for the discrete residual.
    """

    theta: tuple[float, ...]
    gradient_box: tuple[float, ...]
    tol_residual: float = 1e-8
    max_newton: int = 80
    damping: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(
            self, "gradient_box", tuple(float(p) for p in self.gradient_box)
        )
        if self.tol_residual <= 0:
            raise ValueError("tol_residual must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    def with_theta(self, theta, gradient_box) -> "SchemeConfig":
        return replace(self, theta=tuple(theta), gradient_box=tuple(gradient_box))


def _box_lattice(gradient_box: Sequence[float], per_axis: int) -> np.ndarray:
    axes = [np.linspace(-p, p, per_axis) for p in gradient_box]
    if len(axes) == 1:
        return axes[0][:, None]
    xs = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in xs], axis=1)


def sampled_gradient_derivative_max(
    spec: HamiltonianSpec,
    grid: TorusGrid,
    gradient_box: Sequence[float],
    max_x_samples: int = 64,
    per_axis: int = 33,
) -> np.ndarray:
    """Per-axis max of |dH/dp_k| over grid points and the gradient box.

    The derivative is sampled by central differencing, which is the quantity
    theta has to dominate for monotonicity.
    """
    pts = grid.node_coordinates()
    if pts.shape[0] > max_x_samples:
        pts = pts[:: pts.shape[0] // max_x_samples]
    if grid.dim == 2:
        per_axis = min(per_axis, 17)
    lattice = _box_lattice(gradient_box, per_axis)
    dp = 1e-4 * (1.0 + max(gradient_box))
    out = np.zeros(grid.dim)
    for k in range(grid.dim):
        step = np.zeros(grid.dim)
        step[k] = dp
        for xi in pts:
            x_rep = np.broadcast_to(xi, lattice.shape)
            deriv = (spec(x_rep, lattice + step) - spec(x_rep, lattice - step)) / (
                2 * dp
            )
            out[k] = max(out[k], float(np.max(np.abs(deriv))))
    return out


def calibrate_theta(
    spec: HamiltonianSpec,
    grid: TorusGrid,
    gradient_box: Sequence[float],
    margin: float = THETA_MARGIN,
) -> tuple[float, ...]:
    """theta_k = margin * sampled max |dH/dp_k| over the box."""
    return tuple(margin * sampled_gradient_derivative_max(spec, grid, gradient_box))


def validate_theta(spec: HamiltonianSpec, grid: TorusGrid, cfg: SchemeConfig) -> bool:
    """Check theta_k >= sampled max |dH/dp_k| over the configured box."""
    sampled = sampled_gradient_derivative_max(spec, grid, cfg.gradient_box)
    return bool(np.all(np.asarray(cfg.theta) >= sampled - 1e-12))


def lf_hamiltonian(spec: HamiltonianSpec, x, p_minus, p_plus, theta) -> float:
    """Lax-Friedrichs numerical Hamiltonian at one point.

    Consistent (equals H(x, p) when p^- = p^+ = p) and monotone in each
    one-sided slot whenever theta dominates |dH/dp| on the evaluation box.
    """
    pm = np.asarray(p_minus, dtype=float)
    pp = np.asarray(p_plus, dtype=float)
    th = np.asarray(theta, dtype=float)
    h_val = spec.value(x, 0.5 * (pm + pp))
    return h_val - float(np.sum(th * (pp - pm) / 2.0))


class SchemeOperator:
    """Precomputed discrete operator for one (grid, H, A, config) tuple.

    residual_values / jacobian_values work on raw value arrays shaped like
    the grid; both are pure (no cross-node writes), so nodewise work can be
    parallelized freely.
    """

    def __init__(
        self,
        grid: TorusGrid,
        hamiltonian: HamiltonianSpec,
        diffusion: DiffusionSpec,
        cfg: SchemeConfig,
    ):
        self.grid = grid
        self.hamiltonian = hamiltonian
        self.diffusion = diffusion
        self.cfg = cfg
        self.coords = grid.node_coordinates()
        self.stencil = DiffusionStencil(grid, diffusion.a_at_nodes(grid))
        self.theta = np.asarray(cfg.theta, dtype=float)
        a_nodes = diffusion.a_at_nodes(grid)
        self._a_diag_sup = np.array(
            [float(np.max(a_nodes[..., k, k])) for k in range(grid.dim)]
        )
        self._diff_sparse = None
        self._precond_cache: dict = {}

    def lf_values(self, values: np.ndarray) -> np.ndarray:
        p_minus, p_plus = one_sided_gradient_fields(values, self.grid)
        p_avg = np.stack(
            [0.5 * (pm + pp).ravel() for pm, pp in zip(p_minus, p_plus)], axis=1
        )
        h_vals = np.asarray(self.hamiltonian(self.coords, p_avg)).reshape(
            self.grid.counts
        )
        for k in range(self.grid.dim):
            h_vals = h_vals - 0.5 * self.theta[k] * (p_plus[k] - p_minus[k])
        return h_vals

    def residual_values(self, values: np.ndarray, eps: float) -> np.ndarray:
        return eps * values - self.stencil.apply(values) + self.lf_values(values)

    def jacobian_values(
        self, values: np.ndarray, direction: np.ndarray, eps: float
    ) -> np.ndarray:
        # The discount and diffusion parts are exactly linear; only the LF
        # Hamiltonian needs the finite-difference probe, which keeps the
        # roundoff floor at the H scale instead of the 1/h^2 diffusion scale.
        scale = float(np.max(np.abs(direction)))
        if scale == 0.0 or not np.isfinite(scale):
            return np.zeros_like(values)
        w = direction / scale
        t = JACOBIAN_PROBE * (1.0 + float(np.max(np.abs(values))))
        lf_diff = (self.lf_values(values + t * w) - self.lf_values(values - t * w)) / (
            2 * t
        )
        return eps * direction - self.stencil.apply(direction) + scale * lf_diff

    def diffusion_sparse(self):
        if self._diff_sparse is None:
            self._diff_sparse = self.stencil.as_sparse().tocsc()
        return self._diff_sparse

    def preconditioner_factor(self, shift: float):
        """LU factors of (shift I - D), the linear stiff part of the residual."""
        key = float(shift)
        if key not in self._precond_cache:
            import scipy.sparse as sp
            from scipy.sparse.linalg import splu

            n = self.grid.size
            self._precond_cache[key] = splu(
                (key * sp.identity(n, format="csc") - self.diffusion_sparse()).tocsc()
            )
        return self._precond_cache[key]

    def pseudo_time_step(self, eps: float) -> float:
        """Explicit monotone step size for the pseudo-time fallback."""
        h = self.grid.spacing
        rate = eps
        for k in range(self.grid.dim):
            rate += 2.0 * self._a_diag_sup[k] / h[k] ** 2 + self.theta[k] / h[k]
        return 1.0 / rate

    def max_onesided_gradients(self, values: np.ndarray) -> np.ndarray:
        p_minus, p_plus = one_sided_gradient_fields(values, self.grid)
        return np.array(
            [
                max(float(np.max(np.abs(pm))), float(np.max(np.abs(pp))))
                for pm, pp in zip(p_minus, p_plus)
            ]
        )


def residual(
    v: ScalarField,
    eps: float,
    hamiltonian: HamiltonianSpec,
    diffusion: DiffusionSpec,
    cfg: SchemeConfig,
) -> ScalarField:
    """Nodewise residual of the discounted problem; zero characterizes the
    discrete solution. eps = 0 gives the ergodic operator without the
    constant."""
    op = SchemeOperator(v.grid, hamiltonian, diffusion, cfg)
    return ScalarField(v.grid, op.residual_values(v.values, eps))


def jacobian_apply(
    v: ScalarField,
    direction: ScalarField,
    eps: float,
    hamiltonian: HamiltonianSpec,
    diffusion: DiffusionSpec,
    cfg: SchemeConfig,
) -> ScalarField:
    """Directional derivative of the residual map by central differencing.

    H may be non-differentiable at p = 0, so an exact Jacobian is not
    available in general; the probe step follows the residual scale.
    """
    op = SchemeOperator(v.grid, hamiltonian, diffusion, cfg)
    return ScalarField(v.grid, op.jacobian_values(v.values, direction.values, eps))
