"""Newton-Krylov solver for the discounted problem and the vanishing-viscosity
regularization ladder for degenerate diffusions.

Newton steps use matrix-free GMRES on the central-difference linearization
(inexact Newton, inner relative tolerance 1e-2, restart 30) with a sup-norm
line search; after three consecutive rejected steps the solver falls back on
explicit monotone pseudo-time marching until Newton's basin is reached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NoConvergence
from .grid import ScalarField, TorusGrid
from .problem import DiffusionSpec, HamiltonianSpec, h0_sup
from .regularity import holder_seminorm
from .scheme import SchemeConfig, SchemeOperator, calibrate_theta

__all__ = [
    "StationaryReport",
    "DegenerateLadderReport",
    "make_scheme_config",
    "default_tol_residual",
    "solve_discounted",
    "solve_degenerate_via_regularization",
]

GRADIENT_BOX_FLOOR = 0.25
DEFAULT_BOX = 4.0
POLISH_FACTOR = 1e-3
PSEUDO_BURST = 300


def default_tol_residual(hamiltonian: HamiltonianSpec, grid: TorusGrid) -> float:
    return 1e-8 * (1.0 + h0_sup(hamiltonian, grid.node_coordinates()))


def make_scheme_config(
    hamiltonian: HamiltonianSpec,
    grid: TorusGrid,
    gradient_box: Optional[Sequence[float]] = None,
    tol_residual: Optional[float] = None,
) -> SchemeConfig:
    """Calibrate theta for the given (or default) gradient box."""
    box = tuple(gradient_box) if gradient_box else (DEFAULT_BOX,) * grid.dim
    theta = calibrate_theta(hamiltonian, grid, box)
    tol = tol_residual if tol_residual is not None else default_tol_residual(hamiltonian, grid)
    return SchemeConfig(theta=theta, gradient_box=box, tol_residual=tol)


@dataclass
class StationaryReport:
    """One discounted solve: solution, residual and maximum-principle data."""

    solution: ScalarField
    eps: float
    residual_sup: float
    iterations: int
    method: str
    linf: float
    eps_linf: float
    cfg: SchemeConfig

    @property
    def theta_sup(self) -> float:
        return max(self.cfg.theta)


def _gmres_step(op: SchemeOperator, values: np.ndarray, res: np.ndarray, eps: float):
    n = values.size
    shape = values.shape

    def matvec(w):
        return op.jacobian_values(values, w.reshape(shape), eps).ravel()

    lin = LinearOperator((n, n), matvec=matvec)
    delta, _ = gmres(lin, -res.ravel(), rtol=1e-2, atol=0.0, restart=30, maxiter=8)
    return delta.reshape(shape)


def _pseudo_march(op, eps, values, steps, stop_tol):
    dtau = op.pseudo_time_step(eps)
    for _ in range(steps):
        res = op.residual_values(values, eps)
        r = float(np.max(np.abs(res)))
        if r <= stop_tol:
            break
        values = values - dtau * res
    return values


def _newton(op: SchemeOperator, eps: float, init: np.ndarray):
    cfg = op.cfg
    success_tol = cfg.tol_residual
    target = success_tol * POLISH_FACTOR
    values = init.copy()
    res = op.residual_values(values, eps)
    r = float(np.max(np.abs(res)))
    method = "newton"
    fail_streak = 0
    history: list[float] = [r]
    iterations = 0
    while iterations < cfg.max_newton:
        if r <= target:
            break
        if r <= success_tol and len(history) >= 3 and r > 0.5 * min(history[-3:-1]):
            break  # converged; polishing stalled
        delta = _gmres_step(op, values, res, eps)
        lam = 1.0
        accepted = False
        for _ in range(7):
            trial = values + lam * delta
            trial_res = op.residual_values(trial, eps)
            trial_r = float(np.max(np.abs(trial_res)))
            if np.isfinite(trial_r) and trial_r < r:
                values, res, r = trial, trial_res, trial_r
                accepted = True
                break
            lam *= cfg.damping
        iterations += 1
        if accepted:
            fail_streak = 0
        else:
            fail_streak += 1
            if fail_streak >= 3:
                values = _pseudo_march(op, eps, values, PSEUDO_BURST, target)
                res = op.residual_values(values, eps)
                r = float(np.max(np.abs(res)))
                method = "hybrid"
                fail_streak = 0
        history.append(r)
    if r > success_tol:
        # last resort: long monotone march, abandoned on stall
        for _ in range(40):
            prev = r
            values = _pseudo_march(op, eps, values, 500, success_tol)
            res = op.residual_values(values, eps)
            r = float(np.max(np.abs(res)))
            method = "pseudo_time" if method == "newton" else method
            if r <= success_tol:
                break
            if r > 0.95 * prev:
                raise NoConvergence(
                    f"residual stalled at {r:.3e} (target {success_tol:.3e})"
                )
        if r > success_tol:
            raise NoConvergence(
                f"residual {r:.3e} above target {success_tol:.3e} after fallback"
            )
    return values, r, iterations, method


def solve_discounted(
    hamiltonian: HamiltonianSpec,
    diffusion: DiffusionSpec,
    grid: TorusGrid,
    eps: float,
    cfg: Optional[SchemeConfig] = None,
    init: Optional[ScalarField] = None,
    adapt_box: bool = True,
    max_box_rounds: int = 4,
) -> StationaryReport:
    """Solve the discounted problem to the residual tolerance.

    The gradient box is adapted around the computed solution: enlarged when
    one-sided gradients leave it, tightened toward twice the measured
    Lipschitz seminorm when it is far too loose (theta oversizing costs
    accuracy through the Lax-Friedrichs dissipation). Pass adapt_box=False
    to keep a caller-supplied config untouched.
    """
    if eps <= 0:
        raise ValueError("the discount rate must be positive (see the ergodic module)")
    if cfg is None:
        cfg = make_scheme_config(hamiltonian, grid)
    values = (
        np.zeros(grid.counts) if init is None else np.array(init.values, dtype=float)
    )
    tighten_rounds = 0
    for _ in range(max_box_rounds):
        op = SchemeOperator(grid, hamiltonian, diffusion, cfg)
        values, r, iterations, method = _newton(op, eps, values)
        if not adapt_box:
            break
        grads = op.max_onesided_gradients(values)
        box = np.asarray(cfg.gradient_box)
        target = np.maximum(2.0 * grads, GRADIENT_BOX_FLOOR)
        if np.any(grads > box):
            new_box = np.maximum(target, 2.0 * box)
            cfg = cfg.with_theta(
                calibrate_theta(hamiltonian, grid, tuple(new_box)), tuple(new_box)
            )
            continue
        if tighten_rounds < 2 and np.any(box > 2.0 * target):
            tighten_rounds += 1
            cfg = cfg.with_theta(
                calibrate_theta(hamiltonian, grid, tuple(target)), tuple(target)
            )
            continue
        break
    solution = ScalarField(grid, values)
    linf = solution.sup_norm()
    return StationaryReport(
        solution=solution,
        eps=eps,
        residual_sup=r,
        iterations=iterations,
        method=method,
        linf=linf,
        eps_linf=eps * linf,
        cfg=cfg,
    )


@dataclass
class DegenerateLadderReport:
    """Vanishing-viscosity ladder for a possibly degenerate diffusion."""

    qs: tuple[float, ...]
    reports: tuple[StationaryReport, ...]
    holder_exponent: float
    holder_seminorms: tuple[float, ...]
    cauchy_gaps: tuple[float, ...]
    reference_gaps: Optional[tuple[float, ...]]
    extrapolated: ScalarField


def solve_degenerate_via_regularization(
    hamiltonian: HamiltonianSpec,
    diffusion: DiffusionSpec,
    grid: TorusGrid,
    eps: float,
    q_schedule: Sequence[float],
    growth_M: Optional[float] = None,
    cfg: Optional[SchemeConfig] = None,
) -> DegenerateLadderReport:
    """Solve with A + (1/q) I and H + (1/q)|p|^(M+1) along increasing q.

    Reports the Hölder((m-2)/(m-1)) seminorm of each rung (m is the coercive
    exponent of the original Hamiltonian; the uniformity of these seminorms
    across q is the quantity of interest) and the sup gaps between
    consecutive rungs. When the diffusion is nondegenerate, gaps to the
    unregularized solve are reported as well.
    """
    from .problem import PerturbedPower

    qs = tuple(float(q) for q in q_schedule)
    if any(q2 <= q1 for q1, q2 in zip(qs, qs[1:])):
        raise ValueError("q_schedule must be strictly increasing")
    if growth_M is None:
        if hamiltonian.growth_M is None:
            raise ValueError("growth exponent M must be given or declared by the spec")
        growth_M = float(hamiltonian.growth_M)
    m = hamiltonian.k
    if m is None or m <= 2:
        raise ValueError("the ladder needs a declared coercive exponent k > 2")
    exponent = (m - 2.0) / (m - 1.0)

    reports = []
    seminorms = []
    gaps = []
    prev: Optional[ScalarField] = None
    for q in qs:
        h_q = PerturbedPower(hamiltonian, 1.0 / q, growth_M + 1.0)
        a_q = diffusion.inflated(1.0 / q)
        rep = solve_discounted(
            h_q, a_q, grid, eps, cfg=cfg, init=prev,
        )
        reports.append(rep)
        seminorms.append(holder_seminorm(rep.solution, exponent))
        if prev is not None:
            gaps.append(float(np.max(np.abs(rep.solution.values - prev.values))))
        prev = rep.solution

    reference_gaps = None
    if diffusion.nu > 0:
        ref = solve_discounted(hamiltonian, diffusion, grid, eps, cfg=cfg)
        reference_gaps = tuple(
            float(np.max(np.abs(rep.solution.values - ref.solution.values)))
            for rep in reports
        )

    last = reports[-1].solution
    if len(reports) >= 2 and gaps and gaps[-1] > 0 and len(gaps) >= 2 and gaps[-2] > 0:
        rho = min(max(gaps[-1] / gaps[-2], 0.0), 0.95)
        prev_field = reports[-2].solution
        extrapolated = ScalarField(
            grid,
            last.values + (last.values - prev_field.values) * rho / (1.0 - rho),
        )
    else:
        extrapolated = last

    return DegenerateLadderReport(
        qs=qs,
        reports=tuple(reports),
        holder_exponent=exponent,
        holder_seminorms=tuple(seminorms),
        cauchy_gaps=tuple(gaps),
        reference_gaps=reference_gaps,
        extrapolated=extrapolated,
    )
