"""Diffusion and Hamiltonian catalog with machine-checkable structure
assumptions (strict ellipticity, superlinearity, coercivity, x-modulus).

Specs are immutable value objects; evaluation is pure and vectorized over
point arrays, so concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NoFiniteL
from .grid import ScalarField, TorusGrid, wrapped_displacement

__all__ = [
    "DiffusionSpec",
    "HamiltonianSpec",
    "PowerCoercive",
    "SigmaPower",
    "Sublinear",
    "PerturbedPower",
    "Truncated",
    "Regularized",
    "Shifted",
    "Custom",
    "FourierCoefficient",
    "FieldCoefficient",
    "constant_coefficient",
    "eval_H",
    "h0_sup",
    "estimate_ssa4_L",
    "check_coercivity",
    "CoercivityCheck",
    "structure_defect_LN2",
    "StructureDefect",
    "AssumptionEstimates",
    "fit_coercivity_C",
    "unit_directions",
]


def _as_points(x) -> np.ndarray:
    """Normalize coordinates/gradients to a (N, d) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _norm(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(p * p, axis=-1))


# --- coefficients -------------------------------------------------------------


def constant_coefficient(value: float) -> Callable[[np.ndarray], np.ndarray]:
    def coef(x):
        return np.full(np.asarray(x).shape[0], float(value))

    return coef


class FourierCoefficient:
    """Truncated Fourier series c(x) = sum_j [a_j cos(2 pi k_j.x) + b_j sin(2 pi k_j.x)].

    terms is a list of (frequencies, cos_coeff, sin_coeff) with one integer
    frequency per axis; a zero frequency vector encodes a constant.
    """

    def __init__(self, terms: Sequence[tuple[Sequence[int], float, float]]):
        self.terms = [
            (tuple(int(f) for f in freqs), float(c), float(s)) for freqs, c, s in terms
        ]

    def __call__(self, x) -> np.ndarray:
        pts = _as_points(x)
        out = np.zeros(pts.shape[0])
        for freqs, c, s in self.terms:
            phase = 2 * np.pi * (pts @ np.asarray(freqs, dtype=float))
            out += c * np.cos(phase) + s * np.sin(phase)
        return out

    def bound(self) -> float:
        """Crude sup bound: sum of coefficient magnitudes."""
        return sum(math.hypot(c, s) for _, c, s in self.terms)


class FieldCoefficient:
    """Coefficient given by node samples; exact at grid nodes, nearest node off-grid."""

    def __init__(self, fld: ScalarField):
        self.field = fld

    def __call__(self, x) -> np.ndarray:
        pts = _as_points(x)
        counts = np.asarray(self.field.grid.counts)
        idx = np.rint(pts * counts).astype(int) % counts
        if self.field.grid.dim == 1:
            return self.field.values[idx[:, 0]]
        return self.field.values[idx[:, 0], idx[:, 1]]


def _as_coefficient(c) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(c, (int, float)):
        return constant_coefficient(c)
    if isinstance(c, ScalarField):
        return FieldCoefficient(c)
    return c


# --- diffusion ----------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSpec:
    """sigma(x) and A(x) = sigma sigma^T with declared ellipticity and norms.

    nu is the declared ellipticity lower bound (nu = 0 marks a possibly
    degenerate diffusion, accepted only by the regularization ladder);
    sigma_sup and sigma_lip are declared bounds for |sigma|_inf and
    |sigma_x|_inf used in the structure inequalities.
    """

    sigma_fn: Callable[[np.ndarray], np.ndarray]
    nu: float
    sigma_sup: float
    sigma_lip: float
    dim: int

    @staticmethod
    def isotropic(nu: float, dim: int) -> "DiffusionSpec":
        root = math.sqrt(nu)

        def sigma(x):
            pts = _as_points(x)
            return np.broadcast_to(
                root * np.eye(dim), (pts.shape[0], dim, dim)
            ).copy()

        return DiffusionSpec(sigma, nu=nu, sigma_sup=root, sigma_lip=0.0, dim=dim)

    @staticmethod
    def constant(sigma_matrix) -> "DiffusionSpec":
        mat = np.atleast_2d(np.asarray(sigma_matrix, dtype=float))
        dim = mat.shape[0]
        a = mat @ mat.T
        nu = float(np.min(np.linalg.eigvalsh(a)))

        def sigma(x):
            pts = _as_points(x)
            return np.broadcast_to(mat, (pts.shape[0], dim, dim)).copy()

        return DiffusionSpec(
            sigma, nu=nu, sigma_sup=float(np.linalg.norm(mat, 2)), sigma_lip=0.0, dim=dim
        )

    @staticmethod
    def zero(dim: int) -> "DiffusionSpec":
        return DiffusionSpec.isotropic(0.0, dim)

    @staticmethod
    def varying(sigma_fn, nu, sigma_sup, sigma_lip, dim) -> "DiffusionSpec":
        return DiffusionSpec(sigma_fn, nu=nu, sigma_sup=sigma_sup, sigma_lip=sigma_lip, dim=dim)

    def inflated(self, eta: float) -> "DiffusionSpec":
        """The diffusion with A replaced by A + eta I (vanishing-viscosity rung).

        The new sigma is the symmetric square root of A + eta I, so the
        ellipticity constant rises to nu + eta.
        """
        if eta == 0:
            return self
        if eta < 0:
            raise ValueError("eta must be nonnegative")
        base = self
        dim = self.dim

        def sigma(x):
            a = base.a_at(x) + eta * np.eye(dim)
            w, vecs = np.linalg.eigh(a)
            w = np.sqrt(np.clip(w, 0.0, None))
            return (vecs * w[..., None, :]) @ np.swapaxes(vecs, -1, -2)

        nu_new = self.nu + eta
        lip_new = (
            0.0
            if self.sigma_lip == 0.0
            else self.sigma_sup * self.sigma_lip / math.sqrt(nu_new)
        )
        return DiffusionSpec(
            sigma,
            nu=nu_new,
            sigma_sup=math.sqrt(self.sigma_sup**2 + eta),
            sigma_lip=lip_new,
            dim=dim,
        )

    def sigma_at(self, x) -> np.ndarray:
        return np.asarray(self.sigma_fn(_as_points(x)), dtype=float)

    def a_at(self, x) -> np.ndarray:
        s = self.sigma_at(x)
        return s @ np.swapaxes(s, -1, -2)

    def a_at_nodes(self, grid: TorusGrid) -> np.ndarray:
        a = self.a_at(grid.node_coordinates())
        return a.reshape(grid.counts + (self.dim, self.dim))

    def validate(self, grid: TorusGrid, tol: float = 1e-10) -> dict:
        """Check the declared bounds against node samples.

        Returns per-check booleans: ellipticity (min eig A >= nu - tol),
        sigma_sup >= sampled operator norms, sigma_lip >= sampled difference
        quotients of sigma between neighboring nodes.
        """
        pts = grid.node_coordinates()
        s = self.sigma_at(pts)
        a = s @ np.swapaxes(s, -1, -2)
        eigs = np.linalg.eigvalsh(a)
        min_eig = float(np.min(eigs))
        op_norms = np.linalg.norm(s, ord=2, axis=(1, 2))
        sup_ok = self.sigma_sup >= float(np.max(op_norms)) - tol
        lip_sampled = 0.0
        shaped = s.reshape(grid.counts + (self.dim, self.dim))
        for k in range(grid.dim):
            h = grid.spacing[k]
            dq = np.linalg.norm(
                np.roll(shaped, -1, axis=k) - shaped, ord=2, axis=(-2, -1)
            ) / h
            lip_sampled = max(lip_sampled, float(np.max(dq)))
        return {
            "ellipticity": min_eig >= self.nu - tol,
            "min_eigenvalue": min_eig,
            "sigma_sup": sup_ok,
            "sigma_lip": self.sigma_lip >= lip_sampled - tol,
            "sampled_sigma_lip": lip_sampled,
        }


# --- Hamiltonian families -----------------------------------------------------


class HamiltonianSpec:
    """Base class: evaluation (x, p) -> H(x, p) plus growth metadata.

    Metadata slots follow the structure constants used by the assumption
    checks: k and C for the coercivity lower bound H >= |p|^k / C - C,
    alpha and beta for the x-modulus inequality, growth_M for the upper
    growth power.
    """

    k: Optional[float] = None
    C: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    growth_M: Optional[float] = None

    def __call__(self, x, p) -> np.ndarray:
        raise NotImplementedError

    def value(self, x, p) -> float:
        """Scalar convenience wrapper around the vectorized evaluation."""
        out = self(_as_points(x), _as_points(p))
        return float(np.asarray(out).ravel()[0])

    def shifted(self, constant: float) -> "Shifted":
        return Shifted(self, constant)


@dataclass(frozen=True)
class PowerCoercive(HamiltonianSpec):
    """H(x, p) = a(x) |p|^power + ell(x)."""

    a: object
    power: float
    ell: object

    def __post_init__(self):
        object.__setattr__(self, "a", _as_coefficient(self.a))
        object.__setattr__(self, "ell", _as_coefficient(self.ell))
        object.__setattr__(self, "k", float(self.power))
        object.__setattr__(self, "alpha", 1.0)
        object.__setattr__(self, "beta", 0.0)
        object.__setattr__(self, "growth_M", float(self.power))

    def __call__(self, x, p):
        pts, grads = _as_points(x), _as_points(p)
        return self.a(pts) * _norm(grads) ** self.power + self.ell(pts)


@dataclass(frozen=True)
class SigmaPower(HamiltonianSpec):
    """H(x, p) = |Sigma(x) p|^power + G(x, p), G optional."""

    sigma_fn: Callable[[np.ndarray], np.ndarray]
    power: float
    g: Optional[HamiltonianSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "k", float(self.power))
        object.__setattr__(self, "growth_M", float(self.power))

    def __call__(self, x, p):
        pts, grads = _as_points(x), _as_points(p)
        mats = np.asarray(self.sigma_fn(pts), dtype=float)
        sp = np.einsum("nij,nj->ni", mats, grads)
        out = _norm(sp) ** self.power
        if self.g is not None:
            out = out + self.g(pts, grads)
        return out


@dataclass(frozen=True)
class Sublinear(HamiltonianSpec):
    """H(x, p) = <b(x), p> + ell(x); violates the superlinearity assumption."""

    b: Callable[[np.ndarray], np.ndarray]
    ell: object

    def __post_init__(self):
        object.__setattr__(self, "ell", _as_coefficient(self.ell))
        object.__setattr__(self, "growth_M", 1.0)

    def __call__(self, x, p):
        pts, grads = _as_points(x), _as_points(p)
        bvals = np.asarray(self.b(pts), dtype=float)
        return np.sum(bvals * grads, axis=-1) + self.ell(pts)


@dataclass(frozen=True)
class PerturbedPower(HamiltonianSpec):
    """H(x, p) = K(x, p) + coeff * |p|^exponent (coercive perturbation)."""

    inner: HamiltonianSpec
    coeff: float
    exponent: float

    def __post_init__(self):
        object.__setattr__(self, "k", float(self.exponent))
        object.__setattr__(
            self,
            "growth_M",
            float(max(self.exponent, self.inner.growth_M or self.exponent)),
        )
        object.__setattr__(self, "alpha", self.inner.alpha)
        object.__setattr__(self, "beta", self.inner.beta)

    def __call__(self, x, p):
        grads = _as_points(p)
        return self.inner(x, p) + self.coeff * _norm(grads) ** self.exponent


@dataclass(frozen=True)
class Truncated(HamiltonianSpec):
    """Radial truncation: H(x, p) for |p| <= n_trunc, else H(x, n_trunc p/|p|)."""

    inner: HamiltonianSpec
    n_trunc: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", self.inner.alpha)
        object.__setattr__(self, "beta", self.inner.beta)
        object.__setattr__(self, "growth_M", 0.0)

    def __call__(self, x, p):
        grads = _as_points(p)
        norms = _norm(grads)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(norms > self.n_trunc, self.n_trunc / norms, 1.0)
        return self.inner(x, grads * scale[..., None])


@dataclass(frozen=True)
class Regularized(HamiltonianSpec):
    """H(x, p) = (1/q) |p|^M + inner(x, p); inner is typically truncated."""

    inner: HamiltonianSpec
    q: float
    M: float

    def __post_init__(self):
        object.__setattr__(self, "k", float(self.M))
        object.__setattr__(self, "growth_M", float(self.M))

    def __call__(self, x, p):
        grads = _as_points(p)
        return _norm(grads) ** self.M / self.q + self.inner(x, grads)


@dataclass(frozen=True)
class Shifted(HamiltonianSpec):
    """H(x, p) + constant; keeps every structure constant of the inner spec."""

    inner: HamiltonianSpec
    constant: float

    def __post_init__(self):
        for name in ("k", "C", "alpha", "beta", "growth_M"):
            object.__setattr__(self, name, getattr(self.inner, name))

    def __call__(self, x, p):
        return self.inner(x, p) + self.constant


@dataclass(frozen=True)
class Custom(HamiltonianSpec):
    """Arbitrary vectorized evaluator (x_points, p_points) -> values."""

    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("k", "C", "alpha", "beta", "growth_M"):
            object.__setattr__(self, name, self.meta.get(name))

    def __call__(self, x, p):
        return np.asarray(self.evaluator(_as_points(x), _as_points(p)), dtype=float)


def eval_H(spec: HamiltonianSpec, x, p):
    """Evaluate the family formula at (x, p); vectorized over point arrays."""
    return spec(x, p)


def h0_sup(spec: HamiltonianSpec, x_samples) -> float:
    """Sampled sup of |H(x, 0)|."""
    pts = _as_points(x_samples)
    zeros = np.zeros_like(pts)
    return float(np.max(np.abs(spec(pts, zeros))))


def unit_directions(dim: int, count: int = 64) -> np.ndarray:
    """Direction sample: {-1, +1} in 1D, a uniform angular grid in 2D."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    angles = 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


# --- assumption (ssa4): superlinearity with explicit constant L ---------------


def estimate_ssa4_L(
    spec: HamiltonianSpec,
    diff: DiffusionSpec,
    x_samples,
    direction_samples=None,
    tol: float = 1e-3,
    cap: float = 1e6,
    offset: Optional[float] = None,
) -> float:
    """Smallest certified L for the superlinearity inequality.

    Checks, over every sampled (x, y, direction e) pair, whether

        H(x, L e) >= L * [H(y, e) + offset + N |x - y| sigma_lip^2]

    with offset defaulting to the sampled sup of |H(., 0)| (the parabolic
    variant passes the initial-data constant instead). The tolerance enters
    multiplicatively through the right-hand side magnitude; bisection returns
    the certified upper end of a bracket of relative width tol.

    Raises NoFiniteL if the inequality fails for every L up to cap.
    """
    pts = _as_points(x_samples)
    dim = pts.shape[1]
    if direction_samples is None:
        direction_samples = unit_directions(dim)
    dirs = _as_points(direction_samples)
    if offset is None:
        offset = h0_sup(spec, pts)

    # pairwise torus distances, worst-case y folded into a per-x bound
    deltas = wrapped_displacement(pts[:, None, :] - pts[None, :, :])
    dist = np.sqrt(np.sum(deltas**2, axis=-1))
    coupling = dim * diff.sigma_lip**2 * dist  # (Nx, Ny)

    per_dir_bounds = []
    for e in dirs:
        he = spec(pts, np.broadcast_to(e, pts.shape))
        per_dir_bounds.append(np.max(he[None, :] + coupling, axis=1) + offset)

    def certified(L: float) -> bool:
        for e, bound in zip(dirs, per_dir_bounds):
            lhs = spec(pts, np.broadcast_to(L * e, pts.shape))
            rhs = L * bound
            if not np.all(lhs - rhs >= -tol * (1.0 + np.abs(rhs))):
                return False
        return True

    hi = 2.0
    while not certified(hi):
        hi *= 2.0
        if hi > cap:
            raise NoFiniteL(
                f"superlinearity inequality fails for every L up to {cap:g}"
            )
    lo = 1.0
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if certified(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --- assumption (clp): coercivity ---------------------------------------------


@dataclass(frozen=True)
class CoercivityCheck:
    k: float
    C: float
    ok: bool
    worst_margin: float
    worst_x: np.ndarray
    worst_p: np.ndarray


def check_coercivity(
    spec: HamiltonianSpec, radius: float, x_samples, p_samples
) -> CoercivityCheck:
    """Verify the declared lower bound H >= |p|^k / C - C on all samples.

    Diagnostic only: returns ok=False together with the worst violating
    sample instead of raising.
    """
    if spec.k is None or spec.C is None:
        raise ValueError("spec must declare the coercivity constants k and C")
    pts = _as_points(x_samples)
    grads = _as_points(p_samples)
    norms = _norm(grads)
    if np.max(norms) < radius * (1 - 1e-9):
        raise ValueError("p samples must cover |p| up to the requested radius")
    worst_margin = np.inf
    worst = (pts[0], grads[0])
    for xi in pts:
        h_vals = spec(np.broadcast_to(xi, grads.shape), grads)
        margins = h_vals - (norms**spec.k / spec.C - spec.C)
        j = int(np.argmin(margins))
        if margins[j] < worst_margin:
            worst_margin = float(margins[j])
            worst = (xi, grads[j])
    scale = 1e-12 * (1.0 + spec.C + radius ** spec.k / spec.C)
    return CoercivityCheck(
        k=spec.k,
        C=spec.C,
        ok=bool(worst_margin >= -scale),
        worst_margin=worst_margin,
        worst_x=np.array(worst[0]),
        worst_p=np.array(worst[1]),
    )


def fit_coercivity_C(spec: HamiltonianSpec, k: float, x_samples, p_samples) -> float:
    """Smallest C making H >= |p|^k / C - C hold on the samples."""
    pts = _as_points(x_samples)
    grads = _as_points(p_samples)
    norms = _norm(grads)
    c_needed = 0.0
    for xi in pts:
        h_vals = spec(np.broadcast_to(xi, grads.shape), grads)
        # per-sample root of C^2 + H C - |p|^k = 0
        roots = 0.5 * (-h_vals + np.sqrt(h_vals**2 + 4 * norms**k))
        c_needed = max(c_needed, float(np.max(roots)))
    return c_needed


# --- assumption (LN-ell2): x-modulus data -------------------------------------


@dataclass(frozen=True)
class StructureDefect:
    """One sampled row of the x-continuity inequality.

    diff is |H(x,p) - H(y,p)|; modulus_arg is (1 + |p|^beta)|x - y|; envelope
    is |x - y|^alpha |p|^{(k-1)alpha + k}. The harness fits the modulus
    empirically from tables of these rows.
    """

    diff: float
    modulus_arg: float
    envelope: float


def structure_defect_LN2(spec: HamiltonianSpec, x, y, p) -> StructureDefect:
    xi = _as_points(x)
    yi = _as_points(y)
    grads = _as_points(p)
    h_x = spec(xi, grads)
    h_y = spec(yi, grads)
    diff = float(np.abs(h_x - h_y).ravel()[0])
    s = float(np.sqrt(np.sum(wrapped_displacement(xi - yi) ** 2)))
    pn = float(_norm(grads).ravel()[0])
    alpha = spec.alpha if spec.alpha is not None else 1.0
    beta = spec.beta if spec.beta is not None else 0.0
    k = spec.k if spec.k is not None else 2.0
    return StructureDefect(
        diff=diff,
        modulus_arg=(1.0 + pn**beta) * s,
        envelope=s**alpha * pn ** ((k - 1) * alpha + k),
    )


@dataclass(frozen=True)
class AssumptionEstimates:
    """Sampled constants for the manifest: L, |H(.,0)|_inf, (k, C), modulus rows."""

    L_ssa4: Optional[float]
    H0_sup: float
    coercivity: Optional[tuple[float, float]]
    modulus_samples: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.L_ssa4 is not None and not self.L_ssa4 > 1:
            raise ValueError("the superlinearity constant must exceed 1")


def estimate_assumptions(
    spec: HamiltonianSpec,
    diff: DiffusionSpec,
    grid: TorusGrid,
    gradient_radius: float = 4.0,
    ssa4_tol: float = 1e-3,
    max_x_samples: int = 128,
    rng_seed: int = 0,
) -> AssumptionEstimates:
    """Estimate every assumption constant at once for reporting."""
    pts = grid.node_coordinates()
    if pts.shape[0] > max_x_samples:
        stride = pts.shape[0] // max_x_samples
        pts = pts[::stride]
    try:
        L = estimate_ssa4_L(spec, diff, pts, tol=ssa4_tol)
    except NoFiniteL:
        L = None
    rng = np.random.default_rng(rng_seed)
    rows = []
    radii = np.linspace(0.1, gradient_radius, 8)
    for _ in range(32):
        xi, yi = pts[rng.integers(len(pts))], pts[rng.integers(len(pts))]
        direction = unit_directions(grid.dim)[0]
        for r in radii:
            row = structure_defect_LN2(spec, xi, yi, r * direction)
            rows.append((row.modulus_arg, row.diff))
    coerc = (spec.k, spec.C) if spec.k is not None and spec.C is not None else None
    return AssumptionEstimates(
        L_ssa4=L,
        H0_sup=h0_sup(spec, grid.node_coordinates()),
        coercivity=coerc,
        modulus_samples=tuple(rows),
    )
