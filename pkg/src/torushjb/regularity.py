"""Regularity measurements: oscillation, Lipschitz/Hölder seminorms, and
concave-penalty doubling certificates over node pairs.

The doubling certificate evaluates M = max over node pairs of
v(x) - v(y) - Psi(d(x, y)); M <= 0 certifies the modulus Psi on the grid.
Pair scans are exact up to the pair cap and switch to seeded uniform
subsampling (always keeping all axis-neighbor pairs) above it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NotCertifiable
from .grid import ScalarField, one_sided_gradient_fields, wrapped_displacement

__all__ = [
    "PAIR_CAP",
    "oscillation",
    "lipschitz_seminorm",
    "holder_seminorm",
    "CertificateParams",
    "concave_lip_params",
    "holder_power_params",
    "doubling_certificate",
    "minimal_certificate_A2",
    "certified_lipschitz_constant",
    "cone_bound_check",
    "RegularityReport",
    "analyze_field",
]

PAIR_CAP = 10**7
A2_BRACKET_LO = 1e-6
A2_CAP = 1e6


def oscillation(fld: ScalarField) -> float:
    """max v - min v over the grid."""
    return float(np.max(fld.values) - np.min(fld.values))


def lipschitz_seminorm(fld: ScalarField) -> float:
    """Max over axis-neighbor pairs of |dv|/h (discrete gradient sup).

    In 1D this equals the max of |v(x)-v(y)|/d(x,y) over all pairs (walk the
    shorter arc); in 2D it matches the all-pair ratio up to the anisotropy
    factor sqrt(2).
    """
    p_minus, _ = one_sided_gradient_fields(fld.values, fld.grid)
    return max(float(np.max(np.abs(p))) for p in p_minus)


def _pair_rows(fld: ScalarField, cap: int = PAIR_CAP, seed: int = 0):
    """Yield (i_indices, j_indices) chunks covering the scanned pair set.

    Exact enumeration (all i < j, row-major ascending) below the cap;
    otherwise a seeded uniform subsample plus every axis-neighbor pair.
    """
    grid = fld.grid
    n = grid.size
    total = n * (n - 1) // 2
    if total <= cap:
        for i in range(n - 1):
            yield np.full(n - 1 - i, i), np.arange(i + 1, n)
        return
    # neighbor pairs first: wrap-aware, one chunk per axis
    flat_index = np.arange(n).reshape(grid.counts)
    for axis in range(grid.dim):
        target = np.roll(flat_index, -1, axis=axis)
        yield flat_index.ravel(), target.ravel()
    rng = np.random.default_rng(seed)
    remaining = cap
    chunk = 10**6
    while remaining > 0:
        m = min(chunk, remaining)
        ii = rng.integers(0, n, m)
        jj = rng.integers(0, n, m)
        keep = ii != jj
        yield ii[keep], jj[keep]
        remaining -= m


def _scan_max(fld: ScalarField, score: Callable[[np.ndarray, np.ndarray], np.ndarray],
              cap: int = PAIR_CAP, seed: int = 0):
    """Max of score(|dv|, d) over the scanned pairs, with the argmax pair."""
    vals = fld.flat()
    coords = fld.grid.node_coordinates()
    best = -np.inf
    best_pair = (0, 0)
    for ii, jj in _pair_rows(fld, cap=cap, seed=seed):
        deltas = wrapped_displacement(coords[ii] - coords[jj])
        dist = np.sqrt(np.sum(deltas**2, axis=-1))
        scores = score(np.abs(vals[ii] - vals[jj]), dist)
        k = int(np.argmax(scores))
        if scores[k] > best:
            best = float(scores[k])
            a, b = int(ii[k]), int(jj[k])
            best_pair = (a, b) if vals[a] >= vals[b] else (b, a)
    return best, best_pair


def holder_seminorm(fld: ScalarField, gamma: float, cap: int = PAIR_CAP,
                    seed: int = 0) -> float:
    """Max over scanned node pairs of |v(x)-v(y)| / d(x,y)^gamma.

    The returned constant is certified: it is nudged up by at most a few ulp
    so that max_pairs (|dv| - K d^gamma) <= 0 holds exactly in floating
    point (the smallest K certifying the power modulus on this grid).
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    k_val, _ = _scan_max(fld, lambda dv, d: dv / d**gamma, cap=cap, seed=seed)
    k_val = max(k_val, 0.0)
    for _ in range(8):
        m_val, _ = _scan_max(fld, lambda dv, d: dv - k_val * d**gamma,
                             cap=cap, seed=seed)
        if m_val <= 0.0:
            break
        k_val = np.nextafter(k_val, np.inf)
    return float(k_val)


# --- doubling certificates ----------------------------------------------------


@dataclass(frozen=True)
class CertificateParams:
    """Penalty profile for the doubling scan.

    holder_power: Psi(s) = K s^gamma.
    concave_lip:  Psi(s) = A1 [A2 s - (A2 s)^(1+gamma)] capped at Psi(r) for
    s >= r, normalized so that A2 r = 1/3 and Psi(r) = oscillation + 1
    (which pins A1). Psi is increasing and concave on [0, r] for any
    gamma in (0, 1).
    """

    variant: str
    gamma: float
    A1: Optional[float] = None
    A2: Optional[float] = None
    r: Optional[float] = None
    K: Optional[float] = None

    def __post_init__(self):
        if self.variant not in ("holder_power", "concave_lip"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "holder_power":
            if self.K is None:
                raise ValueError("holder_power needs the constant K")
            if not 0 < self.gamma <= 1:
                raise ValueError("gamma must lie in (0, 1]")
        else:
            if self.A1 is None or self.A2 is None or self.r is None:
                raise ValueError("concave_lip needs A1, A2 and r")
            if not 0 < self.gamma < 1:
                raise ValueError("gamma must lie in (0, 1)")
            if abs(self.A2 * self.r - 1.0 / 3.0) > 1e-12:
                raise ValueError("normalization requires A2 * r = 1/3")

    def psi(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.variant == "holder_power":
            return self.K * s**self.gamma
        capped = np.minimum(s, self.r)
        u = self.A2 * capped
        return self.A1 * (u - u ** (1.0 + self.gamma))

    def psi_cap(self) -> float:
        """Psi(r), the plateau value (= oscillation + 1 under the normalization)."""
        u = self.A2 * self.r
        return float(self.A1 * (u - u ** (1.0 + self.gamma)))


def concave_lip_params(osc: float, gamma: float, a2: float) -> CertificateParams:
    """Build the concave penalty from the normalization A2 r = 1/3,
    Psi(r) = osc + 1; this fixes A1 = (osc + 1)/(3^-1 - 3^-(1+gamma))."""
    a1 = (osc + 1.0) / (3.0**-1 - 3.0 ** (-1.0 - gamma))
    return CertificateParams(
        variant="concave_lip", gamma=gamma, A1=a1, A2=a2, r=1.0 / (3.0 * a2)
    )


def holder_power_params(k_const: float, gamma: float) -> CertificateParams:
    return CertificateParams(variant="holder_power", gamma=gamma, K=k_const)


def doubling_certificate(
    fld: ScalarField,
    params: CertificateParams,
    cap: int = PAIR_CAP,
    seed: int = 0,
):
    """(M, argmax pair) for M = max over pairs of v(x) - v(y) - Psi(d(x,y)).

    M <= 0 certifies the modulus Psi on the grid. Grid maxima understate the
    continuum value; reports add the slack 2 Lip(v) h before judging the
    continuum claim, but the value returned here is the raw grid maximum.
    """
    return _scan_max(fld, lambda dv, d: dv - params.psi(d), cap=cap, seed=seed)


def certificate_grid_slack(fld: ScalarField) -> float:
    """2 Lip(v) h, the resolution slack added to M in reports."""
    return 2.0 * lipschitz_seminorm(fld) * max(fld.grid.spacing)


def minimal_certificate_A2(
    fld: ScalarField,
    gamma: float,
    rel_tol: float = 0.01,
    cap: float = A2_CAP,
    scan_cap: int = PAIR_CAP,
    seed: int = 0,
) -> float:
    """Smallest A2 (within rel_tol) whose concave penalty certifies the field.

    A1 is pinned by the normalization, so A1 * A2 is the certified
    Lipschitz-type constant. Raises NotCertifiable if no A2 <= cap works.
    """
    osc = oscillation(fld)

    def certified(a2: float) -> bool:
        m_val, _ = doubling_certificate(
            fld, concave_lip_params(osc, gamma, a2), cap=scan_cap, seed=seed
        )
        return m_val <= 0.0

    lo = A2_BRACKET_LO
    if certified(lo):
        return lo
    hi = 1.0
    while not certified(hi):
        hi *= 2.0
        if hi > cap:
            raise NotCertifiable(f"no A2 up to {cap:g} certifies the field")
    lo = max(lo, hi / 2.0)
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if certified(mid):
            hi = mid
        else:
            lo = mid
    return hi


def certified_lipschitz_constant(fld: ScalarField, gamma: float = 0.5, **kw) -> float:
    """A1 * A2 at the minimal certifying A2 (the Lipschitz-type constant)."""
    a2 = minimal_certificate_A2(fld, gamma, **kw)
    a1 = (oscillation(fld) + 1.0) / (3.0**-1 - 3.0 ** (-1.0 - gamma))
    return a1 * a2


def cone_bound_check(fld: ScalarField, L: float):
    """Worst defect of the cone bound v(x) - v(argmin) <= L d(x, argmin).

    Returns (worst_defect, argmin_flat_index); defect <= 0 means the bound
    holds on the grid.
    """
    if L <= 0:
        raise ValueError("the cone constant must be positive")
    vals = fld.flat()
    i_min = int(np.argmin(vals))
    coords = fld.grid.node_coordinates()
    deltas = wrapped_displacement(coords - coords[i_min])
    dist = np.sqrt(np.sum(deltas**2, axis=-1))
    defects = vals - vals[i_min] - L * dist
    return float(np.max(defects)), i_min


# --- bundled report -----------------------------------------------------------


@dataclass
class RegularityReport:
    """Measured regularity quantities for one field."""

    osc: float
    lip: float
    holder: dict
    certificate: Optional[dict] = None
    cone_check: Optional[dict] = None
    grid_slack: float = 0.0

    def sanity_ok(self, min_distance: float, dim: int) -> bool:
        # axis Lip can undershoot the pairwise ratio by the anisotropy factor
        anisotropy = math.sqrt(dim)
        return all(
            self.lip * anisotropy >= sem * min_distance ** (1.0 - g) - 1e-12
            for g, sem in self.holder.items()
        )

    def to_json(self) -> str:
        payload = {
            "osc": self.osc,
            "lip": self.lip,
            "holder": {repr(g): s for g, s in self.holder.items()},
            "certificate": self.certificate,
            "cone_check": self.cone_check,
            "grid_slack": self.grid_slack,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def analyze_field(
    fld: ScalarField,
    gammas=(0.5,),
    certificate_gamma: Optional[float] = 0.5,
    cone_L: Optional[float] = None,
    cap: int = PAIR_CAP,
    seed: int = 0,
) -> RegularityReport:
    """Compute every analyzer quantity for one field."""
    osc = oscillation(fld)
    lip = lipschitz_seminorm(fld)
    holder = {float(g): holder_seminorm(fld, g, cap=cap, seed=seed) for g in gammas}
    cert = None
    if certificate_gamma is not None and osc > 0:
        try:
            a2 = minimal_certificate_A2(fld, certificate_gamma, scan_cap=cap, seed=seed)
            params = concave_lip_params(osc, certificate_gamma, a2)
            m_val, argmax = doubling_certificate(fld, params, cap=cap, seed=seed)
            cert = {
                "gamma": certificate_gamma,
                "A1": params.A1,
                "A2": params.A2,
                "r": params.r,
                "K": params.A1 * params.A2,
                "M": m_val,
                "M_with_slack": m_val + certificate_grid_slack(fld),
                "argmax": list(argmax),
            }
        except NotCertifiable:
            cert = {"gamma": certificate_gamma, "failed": True}
    cone = None
    if cone_L is not None:
        defect, i_min = cone_bound_check(fld, cone_L)
        cone = {"L": cone_L, "worst_defect": defect, "argmin": i_min}
    return RegularityReport(
        osc=osc,
        lip=lip,
        holder=holder,
        certificate=cert,
        cone_check=cone,
        grid_slack=certificate_grid_slack(fld),
    )
