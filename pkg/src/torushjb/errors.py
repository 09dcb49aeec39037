"""Exception types raised by the solvers and analyzers."""


class TorusHJBError(Exception):
    """Base class for all package-specific errors."""


class StencilNotMonotone(TorusHJBError):
    """The 2D diffusion matrix violates the diagonal-dominance condition
    required for a monotone 7-point stencil at some node."""


class NoFiniteL(TorusHJBError):
    """The superlinearity inequality fails for every L up to the search cap
    (e.g. the Hamiltonian is sublinear)."""


class NoConvergence(TorusHJBError):
    """Newton exhausted its iteration budget and pseudo-time marching stalled."""


class NonCauchy(TorusHJBError):
    """Successive normalized iterates of the vanishing-discount sweep fail to
    contract."""


class LinearSolveFailure(TorusHJBError):
    """An implicit linear solve returned a non-finite or unconverged result."""


class NonPositiveEigenvector(TorusHJBError):
    """Inverse power iteration produced an eigenvector with non-positive
    entries (discretization breakdown for the principal eigenvalue)."""


class TooManyPairs(TorusHJBError):
    """The exhaustive pair scan was requested on a grid above its hard cap."""


class NotCertifiable(TorusHJBError):
    """No penalty amplitude up to the search cap certifies the field."""
