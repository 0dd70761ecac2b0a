"""Exponential-family densities on [0, 1] and the moment-matching solver.

The family is

    dens(y; theta) = exp(theta . phi(y)) / Z(theta),
    Z(theta) = integral_0^1 exp(theta . phi(t)) dt,

with ``phi`` the orthonormal shifted Legendre basis of :mod:`.basis`.  The
coefficient vector matching a moment target ``mu`` solves

    integral phi(y) dens(y; theta) dy = mu,

a smooth convex-dual root-finding problem handled by Newton's method with
the exact Jacobian (the basis covariance under the current density).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisSpec, basis_matrix, basis_vector
from .errors import BoundaryMoment, NonConvergence

__all__ = [
    "MomentVector",
    "ThetaSolution",
    "THETA_BOX_BOUND",
    "log_partition",
    "density",
    "moments",
    "covariance",
    "solve_theta",
    "pseudo_outcomes_theta",
    "t_functional",
]

#: Iterates with sup-norm beyond this bound signal a target at or outside
#: the moment-space boundary.
THETA_BOX_BOUND = 50.0


@dataclass(frozen=True, eq=False)
class MomentVector:
    """A vector of basis moments, one entry per non-constant basis function.

    Component ``j`` of any attainable moment vector is bounded by the basis
    sup-norm sqrt(2j + 1); construction enforces this up to roundoff.
    """

    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if not np.all(np.isfinite(mu)):
            raise ValueError("moment vector must be finite")
        bound = np.sqrt(2.0 * np.arange(1, mu.size + 1) + 1.0)
        if np.any(np.abs(mu) > bound + 1e-9):
            raise ValueError("moment component exceeds the basis range")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    def __len__(self) -> int:
        return self.mu.size


@dataclass(frozen=True, eq=False)
class ThetaSolution:
    """Solved coefficient vector with residual diagnostics.

    ``converged`` is True only when the final moment residual sup-norm is
    within the solver tolerance.  Instances are immutable; the covariance
    factorization computed for a given basis is cached on first use and can
    be shared across threads.
    """

    theta: np.ndarray
    residual_inf_norm: float
    iterations: int
    converged: bool
    _state_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if not np.all(np.isfinite(theta)):
            raise ValueError("coefficients must be finite")
        if np.max(np.abs(theta), initial=0.0) > THETA_BOX_BOUND:
            raise ValueError("coefficients exceed the solver box bound")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def _state(self, spec: BasisSpec):
        # keys hold a strong reference to spec so the id stays valid
        hit = self._state_cache.get(id(spec))
        if hit is None:
            mu = moments(self.theta, spec).mu
            factor = cho_factor(covariance(self.theta, spec))
            hit = (spec, mu, factor)
            self._state_cache[id(spec)] = hit
        return hit

    def cho(self, spec: BasisSpec):
        """Cholesky factorization of the basis covariance at ``theta``."""
        return self._state(spec)[2]

    def moments_at(self, spec: BasisSpec) -> np.ndarray:
        """Basis moments at ``theta``, cached alongside the factorization."""
        return self._state(spec)[1]


def _node_weights(theta: np.ndarray, spec: BasisSpec):
    """Density values at the quadrature nodes, via max-subtraction.

    Returns ``(dens_at_nodes, log_partition)``.
    """
    theta = np.asarray(theta, dtype=float)
    g = spec.phi_nodes @ theta
    if not np.all(np.isfinite(g)):
        raise OverflowError("exponent is not finite at a quadrature node")
    m = g.max()
    e = np.exp(g - m)
    z = float(spec.weights @ e)
    return e / z, m + np.log(z)


def log_partition(theta, spec: BasisSpec) -> float:
    """log of the normalizing integral, computed with max-subtraction."""
    return _node_weights(theta, spec)[1]


def density(y, theta, spec: BasisSpec):
    """Evaluate dens(y; theta); strictly positive on [0, 1]."""
    theta = np.asarray(theta, dtype=float)
    arr = np.asarray(y, dtype=float)
    logz = log_partition(theta, spec)
    vals = np.exp(basis_matrix(spec, arr) @ theta - logz)
    return float(vals[0]) if arr.ndim == 0 else vals.reshape(arr.shape)


def moments(theta, spec: BasisSpec) -> MomentVector:
    """Basis moments of dens(.; theta), by quadrature."""
    dens, _ = _node_weights(theta, spec)
    return MomentVector(spec.phi_nodes.T @ (spec.weights * dens))


def covariance(theta, spec: BasisSpec) -> np.ndarray:
    """Covariance of the basis vector under dens(.; theta).

    Symmetric positive definite for every finite ``theta``; equals the
    Hessian of :func:`log_partition`.  A downstream factorization failure
    indicates the quadrature rule is under-resolving the integrands.
    """
    dens, _ = _node_weights(theta, spec)
    w = spec.weights * dens
    mu = spec.phi_nodes.T @ w
    second = (spec.phi_nodes * w[:, None]).T @ spec.phi_nodes
    v = second - np.outer(mu, mu)
    return 0.5 * (v + v.T)


def _as_moment_array(mu_target) -> np.ndarray:
    if isinstance(mu_target, MomentVector):
        return mu_target.mu
    return np.atleast_1d(np.asarray(mu_target, dtype=float))


def solve_theta(mu_target, spec: BasisSpec, tol: float = 1e-10,
                max_iter: int = 100) -> ThetaSolution:
    """Solve the moment-matching system by Newton's method.

    Starts from zero coefficients and iterates
    ``theta <- theta + V(theta)^{-1} (mu_target - mu(theta))`` with a
    step-halving line search: the step is halved (up to 30 times) until the
    residual sup-norm strictly decreases, so the residual is non-increasing
    across accepted iterations.

    Parameters
    ----------
    mu_target : MomentVector or array_like
        Target moments, one per basis function.
    spec : BasisSpec
    tol : float
        Convergence threshold on the residual sup-norm.
    max_iter : int
        Iteration cap.

    Returns
    -------
    ThetaSolution
        With ``converged=True``.

    Raises
    ------
    BoundaryMoment
        If a target component exceeds the basis range, or the iterate
        escapes the box bound ``THETA_BOX_BOUND`` (the target sits at or
        outside the boundary of the attainable moment space).
    NonConvergence
        If the residual is still above ``tol`` after ``max_iter``
        iterations, or the line search cannot reduce it.
    """
    mu_target = _as_moment_array(mu_target)
    if not np.all(np.isfinite(mu_target)):
        raise ValueError("moment target must be finite")
    j = mu_target.size
    if spec.order != j:
        raise ValueError(f"target has {j} components but basis order is {spec.order}")
    sup = np.sqrt(2.0 * np.arange(1, j + 1) + 1.0)
    if np.any(np.abs(mu_target) >= sup):
        raise BoundaryMoment(
            "moment target at or outside the attainable range of the basis",
            target=mu_target,
        )

    theta = np.zeros(j)
    if not mu_target.any():
        # exact zero target: the root is exactly zero, skip the iteration
        return _solved(theta, 0.0, 0, spec)

    phi = spec.phi_nodes
    w = spec.weights

    def node_density(th):
        g = phi @ th
        e = np.exp(g - g.max())
        return e / (w @ e)

    dens = node_density(theta)
    resid = mu_target - phi.T @ (w * dens)
    rnorm = float(np.max(np.abs(resid)))
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            return _solved(theta, rnorm, it - 1, spec, dens)
        wd = w * dens
        mu = phi.T @ wd
        second = (phi * wd[:, None]).T @ phi
        v = second - np.outer(mu, mu)
        step = cho_solve(cho_factor(0.5 * (v + v.T)), resid)
        lam = 1.0
        for _ in range(31):
            cand = theta + lam * step
            cand_dens = node_density(cand)
            cand_resid = mu_target - phi.T @ (w * cand_dens)
            cand_rnorm = float(np.max(np.abs(cand_resid)))
            if cand_rnorm < rnorm:
                break
            lam *= 0.5
        else:
            raise NonConvergence(
                f"line search stalled at residual {rnorm:.3e}",
                solution=ThetaSolution(theta, rnorm, it, False),
            )
        theta, dens, resid, rnorm = cand, cand_dens, cand_resid, cand_rnorm
        if np.max(np.abs(theta)) > THETA_BOX_BOUND:
            raise BoundaryMoment(
                "coefficient iterate escaped the box bound; moment target is "
                "at or outside the moment-space boundary",
                target=mu_target,
            )
    if rnorm <= tol:
        return _solved(theta, rnorm, max_iter, spec, dens)
    raise NonConvergence(
        f"residual {rnorm:.3e} above tol {tol:.1e} after {max_iter} iterations",
        solution=ThetaSolution(theta, rnorm, max_iter, False),
    )


def _solved(theta, rnorm, iters, spec, dens=None) -> ThetaSolution:
    """Build a converged solution with its evaluation state pre-cached."""
    sol = ThetaSolution(theta, rnorm, iters, True)
    if dens is None:
        dens, _ = _node_weights(theta, spec)
    wd = spec.weights * dens
    mu = spec.phi_nodes.T @ wd
    second = (spec.phi_nodes * wd[:, None]).T @ spec.phi_nodes
    v = second - np.outer(mu, mu)
    sol._state_cache[id(spec)] = (spec, mu, cho_factor(0.5 * (v + v.T)))
    return sol


def pseudo_outcomes_theta(theta: ThetaSolution, y, spec: BasisSpec) -> np.ndarray:
    """Influence-style residuals -V(theta)^{-1} (mu(theta) - phi(y)).

    Accepts a scalar ``y`` (returns shape ``(J,)``) or an array of
    outcomes (returns shape ``(m, J)``).  Uses one linear solve against the
    cached covariance factorization.
    """
    if not theta.converged:
        raise ValueError("pseudo-outcomes require a converged solution")
    arr = np.asarray(y, dtype=float)
    phi = basis_matrix(spec, arr)
    mu = theta.moments_at(spec)
    rho = cho_solve(theta.cho(spec), (phi - mu).T).T
    return rho[0] if arr.ndim == 0 else rho


def t_functional(y: float, theta: ThetaSolution, spec: BasisSpec) -> np.ndarray:
    """Delta-method row vector mapping moment perturbations to density changes.

    Returns ``dens(y; theta) * (phi(y) - mu(theta))^T V(theta)^{-1}`` as a
     1-D array of length J.
    """
    if not theta.converged:
        raise ValueError("t_functional requires a converged solution")
    if not 0.0 <= y <= 1.0:
        raise ValueError("y must lie in [0, 1]")
    phi = basis_vector(spec, y)
    mu = theta.moments_at(spec)
    row = cho_solve(theta.cho(spec), phi - mu)
    return density(y, theta.theta, spec) * row
