"""End-to-end conditional density estimation at a query point.

``fit`` chains the pipeline: similarity weights -> weighted basis moments
-> solved coefficients; the fitted object then evaluates the density,
jackknife standard errors, and normal-quantile confidence intervals without
re-growing any trees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import expfam, forest
from .basis import BasisSpec, basis_matrix, default_basis
from .errors import AllWeightsZero, MissingPlan
from .forest import Dataset, ForestConfig, SESubsamplePlan, WeightVector

__all__ = ["FittedConditionalDensity", "fit", "pdf", "std_error",
           "confidence_interval", "resolve_se_params"]


@dataclass(frozen=True, eq=False)
class FittedConditionalDensity:
    """Everything needed to evaluate the estimate at one query point.

    ``per_tree_h`` holds each tree's holdout basis mean so that standard
    errors reuse the trees grown for the point estimate.  Instances are
    immutable; evaluation methods are safe for concurrent reads.
    """

    query_x: np.ndarray
    mu_hat: expfam.MomentVector
    theta_hat: expfam.ThetaSolution
    per_tree_h: np.ndarray
    plan: SESubsamplePlan | None
    config: ForestConfig
    basis: BasisSpec
    weights: WeightVector


def resolve_se_params(se_params, cfg: ForestConfig, n: int):
    """Normalize the SE request: None, "auto", or an (n_sigma, d_sigma) pair.

    The automatic choice uses a quarter of the trees as delete-groups and
    deletes a twentieth of the sample per group.
    """
    if se_params is None:
        return None
    if se_params == "auto":
        return max(1, cfg.n_trees // 4), max(1, n // 20)
    n_sigma, d_sigma = se_params
    return int(n_sigma), int(d_sigma)


def fit(data: Dataset, x, cfg: ForestConfig, se_params=None, rng=None,
        workers: int = 1, weights_override=None) -> FittedConditionalDensity:
    """Fit the conditional density of the outcome at covariate value ``x``.

    Parameters
    ----------
    data : Dataset
        Outcomes in [0, 1] with covariate rows.
    x : array_like
        Query point; must lie inside ``cfg.initial_parent``.
    cfg : ForestConfig
    se_params : None, "auto", or (n_sigma, d_sigma)
        When given, tree subsamples follow the paired delete-group plan so
        that ``std_error`` is available afterwards.
    rng : int or numpy Generator, optional
        Overrides ``cfg.seed`` as the source of randomness.
    workers : int
        Threads used to grow trees; the result does not depend on it.
    weights_override : array_like, optional
        Test hook: skip the forest and use these weights directly (e.g.
        uniform weights reproduce the unconditional series estimate through
        the same solver path).

    Raises
    ------
    AllWeightsZero, NonConvergence, BoundaryMoment
        Propagated with diagnostic payloads when the pipeline fails.
    """
    x = np.asarray(x, dtype=float)
    spec = default_basis(cfg.basis_order)

    if weights_override is not None:
        w = WeightVector(np.asarray(weights_override, dtype=float))
        mu = forest.mu_hat(w, data, spec)
        theta = expfam.solve_theta(mu, spec)
        return FittedConditionalDensity(x, mu, theta,
                                        np.zeros((0, cfg.basis_order)),
                                        None, cfg, spec, w)

    if not cfg.initial_parent.contains(x):
        raise ValueError("query point lies outside the initial parent node")
    if cfg.subsample_size >= data.n:
        raise ValueError("subsample_size must be smaller than the sample size")

    seed = forest._effective_seed(cfg, rng)
    master, tree_rngs = forest._tree_streams(seed, cfg.n_trees)
    resolved = resolve_se_params(se_params, cfg, data.n)
    if resolved is None:
        plan = None
        subsamples = forest.draw_subsamples(data.n, cfg, master)
    else:
        n_sigma, d_sigma = resolved
        plan = forest.se_subsample_plan(data.n, cfg, n_sigma, d_sigma, master)
        subsamples = list(plan.tree_subsamples)

    phi = basis_matrix(spec, data.y)
    branches = forest._grow_forest(x, data, cfg, spec, subsamples, tree_rngs,
                                   phi, workers)
    w = WeightVector(forest._weights_from_branches(branches, data.n))
    if w.total <= 0.0:
        raise AllWeightsZero("every tree produced an empty leaf at this query point")
    per_tree_h = forest.per_tree_means(branches, phi)
    mu = expfam.MomentVector(per_tree_h.mean(axis=0))
    theta = expfam.solve_theta(mu, spec)
    return FittedConditionalDensity(x, mu, theta, per_tree_h, plan, cfg, spec, w)


def pdf(fitted: FittedConditionalDensity, y):
    """Evaluate the fitted density at ``y`` (scalar or array); strictly positive."""
    return expfam.density(y, fitted.theta_hat.theta, fitted.basis)


def std_error(fitted: FittedConditionalDensity, y: float,
              t_row: np.ndarray = None) -> float:
    """Jackknife standard error of the fitted density at ``y``.

    ``t_row`` replaces the delta-method row vector when given (diagnostics
    hook); the value scales linearly in it.
    """
    if fitted.plan is None:
        raise MissingPlan("fit was built without se_params; no subsample plan stored")
    if t_row is None:
        t_row = expfam.t_functional(y, fitted.theta_hat, fitted.basis)
    plan = fitted.plan
    n = fitted.weights.weights.size
    return forest.sigma_fe(plan, fitted.per_tree_h, t_row, n,
                           plan.d_sigma, plan.n_sigma)


def confidence_interval(fitted: FittedConditionalDensity, y: float,
                        level: float = 0.95) -> tuple[float, float]:
    """Symmetric normal-quantile interval for the density at ``y``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    center = pdf(fitted, y)
    z = float(ndtri(0.5 + level / 2.0))
    half = z * std_error(fitted, y)
    return center - half, center + half
