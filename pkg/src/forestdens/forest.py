"""Honest forest branch growth, similarity weights, and the variance subsample plan.

A tree here is grown only along the branch containing the query point: each
subsample is split into a holdout half and a split-deciding half, splits are
chosen on the deciding half by maximizing a heterogeneity score over an
axis-aligned threshold grid, and the prediction at the leaf uses only the
holdout half (honesty).  Per-observation similarity weights average the
normalized leaf co-membership indicator over trees, with the convention
0/0 = 0 for trees whose leaf captures no holdout point.

Two splitting schemes are supported:

* ``"theta"``: pseudo-outcomes are the influence residuals of the
  exponential-family coefficients solved at the current node,
* ``"mu"``: pseudo-outcomes are centered basis values, a cheap alternative
  that skips the per-node solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

from . import expfam
from .basis import BasisSpec, basis_matrix, default_basis
from .errors import AllWeightsZero, BoundaryMoment, NoCleanTrees, NonConvergence

__all__ = [
    "Box",
    "Dataset",
    "ForestConfig",
    "SplitRecord",
    "BranchResult",
    "WeightVector",
    "SESubsamplePlan",
    "poisson_dim_law",
    "draw_subsamples",
    "split_half",
    "delta_tilde",
    "best_split",
    "grow_branch",
    "grow_from_halves",
    "weights",
    "mu_hat",
    "se_subsample_plan",
    "sigma_fe",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box; lower faces opened by splits are tracked per dimension."""

    lower: np.ndarray
    upper: np.ndarray
    lower_open: np.ndarray = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box has empty extent")
        open_ = (np.zeros(lo.size, dtype=bool) if self.lower_open is None
                 else np.asarray(self.lower_open, dtype=bool))
        object.__setattr__(self, "lower", _readonly(lo))
        object.__setattr__(self, "upper", _readonly(hi))
        object.__setattr__(self, "lower_open", _readonly(open_))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for rows of ``points`` (shape ``(m, d)`` or ``(d,)``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        above = np.where(self.lower_open, pts > self.lower, pts >= self.lower)
        inside = above.all(axis=1) & (pts <= self.upper).all(axis=1)
        return inside if np.asarray(points).ndim > 1 else bool(inside[0])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed outcomes in [0, 1] with their covariate rows."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if y.ndim != 1 or x.shape[0] != y.size:
            raise ValueError("outcomes and covariates must have matching length")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite values")
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise ValueError("outcomes must lie in [0, 1]")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def poisson_dim_law(rng: np.random.Generator, d: int) -> np.ndarray:
    """Default split-dimension law: min(max(Poisson(5), 1), d) distinct dims.

    Every singleton has positive probability, so any direction can be split
    regardless of the score function.
    """
    k = min(max(int(rng.poisson(5)), 1), d)
    return np.sort(rng.choice(d, size=k, replace=False))


@dataclass(frozen=True, eq=False)
class ForestConfig:
    """Tuning parameters for branch growth and weighting.

    Parameters
    ----------
    subsample_size : int
        Observations drawn per tree (without replacement); must satisfy
        ``2 * min_child <= subsample_size`` and be below the sample size.
    n_trees : int
        Number of subsamples / trees.
    basis_order : int
        Number of non-constant basis functions used by the splitting scores.
    initial_parent : Box or array_like
        The root node; the query point must lie inside it.  An array of
        shape ``(2, d)`` is read as (lower, upper).
    min_child : int
        Minimum deciding-half count per child.
    min_fraction : float
        Minimum fraction of the parent's deciding-half members per child,
        in (0, 1/2).
    split_dim_law : callable(rng, d) -> array of dims
        Law of the random set of dimensions eligible at each split.  Must
        never return the empty set and should give every singleton positive
        mass.
    scheme : {"theta", "mu"}
        Splitting scheme.
    n_grid : int
        Candidate thresholds per eligible dimension.
    seed : int
        Base seed; per-tree streams are derived from (seed, tree index).
    """

    subsample_size: int
    n_trees: int
    basis_order: int
    initial_parent: Box
    min_child: int = 10
    min_fraction: float = 0.05
    split_dim_law: Callable[[np.random.Generator, int], np.ndarray] = poisson_dim_law
    scheme: str = "theta"
    n_grid: int = 32
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.initial_parent, Box):
            bounds = np.asarray(self.initial_parent, dtype=float)
            object.__setattr__(self, "initial_parent", Box(bounds[0], bounds[1]))
        if self.min_child < 2:
            raise ValueError("min_child must be at least 2")
        if self.subsample_size < 2 * self.min_child:
            raise ValueError("subsample_size must be at least 2 * min_child")
        if not 0.0 < self.min_fraction < 0.5:
            raise ValueError("min_fraction must lie in (0, 1/2)")
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.basis_order < 1:
            raise ValueError("basis_order must be positive")
        if self.n_grid < 1:
            raise ValueError("n_grid must be positive")
        if self.scheme not in ("theta", "mu"):
            raise ValueError("scheme must be 'theta' or 'mu'")

    @property
    def dim(self) -> int:
        return self.initial_parent.dim


@dataclass(frozen=True, eq=False)
class SplitRecord:
    """One executed split, with deciding-half counts for auditability."""

    dim: int
    threshold: float
    n_parent: int
    n_left: int
    n_right: int


@dataclass(frozen=True, eq=False)
class BranchResult:
    """Leaf of the branch containing the query point.

    ``holdout_members`` are the holdout-half indices whose covariates fall
    in ``leaf_box``; ``split_members`` are the deciding-half indices whose
    outcomes were visible to the split search.  Honesty requires the two
    sets to be disjoint.
    """

    leaf_box: Box
    holdout_members: np.ndarray
    split_members: np.ndarray
    splits: tuple[SplitRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "holdout_members",
                           _readonly(np.asarray(self.holdout_members, dtype=np.intp)))
        object.__setattr__(self, "split_members",
                           _readonly(np.asarray(self.split_members, dtype=np.intp)))


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-observation similarity weights on the simplex (up to empty-leaf mass)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if w.sum() > 1.0 + 1e-12:
            raise ValueError("weights must sum to at most 1")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class SESubsamplePlan:
    """Paired delete-groups and tree subsamples for the jackknife variance.

    For each delete-group ``l``, trees ``2l`` and ``2l + 1`` (0-based) are
    drawn from the complement of the group, guaranteeing at least two clean
    trees per group; the remaining trees are drawn from the full index set.
    """

    delete_groups: tuple[np.ndarray, ...]
    tree_subsamples: tuple[np.ndarray, ...]

    def __post_init__(self):
        groups = tuple(_readonly(np.asarray(g, dtype=np.intp)) for g in self.delete_groups)
        trees = tuple(_readonly(np.asarray(t, dtype=np.intp)) for t in self.tree_subsamples)
        if 2 * len(groups) >= len(trees) - 1:
            raise ValueError("need 2 * n_sigma < n_trees - 1")
        for l, g in enumerate(groups):
            gset = set(g.tolist())
            for t in (2 * l, 2 * l + 1):
                if gset.intersection(trees[t].tolist()):
                    raise ValueError(f"tree {t} overlaps delete group {l}")
        object.__setattr__(self, "delete_groups", groups)
        object.__setattr__(self, "tree_subsamples", trees)

    @property
    def n_sigma(self) -> int:
        return len(self.delete_groups)

    @property
    def d_sigma(self) -> int:
        return self.delete_groups[0].size if self.delete_groups else 0


def draw_subsamples(n: int, cfg: ForestConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw ``cfg.n_trees`` sorted index sets of size ``cfg.subsample_size``."""
    if cfg.subsample_size >= n:
        raise ValueError("subsample_size must be smaller than the sample size")
    return [np.sort(rng.choice(n, size=cfg.subsample_size, replace=False))
            for _ in range(cfg.n_trees)]


def split_half(index_set, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Divide an index set into holdout and split-deciding halves.

    The deciding half gets ``floor(s / 2)`` elements chosen uniformly among
    all such subsets; the holdout half is the complement.
    """
    idx = np.asarray(index_set, dtype=np.intp)
    s = idx.size
    if s < 2:
        raise ValueError("need at least two indices to split")
    mask = np.zeros(s, dtype=bool)
    mask[rng.choice(s, size=s // 2, replace=False)] = True
    return np.sort(idx[~mask]), np.sort(idx[mask])


def delta_tilde(rho_by_child) -> float:
    """Heterogeneity score of a candidate split.

    ``rho_by_child`` is a pair of pseudo-outcome stacks, one per child.
    The score sums, over basis components, the squared within-child column
    sums scaled by the inverse child counts.
    """
    rho1, rho2 = (np.atleast_2d(np.asarray(r, dtype=float)) for r in rho_by_child)
    if rho1.shape[0] == 0 or rho2.shape[0] == 0:
        raise ValueError("both children must be nonempty")
    s1 = rho1.sum(axis=0)
    s2 = rho2.sum(axis=0)
    return float(s1 @ s1 / rho1.shape[0] + s2 @ s2 / rho2.shape[0])


def _pseudo_outcomes(pivot, phi_members: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Pseudo-outcomes for all members, given a scheme pivot."""
    if isinstance(pivot, expfam.ThetaSolution):
        mu = pivot.moments_at(spec)
        return cho_solve(pivot.cho(spec), (phi_members - mu).T).T
    if isinstance(pivot, expfam.MomentVector):
        return phi_members - pivot.mu
    raise TypeError("pivot must be a ThetaSolution or a MomentVector")


def _node_pivot(phi_members: np.ndarray, cfg: ForestConfig, spec: BasisSpec):
    """Scheme pivot at a node: a solved coefficient vector, or the plain mean.

    Under the "theta" scheme the node's sample moment vector is passed to
    the Newton solver; small nodes often put it at or beyond the moment
    space, in which case the centered-basis pseudo-outcomes are used for
    this split instead.
    """
    mean = phi_members.mean(axis=0)
    if cfg.scheme == "theta":
        try:
            return expfam.solve_theta(mean, spec)
        except (NonConvergence, BoundaryMoment):
            pass
    return expfam.MomentVector(mean)


def best_split(parent: Box, x_members: np.ndarray, y_members: np.ndarray,
               pivot, cfg: ForestConfig, allowed_dims,
               spec: BasisSpec = None, rho: np.ndarray = None):
    """Search the threshold grid for the feasible split with the highest score.

    For each allowed dimension, ``cfg.n_grid`` equally spaced interior
    thresholds between the members' min and max coordinate are scored; a
    candidate is feasible only when both children keep at least
    ``max(min_fraction * m, min_child)`` members.  Ties break toward the
    lexicographically smallest (dimension, threshold).

    Returns ``(dim, threshold)`` or ``None`` when no candidate is feasible.
    ``rho`` may supply precomputed pseudo-outcomes; otherwise they are
    derived from ``pivot``.
    """
    x_members = np.atleast_2d(np.asarray(x_members, dtype=float))
    m = x_members.shape[0]
    if rho is None:
        if spec is None:
            spec = default_basis(cfg.basis_order)
        rho = _pseudo_outcomes(pivot, basis_matrix(spec, np.asarray(y_members, dtype=float)), spec)
    bound = max(cfg.min_fraction * m, cfg.min_child)
    total = rho.sum(axis=0)

    best = None
    best_score = -np.inf
    for d in np.sort(np.asarray(allowed_dims, dtype=np.intp)):
        coords = x_members[:, d]
        lo, hi = coords.min(), coords.max()
        if not hi > lo:
            continue
        thresholds = np.linspace(lo, hi, cfg.n_grid + 2)[1:-1]
        order = np.argsort(coords, kind="stable")
        csum = np.cumsum(rho[order], axis=0)
        n_left = np.searchsorted(coords[order], thresholds, side="right")
        feasible = (n_left >= bound) & ((m - n_left) >= bound)
        if not feasible.any():
            continue
        left = csum[n_left[feasible] - 1]
        right = total - left
        nl = n_left[feasible]
        scores = (left * left).sum(axis=1) / nl + (right * right).sum(axis=1) / (m - nl)
        for thr, sc in zip(thresholds[feasible], scores):
            if sc > best_score:
                best_score = sc
                best = (int(d), float(thr))
    return best


def grow_from_halves(x, y_sub: np.ndarray, x_sub: np.ndarray, cfg: ForestConfig,
                     holdout_pos, deciding_pos, rng: np.random.Generator,
                     index=None, spec: BasisSpec = None,
                     phi_sub: np.ndarray = None) -> BranchResult:
    """Grow the branch containing ``x`` from an explicit half split.

    ``holdout_pos`` / ``deciding_pos`` are positions into the subsample
    arrays.  Splits consult only deciding-half members inside the current
    node; the loop stops when fewer than ``2 * min_child`` of them remain
    or no feasible split exists.  Exposed so the half-split device can be
    enumerated exactly.
    """
    x = np.asarray(x, dtype=float)
    box = cfg.initial_parent
    if not box.contains(x):
        raise ValueError("query point lies outside the initial parent node")
    if spec is None:
        spec = default_basis(cfg.basis_order)
    y_sub = np.asarray(y_sub, dtype=float)
    x_sub = np.atleast_2d(np.asarray(x_sub, dtype=float))
    holdout_pos = np.asarray(holdout_pos, dtype=np.intp)
    deciding_pos = np.asarray(deciding_pos, dtype=np.intp)
    if phi_sub is None:
        phi_sub = basis_matrix(spec, y_sub)

    lower = box.lower.copy()
    upper = box.upper.copy()
    lower_open = box.lower_open.copy()

    members = deciding_pos[box.contains(x_sub[deciding_pos])]
    records: list[SplitRecord] = []
    while members.size >= 2 * cfg.min_child:
        pivot = _node_pivot(phi_sub[members], cfg, spec)
        dims = np.asarray(cfg.split_dim_law(rng, box.dim), dtype=np.intp)
        if dims.size == 0 or dims.min() < 0 or dims.max() >= box.dim:
            raise ValueError("split_dim_law returned an invalid dimension set")
        rho = _pseudo_outcomes(pivot, phi_sub[members], spec)
        found = best_split(None, x_sub[members], y_sub[members], pivot, cfg,
                           dims, spec=spec, rho=rho)
        if found is None:
            break
        d, thr = found
        coords = x_sub[members, d]
        n_parent = members.size
        go_left = x[d] <= thr
        if go_left:
            keep = coords <= thr
            upper[d] = thr
        else:
            keep = coords > thr
            lower[d] = thr
            lower_open[d] = True
        n_keep = int(keep.sum())
        records.append(SplitRecord(d, thr, n_parent,
                                   n_keep if go_left else n_parent - n_keep,
                                   n_parent - n_keep if go_left else n_keep))
        members = members[keep]

    leaf = Box(lower, upper, lower_open)
    holdout = holdout_pos[leaf.contains(x_sub[holdout_pos])]
    if index is not None:
        index = np.asarray(index, dtype=np.intp)
        holdout = index[holdout]
        deciding = index[deciding_pos]
    else:
        deciding = deciding_pos
    return BranchResult(leaf, holdout, deciding, tuple(records))


def grow_branch(x, y_sub: np.ndarray, x_sub: np.ndarray, cfg: ForestConfig,
                rng: np.random.Generator, index=None, spec: BasisSpec = None,
                phi_sub: np.ndarray = None) -> BranchResult:
    """Draw the half-split device, then grow the branch containing ``x``."""
    s = np.asarray(y_sub).size
    holdout_pos, deciding_pos = split_half(np.arange(s), rng)
    return grow_from_halves(x, y_sub, x_sub, cfg, holdout_pos, deciding_pos,
                            rng, index=index, spec=spec, phi_sub=phi_sub)


def _tree_streams(seed: int, n_trees: int):
    """Master stream plus one independent stream per tree, from the base seed."""
    children = np.random.SeedSequence(seed).spawn(n_trees + 1)
    return (np.random.default_rng(children[0]),
            [np.random.default_rng(c) for c in children[1:]])


def _effective_seed(cfg: ForestConfig, rng) -> int:
    if rng is None:
        return int(cfg.seed)
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(np.iinfo(np.int64).max))


def _grow_forest(x, data: Dataset, cfg: ForestConfig, spec: BasisSpec,
                 subsamples, tree_rngs, phi: np.ndarray,
                 workers: int = 1) -> list[BranchResult]:
    """Grow every tree; results are merged in tree order regardless of workers."""
    x = np.asarray(x, dtype=float)
    results: list[BranchResult] = [None] * len(subsamples)

    def run(t: int) -> None:
        idx = subsamples[t]
        results[t] = grow_branch(x, data.y[idx], data.x[idx], cfg, tree_rngs[t],
                                 index=idx, spec=spec, phi_sub=phi[idx])

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(subsamples))))
    else:
        for t in range(len(subsamples)):
            run(t)
    return results


def _weights_from_branches(branches, n: int) -> np.ndarray:
    w = np.zeros(n)
    n_trees = len(branches)
    for br in branches:
        h = br.holdout_members
        if h.size:
            w[h] += 1.0 / (n_trees * h.size)
    return w


def per_tree_means(branches, phi: np.ndarray) -> np.ndarray:
    """Per-tree holdout basis means; empty leaves contribute zero rows."""
    out = np.zeros((len(branches), phi.shape[1]))
    for t, br in enumerate(branches):
        if br.holdout_members.size:
            out[t] = phi[br.holdout_members].mean(axis=0)
    return out


def weights(x, data: Dataset, cfg: ForestConfig, rng=None,
            workers: int = 1) -> WeightVector:
    """Similarity weights of every observation for the query point.

    Each tree spreads mass ``1 / n_trees`` uniformly over its holdout
    members in the leaf containing ``x`` (zero if the leaf is empty), so
    the weights sum to one exactly when every leaf is nonempty.
    Deterministic given ``cfg.seed`` and independent of ``workers``.
    """
    x = np.asarray(x, dtype=float)
    if not cfg.initial_parent.contains(x):
        raise ValueError("query point lies outside the initial parent node")
    seed = _effective_seed(cfg, rng)
    master, tree_rngs = _tree_streams(seed, cfg.n_trees)
    subsamples = draw_subsamples(data.n, cfg, master)
    spec = default_basis(cfg.basis_order)
    phi = basis_matrix(spec, data.y)
    branches = _grow_forest(x, data, cfg, spec, subsamples, tree_rngs, phi, workers)
    return WeightVector(_weights_from_branches(branches, data.n))


def mu_hat(weight_vector: WeightVector, data: Dataset,
           spec: BasisSpec) -> expfam.MomentVector:
    """Weighted basis average of the outcomes."""
    w = weight_vector.weights
    if w.sum() <= 0.0:
        raise AllWeightsZero("every tree produced an empty leaf")
    return expfam.MomentVector(basis_matrix(spec, data.y).T @ w)


def se_subsample_plan(n: int, cfg: ForestConfig, n_sigma: int, d_sigma: int,
                      rng: np.random.Generator) -> SESubsamplePlan:
    """Draw delete-groups and tree subsamples with the pairing guarantee.

    Group ``l`` has ``d_sigma`` indices; trees ``2l`` and ``2l + 1`` are
    drawn from its complement, the remaining trees from the full index set.
    """
    s = cfg.subsample_size
    if s >= n:
        raise ValueError("subsample_size must be smaller than the sample size")
    if not d_sigma < n - s:
        raise ValueError("d_sigma must be below n - subsample_size")
    if not 2 * n_sigma < cfg.n_trees - 1:
        raise ValueError("need 2 * n_sigma < n_trees - 1")
    if n_sigma < 1 or d_sigma < 1:
        raise ValueError("n_sigma and d_sigma must be positive")
    groups = []
    trees: list[np.ndarray] = []
    everyone = np.arange(n)
    for _ in range(n_sigma):
        g = np.sort(rng.choice(n, size=d_sigma, replace=False))
        rest = np.delete(everyone, g)
        trees.append(np.sort(rng.choice(rest, size=s, replace=False)))
        trees.append(np.sort(rng.choice(rest, size=s, replace=False)))
        groups.append(g)
    for _ in range(cfg.n_trees - 2 * n_sigma):
        trees.append(np.sort(rng.choice(n, size=s, replace=False)))
    return SESubsamplePlan(tuple(groups), tuple(trees))


def _clean_tree_mask(plan: SESubsamplePlan, n: int) -> np.ndarray:
    """Mask of shape (n_sigma, n_trees): tree disjoint from delete group."""
    from scipy import sparse

    n_trees = len(plan.tree_subsamples)
    s = plan.tree_subsamples[0].size
    rows = np.repeat(np.arange(n_trees), s)
    cols = np.concatenate(plan.tree_subsamples)
    member = sparse.csr_matrix((np.ones(cols.size, dtype=np.int32), (rows, cols)),
                               shape=(n_trees, n))
    d = plan.d_sigma
    grows = np.concatenate(plan.delete_groups)
    gcols = np.repeat(np.arange(plan.n_sigma), d)
    gmat = sparse.csr_matrix((np.ones(grows.size, dtype=np.int32), (grows, gcols)),
                             shape=(n, plan.n_sigma))
    counts = (member @ gmat).toarray()
    return counts.T == 0


def sigma_fe(plan: SESubsamplePlan, per_tree_h: np.ndarray, t_row: np.ndarray,
             n: int, d_sigma: int, n_sigma: int) -> float:
    """Feasible jackknife standard error from the paired subsample plan.

    For each delete-group the leave-group-out moment estimate averages the
    per-tree holdout means over trees disjoint from the group; the returned
    value is

        sqrt( (n - d_sigma) / (d_sigma * n_sigma)
              * sum_l [ t_row . (mu_minus_l - mean_l mu_minus_l) ]^2 ).
    """
    per_tree_h = np.atleast_2d(np.asarray(per_tree_h, dtype=float))
    t_row = np.asarray(t_row, dtype=float)
    clean = _clean_tree_mask(plan, n)
    counts = clean.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise NoCleanTrees(f"delete group {bad} has no disjoint tree subsample")
    mu_minus = (clean @ per_tree_h) / counts[:, None]
    dev = t_row @ (mu_minus - mu_minus.mean(axis=0)).T
    return float(np.sqrt((n - d_sigma) / (d_sigma * n_sigma) * (dev @ dev)))
