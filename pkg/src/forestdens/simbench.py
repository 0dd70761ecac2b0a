"""Monte Carlo designs, truth formulas, the oracle kernel baseline, and the harness.

Three data-generating designs share the covariate law (four coordinates,
independent normals with mean 1/2 and variance 1/8 truncated to [0, 1]; the
fourth coordinate never enters the outcome law):

* ``D1``: Beta(1 + x1/4 + x2/4, 1 + x3/2), truncated to [0.1, 0.9];
* ``D2``: log-normal with location 1/2 + x1 + x2 and squared scale
  1 + (x3 - 1/2)^2, truncated to [0.25, 5];
* ``D3``: equal-weight mixture of normals with means -(5 + x1 + x2) and
  +(5 + x1 + x2) and variance 18 + (x3 - 1/2)^2 / 10, truncated to
  [-12, 12].

Each truncated law is rescaled affinely so the outcome lives on [0, 1];
sampling inverts the truncated CDF.  The harness repeats: draw a sample,
fit at x = (1/2, 1/2, 1/2, 1/2), and record pointwise errors, standard
errors, interval coverage, and the integrated squared error over
[0.15, 0.85].
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import simpson
from scipy.special import betainc, betaincinv, ndtr, ndtri

from . import estimator, forest
from .errors import EstimationError, ZeroDenominator
from .forest import Dataset, ForestConfig

__all__ = [
    "DESIGNS",
    "DEFAULT_DESIGN_POINTS",
    "MCReport",
    "gen_covariates",
    "gen_outcome",
    "true_density",
    "true_cdf",
    "kernel_baseline",
    "run_mc",
    "report_rows",
    "write_report_csv",
    "report_to_dict",
]

DESIGNS = ("D1", "D2", "D3")
DEFAULT_DESIGN_POINTS = (0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875)

_COV_SD = np.sqrt(1.0 / 8.0)
_COV_DIM = 4


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` covariate rows from the truncated-normal product law.

    Coordinates are independent, so each is drawn by inverting its own
    truncated CDF.
    """
    if n < 1:
        raise ValueError("n must be positive")
    lo = ndtr((0.0 - 0.5) / _COV_SD)
    hi = ndtr((1.0 - 0.5) / _COV_SD)
    u = rng.random((n, _COV_DIM))
    return 0.5 + _COV_SD * ndtri(lo + u * (hi - lo))


def _check_design(design: str) -> str:
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")
    return design


def _design_params(design: str, x: np.ndarray):
    """Per-row distribution parameters and the truncation window."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if design == "D1":
        return (1.0 + x[:, 0] / 4.0 + x[:, 1] / 4.0, 1.0 + x[:, 2] / 2.0), (0.1, 0.9)
    if design == "D2":
        return (0.5 + x[:, 0] + x[:, 1],
                np.sqrt(1.0 + (x[:, 2] - 0.5) ** 2)), (0.25, 5.0)
    m = 5.0 + x[:, 0] + x[:, 1]
    sd = np.sqrt(18.0 + (x[:, 2] - 0.5) ** 2 / 10.0)
    return (m, sd), (-12.0, 12.0)


def _base_cdf(design: str, t, params):
    if design == "D1":
        a, b = params
        return betainc(a, b, t)
    if design == "D2":
        mu, sig = params
        return ndtr((np.log(t) - mu) / sig)
    m, sd = params
    return 0.5 * (ndtr((t + m) / sd) + ndtr((t - m) / sd))


def _base_pdf(design: str, t, params):
    if design == "D1":
        a, b = params
        return stats.beta.pdf(t, a, b)
    if design == "D2":
        mu, sig = params
        return stats.norm.pdf((np.log(t) - mu) / sig) / (sig * t)
    m, sd = params
    return 0.5 * (stats.norm.pdf(t, -m, sd) + stats.norm.pdf(t, m, sd))


def gen_outcome(design: str, x, rng: np.random.Generator):
    """Draw outcomes at covariate rows ``x`` ((d,) or (n, d)); values in [0, 1].

    The truncated law is sampled by inverse CDF: uniform draws are mapped
    into the CDF range over the truncation window and inverted (closed form
    for D1/D2, bisection for the D3 mixture), then the window is rescaled
    affinely onto [0, 1].
    """
    design = _check_design(design)
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    params, (lo, hi) = _design_params(design, arr)
    u = rng.random(arr.shape[0])
    c_lo = _base_cdf(design, lo, params)
    c_hi = _base_cdf(design, hi, params)
    p = c_lo + u * (c_hi - c_lo)
    if design == "D1":
        a, b = params
        t = betaincinv(a, b, p)
    elif design == "D2":
        mu, sig = params
        t = np.exp(mu + sig * ndtri(p))
    else:
        t = _bisect_cdf(lambda v: _base_cdf("D3", v, params), p, lo, hi)
    y = (np.clip(t, lo, hi) - lo) / (hi - lo)
    return float(y[0]) if np.asarray(x).ndim == 1 else y


def _bisect_cdf(cdf, p, lo, hi, iters: int = 90) -> np.ndarray:
    """Vectorized bisection for a monotone CDF; exact to double precision."""
    a = np.full_like(p, lo, dtype=float)
    b = np.full_like(p, hi, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        go_right = cdf(mid) < p
        a = np.where(go_right, mid, a)
        b = np.where(go_right, b, mid)
    return 0.5 * (a + b)


def true_density(design: str, y, x):
    """Conditional density of the rescaled truncated law at ``y`` in [0, 1]."""
    design = _check_design(design)
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("y must lie in [0, 1]")
    params, (lo, hi) = _design_params(design, x)
    mass = _base_cdf(design, hi, params) - _base_cdf(design, lo, params)
    t = lo + (hi - lo) * arr
    vals = (hi - lo) * _base_pdf(design, t, params) / mass
    return float(np.squeeze(vals)) if arr.ndim == 0 else np.asarray(vals).reshape(arr.shape)


def true_cdf(design: str, y, x):
    """Conditional CDF matching :func:`true_density`."""
    design = _check_design(design)
    arr = np.asarray(y, dtype=float)
    params, (lo, hi) = _design_params(design, x)
    c_lo = _base_cdf(design, lo, params)
    c_hi = _base_cdf(design, hi, params)
    t = lo + (hi - lo) * np.clip(arr, 0.0, 1.0)
    vals = (_base_cdf(design, t, params) - c_lo) / (c_hi - c_lo)
    return float(np.squeeze(vals)) if arr.ndim == 0 else np.asarray(vals).reshape(arr.shape)


def _triweight(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    inside = np.abs(u) <= 1.0
    out[inside] = (35.0 / 32.0) * (1.0 - u[inside] ** 2) ** 3
    return out


def kernel_baseline(data: Dataset, y: float, x, bandwidths=None) -> float:
    """Oracle kernel ratio estimate of the conditional density.

    Product tri-weight kernels over the outcome and the first three
    covariates only (the irrelevant fourth is ignored by construction).
    Default bandwidths are 1.06 times the sample standard deviation scaled
    by ``n^(-1/8)`` in the numerator and ``n^(-1/7)`` for the covariates in
    the denominator; ``bandwidths=(h_y, h_x_num, h_x_den)`` overrides them.
    """
    x = np.asarray(x, dtype=float)
    n = data.n
    if bandwidths is None:
        h_y = 1.06 * np.std(data.y, ddof=1) * n ** (-1.0 / 8.0)
        sx = np.std(data.x[:, :3], axis=0, ddof=1)
        h_num = 1.06 * sx * n ** (-1.0 / 8.0)
        h_den = 1.06 * sx * n ** (-1.0 / 7.0)
    else:
        h_y, h_num, h_den = bandwidths
        h_num = np.broadcast_to(np.asarray(h_num, dtype=float), (3,))
        h_den = np.broadcast_to(np.asarray(h_den, dtype=float), (3,))
    ky = _triweight((y - data.y) / h_y) / h_y
    kx_num = np.prod(_triweight((x[:3] - data.x[:, :3]) / h_num) / h_num, axis=1)
    kx_den = np.prod(_triweight((x[:3] - data.x[:, :3]) / h_den) / h_den, axis=1)
    den = kx_den.mean()
    if den <= 0.0:
        raise ZeroDenominator("no sample mass near the query point")
    return float((ky * kx_num).mean() / den)


@dataclass(frozen=True, eq=False)
class MCReport:
    """Aggregated Monte Carlo results for one design and sample size."""

    design: str
    n: int
    reps: int
    completed: int
    design_points: np.ndarray
    truth: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    avg_se: np.ndarray
    coverage: np.ndarray
    mise: float
    ci_level: float
    mise_interval: tuple[float, float]
    mise_grid_points: int
    runtime_seconds: float
    failures: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mise < 0.0:
            raise ValueError("MISE must be nonnegative")
        cov = np.asarray(self.coverage, dtype=float)
        if np.any((cov < 0.0) | (cov > 1.0)):
            raise ValueError("coverage must lie in [0, 1]")


def _one_replication(design, n, cfg, se_params, points, grid, ci_level, x_query, rep_ss):
    rng = np.random.default_rng(rep_ss)
    xmat = gen_covariates(n, rng)
    yvec = gen_outcome(design, xmat, rng)
    data = Dataset(yvec, xmat)
    fitted = estimator.fit(data, x_query, cfg, se_params=se_params, rng=rng)
    f_points = estimator.pdf(fitted, points)
    f_grid = estimator.pdf(fitted, grid)
    if se_params is not None:
        se = np.array([estimator.std_error(fitted, float(y)) for y in points])
        z = float(ndtri(0.5 + ci_level / 2.0))
        truth = true_density(design, points, x_query)
        hits = (np.abs(f_points - truth) <= z * se).astype(float)
    else:
        se = np.full(points.size, np.nan)
        hits = np.full(points.size, np.nan)
    return f_points, f_grid, se, hits


def run_mc(design: str, n: int, reps: int, cfg: ForestConfig, se_params,
           design_points=DEFAULT_DESIGN_POINTS, rng=None, workers: int = 1,
           mise_grid_points: int = 141, ci_level: float = 0.95,
           mise_interval=(0.15, 0.85), rep_seeds=None) -> MCReport:
    """Run the Monte Carlo benchmark for one design.

    Each replication generates a fresh sample, fits at the fixed query
    point x = (1/2, 1/2, 1/2, 1/2), and records the estimate at the design
    points and on the integrated-squared-error grid.  Replication streams
    derive from the master seed and the replication index, so aggregation
    does not depend on the worker pool; failures are collected and reported
    without aborting the run.

    ``rep_seeds`` overrides the per-replication seeds (testing hook; e.g.
    two identical seeds give zero dispersion).
    """
    design = _check_design(design)
    if reps < 2:
        raise ValueError("need at least 2 replications")
    points = np.asarray(design_points, dtype=float)
    lo, hi = mise_interval
    grid = np.linspace(lo, hi, mise_grid_points)
    x_query = np.full(4, 0.5)
    truth_points = true_density(design, points, x_query)
    truth_grid = true_density(design, grid, x_query)
    se_params = estimator.resolve_se_params(se_params, cfg, n)

    if rep_seeds is None:
        master = np.random.SeedSequence(cfg.seed if rng is None else
                                        forest._effective_seed(cfg, rng))
        rep_streams = master.spawn(reps)
    else:
        if len(rep_seeds) != reps:
            raise ValueError("rep_seeds must have one entry per replication")
        rep_streams = [np.random.SeedSequence(int(s)) for s in rep_seeds]

    t0 = time.perf_counter()
    f_points = np.full((reps, points.size), np.nan)
    ise = np.full(reps, np.nan)
    se_all = np.full((reps, points.size), np.nan)
    hits = np.full((reps, points.size), np.nan)
    failures: list[str] = []

    def record(r, outcome) -> None:
        fp, fg, se, hit = outcome
        f_points[r] = fp
        ise[r] = simpson((fg - truth_grid) ** 2, x=grid)
        se_all[r] = se
        hits[r] = hit

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {r: pool.submit(_one_replication, design, n, cfg, se_params,
                                      points, grid, ci_level, x_query, rep_streams[r])
                       for r in range(reps)}
            for r, fut in futures.items():
                try:
                    record(r, fut.result())
                except EstimationError as exc:
                    failures.append(f"replication {r}: {type(exc).__name__}: {exc}")
    else:
        for r in range(reps):
            try:
                record(r, _one_replication(design, n, cfg, se_params, points,
                                           grid, ci_level, x_query, rep_streams[r]))
            except EstimationError as exc:
                failures.append(f"replication {r}: {type(exc).__name__}: {exc}")

    ok = ~np.isnan(f_points[:, 0])
    completed = int(ok.sum())
    if completed < 2:
        raise EstimationError("fewer than 2 replications completed")
    fp = f_points[ok]
    bias = fp.mean(axis=0) - truth_points
    sd = fp.std(axis=0, ddof=1)
    if se_params is not None:
        avg_se = se_all[ok].mean(axis=0)
        coverage = hits[ok].mean(axis=0)
    else:
        avg_se = np.full(points.size, np.nan)
        coverage = np.full(points.size, np.nan)
    return MCReport(
        design=design, n=n, reps=reps, completed=completed,
        design_points=points, truth=truth_points, bias=bias, sd=sd,
        avg_se=avg_se, coverage=coverage,
        mise=float(ise[ok].mean()), ci_level=ci_level,
        mise_interval=(float(lo), float(hi)), mise_grid_points=mise_grid_points,
        runtime_seconds=time.perf_counter() - t0, failures=tuple(failures),
    )


def report_rows(report: MCReport) -> list[list[str]]:
    """Rows of the fixed-schema CSV: one per design point, then the MISE row.

    Columns are ``y, truth, bias, sd, avg_se, coverage``; the MISE row is
    labelled ``mise`` and stores its value in the second column.
    """
    def fmt(v) -> str:
        return "" if (v is None or (isinstance(v, float) and np.isnan(v))) else repr(float(v))

    rows = []
    for i, y in enumerate(report.design_points):
        rows.append([fmt(y), fmt(report.truth[i]), fmt(report.bias[i]),
                     fmt(report.sd[i]), fmt(report.avg_se[i]), fmt(report.coverage[i])])
    rows.append(["mise", fmt(report.mise), "", "", "", ""])
    return rows


def write_report_csv(report: MCReport, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "truth", "bias", "sd", "avg_se", "coverage"])
        writer.writerows(report_rows(report))


def report_to_dict(report: MCReport) -> dict:
    """JSON-ready summary; excludes wall-clock runtime so outputs are reproducible."""
    return {
        "design": report.design,
        "n": report.n,
        "reps": report.reps,
        "completed": report.completed,
        "ci_level": report.ci_level,
        "design_points": report.design_points.tolist(),
        "truth": report.truth.tolist(),
        "bias": report.bias.tolist(),
        "sd": report.sd.tolist(),
        "avg_se": [None if np.isnan(v) else v for v in report.avg_se.tolist()],
        "coverage": [None if np.isnan(v) else v for v in report.coverage.tolist()],
        "mise": report.mise,
        "mise_interval": list(report.mise_interval),
        "mise_grid_points": report.mise_grid_points,
        "failures": list(report.failures),
    }
