"""Critical micelle concentration from tensiometry data.

Surface tension falls linearly in log concentration up to the CMC and is
flat (or gently sloped) above it, so the data splits into two regimes. Both
are fitted by ordinary least squares in the (ln concentration, surface
tension) plane; the CMC is the concentration where the two lines intersect,
with its uncertainty propagated from the fit-parameter covariances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MIN_POINTS_PER_REGIME = 3
MIN_POINTS = 2 * MIN_POINTS_PER_REGIME
PARALLEL_TOL = 1e-12

INPUT_COLUMNS = ("concentration_ul_per_l", "surface_tension_mN_per_m")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class TensiometryPoint:
    concentration_ul_per_l: float
    surface_tension_mN_per_m: float

    def __post_init__(self):
        if self.concentration_ul_per_l <= 0:
            raise ValueError("concentration must be strictly positive "
                             f"(log is taken), got {self.concentration_ul_per_l}")


@dataclass
class CmcResult:
    cmc_ul_per_l: float
    uncertainty_ul_per_l: float
    line_pre: tuple[float, float]    # (slope, intercept) in (ln c, SFT)
    line_post: tuple[float, float]
    split_index: int                 # first point of the post-CMC regime


def fit_line(xs, ys):
    """OLS slope/intercept with the standard 2x2 parameter covariance."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = xs.size
    if n < 2:
        raise FitError("need at least 2 points for a line fit")
    if np.ptp(xs) == 0:
        raise FitError("degenerate fit: all x values are equal")
    design = np.column_stack([xs, np.ones(n)])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    residuals = ys - design @ coef
    rss = float(residuals @ residuals)
    dof = n - 2
    sigma2 = rss / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return float(coef[0]), float(coef[1]), cov


def _split_residual(xs, ys, split):
    m1, b1, _ = fit_line(xs[:split], ys[:split])
    m2, b2, _ = fit_line(xs[split:], ys[split:])
    r1 = ys[:split] - (m1 * xs[:split] + b1)
    r2 = ys[split:] - (m2 * xs[split:] + b2)
    return float(r1 @ r1 + r2 @ r2)


def fit_two_regimes(points: list[TensiometryPoint]) -> CmcResult:
    """Exhaustive split search + two OLS lines + intersection."""
    if len(points) < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points spanning both "
                       f"regimes, got {len(points)}")
    points = sorted(points, key=lambda p: p.concentration_ul_per_l)
    xs = np.log([p.concentration_ul_per_l for p in points])
    ys = np.array([p.surface_tension_mN_per_m for p in points])

    best_split = None
    best_res = np.inf
    for split in range(MIN_POINTS_PER_REGIME, len(points) - MIN_POINTS_PER_REGIME + 1):
        res = _split_residual(xs, ys, split)
        if res < best_res:
            best_res = res
            best_split = split

    m1, b1, cov1 = fit_line(xs[:best_split], ys[:best_split])
    m2, b2, cov2 = fit_line(xs[best_split:], ys[best_split:])

    dm = m1 - m2
    scale = max(abs(m1), abs(m2), 1.0)
    if abs(dm) < PARALLEL_TOL * scale:
        raise FitError("fitted regime lines are (near-)parallel: no intersection")

    x_star = (b2 - b1) / dm
    # first-order propagation of var(x*) from the two independent fits
    jac1 = np.array([-x_star / dm, -1.0 / dm])   # d x*/d(m1, b1)
    jac2 = np.array([x_star / dm, 1.0 / dm])     # d x*/d(m2, b2)
    var_x = float(jac1 @ cov1 @ jac1 + jac2 @ cov2 @ jac2)
    cmc = float(np.exp(x_star))
    uncertainty = cmc * float(np.sqrt(max(var_x, 0.0)))

    return CmcResult(
        cmc_ul_per_l=cmc,
        uncertainty_ul_per_l=uncertainty,
        line_pre=(m1, b1),
        line_post=(m2, b2),
        split_index=int(best_split),
    )


def read_tensiometry_csv(path) -> list[TensiometryPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or set(INPUT_COLUMNS) - set(reader.fieldnames):
            raise FitError(f"{path}: expected columns {','.join(INPUT_COLUMNS)}")
        return [TensiometryPoint(float(r[INPUT_COLUMNS[0]]),
                                 float(r[INPUT_COLUMNS[1]]))
                for r in reader]


def format_report(result: CmcResult) -> str:
    lines = [
        "CMC fit report",
        f"cmc_ul_per_l = {result.cmc_ul_per_l:.6g}",
        f"uncertainty_ul_per_l = {result.uncertainty_ul_per_l:.6g}",
        f"line_pre_slope = {result.line_pre[0]:.6g}",
        f"line_pre_intercept = {result.line_pre[1]:.6g}",
        f"line_post_slope = {result.line_post[0]:.6g}",
        f"line_post_intercept = {result.line_post[1]:.6g}",
        f"split_index = {result.split_index}",
        "(lines are fitted in the (ln concentration, surface tension) plane)",
    ]
    return "\n".join(lines) + "\n"
