"""Objective-curve scans, zero location, and branch selection.

A scan concentrates the nuisance parameters out of the moment condition at
every point of a beta (or rho) grid and records the signed single-instrument
moment m and its square.  Zeros of m are the candidate solutions; a second
zero away from the truth is the pseudo-solution signature.  The two-step
estimator instead fits the reduced form once, inverts it into its two
branches, and lets a declared sign of the endogeneity direction pick one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DynpanError, InternalConsistencyError, ValidationError
from .estimate import (
    beta_scan_evaluator,
    concentrate_rho,
    fit_reduced_form,
)
from .model import (
    ParamPoint,
    ReducedFormParams,
    SolutionBranch,
    invert_reduced_form,
)

#: Default admissible scan ranges per axis.
DEFAULT_BOUNDS = {"beta": (-1.0, 3.0), "rho": (-0.999, 0.999)}

#: Guard threshold: the reduced form is treated as degenerate when the
#: y-feedback coefficient is within this many standard errors of zero.
PI_XY_GUARD_SE = 3.0


@dataclass
class RootInfo:
    """A refined zero of the signed concentrated moment."""

    location: float
    bracket: tuple[float, float]
    m_value: float
    iterations: int
    converged: bool


@dataclass
class MinimumInfo:
    """A refined interior local minimum of the squared moment."""

    location: float
    value: float
    grid_index: int


@dataclass
class ObjectiveCurve:
    """Signed concentrated moment over a grid, plus located features.

    ``ses`` holds the per-point sampling standard error of m.  Grid points
    where the underlying fit failed carry NaN.  ``zeros`` and ``minima``
    are filled by :func:`find_zeros` / :func:`find_local_minima`.
    """

    axis: str
    grid: np.ndarray
    m: np.ndarray
    msq: np.ndarray
    ses: np.ndarray
    zeros: list = field(default_factory=list)
    minima: list = field(default_factory=list)
    evaluator: Optional[Callable[[float], float]] = field(
        default=None, repr=False)


def scan_curve(panel, axis: str, grid, family: str = "quasi_diff",
               bounds: Optional[tuple] = None) -> ObjectiveCurve:
    """Evaluate the concentrated moment at each grid point.

    ``axis='beta'`` concentrates (alpha, rho) at each candidate slope and
    uses the single instrument x_{t-1}; ``axis='rho'`` concentrates the
    linear block at each candidate persistence and reports the x_{t-2}
    moment.  Estimation failures at individual points are recorded as NaN,
    not raised.
    """
    if axis not in ("beta", "rho"):
        raise ValidationError("axis must be beta or rho", field="axis")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("grid is empty", field="grid")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValidationError("grid must be strictly increasing",
                              field="grid")
    lo, hi = bounds if bounds is not None else DEFAULT_BOUNDS[axis]
    if grid[0] < lo or grid[-1] > hi:
        raise ValidationError(
            f"grid [{grid[0]}, {grid[-1]}] outside bounds [{lo}, {hi}]",
            field="grid")

    if axis == "beta":
        if family != "quasi_diff":
            raise ValidationError(
                "beta scans concentrate the quasi_diff family only",
                field="family")
        fast_eval = beta_scan_evaluator(panel)

        def point(b):
            cb = fast_eval(b)
            return cb.moment, cb.moment_se
    else:
        def point(r):
            cr = concentrate_rho(panel, r, family=family)
            return cr.moments[0], cr.moment_ses[0]

    m = np.empty(grid.size)
    ses = np.empty(grid.size)
    for i, g in enumerate(grid):
        try:
            m[i], ses[i] = point(g)
        except DynpanError:
            m[i] = ses[i] = np.nan

    def evaluator(v: float) -> float:
        return point(v)[0]

    return ObjectiveCurve(axis=axis, grid=grid, m=m, msq=m * m, ses=ses,
                          evaluator=evaluator)


def find_zeros(curve: ObjectiveCurve, zero_tol: Optional[float] = None,
               max_iter: int = 60) -> list[RootInfo]:
    """Refine every sign change of the signed moment by bisection.

    Refinement runs until |m| < zero_tol (default 1e-4 of the median grid
    |m|) and the bracket is narrower than 1e-6 of the grid span, or
    ``max_iter`` halvings.  Returns the roots and attaches them to the
    curve.  A curve without sign changes yields an empty list.
    """
    m, grid = curve.m, curve.grid
    finite = np.isfinite(m)
    if zero_tol is None:
        scale = float(np.median(np.abs(m[finite]))) if finite.any() else 0.0
        zero_tol = 1e-4 * scale
    span = float(grid[-1] - grid[0]) if grid.size > 1 else 1.0
    width_tol = 1e-6 * span
    f = curve.evaluator
    roots: list[RootInfo] = []
    for i in range(grid.size - 1):
        if not (finite[i] and finite[i + 1]):
            continue
        if m[i] == 0.0:
            roots.append(RootInfo(location=float(grid[i]),
                                  bracket=(float(grid[i]), float(grid[i])),
                                  m_value=0.0, iterations=0, converged=True))
            continue
        if m[i] * m[i + 1] >= 0.0:
            continue
        lo, hi = float(grid[i]), float(grid[i + 1])
        if f is None:
            # no evaluator (hand-built curve): linear-interpolation root
            loc = lo - m[i] * (hi - lo) / (m[i + 1] - m[i])
            roots.append(RootInfo(location=float(loc), bracket=(lo, hi),
                                  m_value=0.0, iterations=0, converged=True))
            continue
        flo = m[i]
        mid, fmid = 0.5 * (lo + hi), np.nan
        it = 0
        while it < max_iter:
            mid = 0.5 * (lo + hi)
            try:
                fmid = f(mid)
            except DynpanError:
                # pole or failed fit inside the bracket: not a usable zero
                fmid = np.nan
                break
            it += 1
            if fmid == 0.0:
                lo = hi = mid
            elif np.sign(fmid) == np.sign(flo):
                lo, flo = mid, fmid
            else:
                hi = mid
            if (hi - lo) < width_tol and abs(fmid) < zero_tol:
                break
        converged = bool(np.isfinite(fmid) and abs(fmid) < zero_tol)
        roots.append(RootInfo(location=mid, bracket=(lo, hi),
                              m_value=float(fmid), iterations=it,
                              converged=converged))
    if finite.size and finite[-1] and m[-1] == 0.0:
        roots.append(RootInfo(location=float(grid[-1]),
                              bracket=(float(grid[-1]), float(grid[-1])),
                              m_value=0.0, iterations=0, converged=True))
    curve.zeros = roots
    return roots


def find_local_minima(curve: ObjectiveCurve) -> list[MinimumInfo]:
    """Interior grid points where m^2 dips strictly below both neighbors,
    refined by a three-point parabola.  Attached to the curve."""
    msq, grid = curve.msq, curve.grid
    out: list[MinimumInfo] = []
    for i in range(1, grid.size - 1):
        trio = msq[i - 1:i + 2]
        if not np.all(np.isfinite(trio)):
            continue
        if not (msq[i] < msq[i - 1] and msq[i] < msq[i + 1]):
            continue
        x1, x2, x3 = grid[i - 1], grid[i], grid[i + 1]
        y1, y2, y3 = trio
        num = (x2 - x1) ** 2 * (y2 - y3) - (x2 - x3) ** 2 * (y2 - y1)
        den = (x2 - x1) * (y2 - y3) - (x2 - x3) * (y2 - y1)
        loc = x2 - 0.5 * num / den if den != 0.0 else x2
        loc = float(np.clip(loc, x1, x3))
        if curve.evaluator is not None:
            try:
                value = float(curve.evaluator(loc)) ** 2
            except DynpanError:
                value = float(msq[i])
        else:  # parabola value at the vertex
            value = float(np.polyval(np.polyfit([x1, x2, x3], trio, 2), loc))
        out.append(MinimumInfo(location=loc, value=value, grid_index=i))
    curve.minima = out
    return out


@dataclass
class EstimateResult:
    """Both inversion branches plus which one the sign restriction keeps.

    On a degenerate reduced form (no usable discriminant or no detectable
    y-feedback) the branches are None and ``diagnosis`` explains why.
    """

    chosen: Optional[SolutionBranch]
    rejected: Optional[SolutionBranch]
    selection_rule: str
    reduced_form: ReducedFormParams
    provenance: str
    degenerate: bool = False
    diagnosis: str = ""


def select_by_sign(branches, sign: str) -> SolutionBranch:
    """Pick the branch whose theta carries the declared sign.

    Under a positive restriction this is the branch with the lower slope
    when the branch gap 1/theta is positive.  The two branches must carry
    opposite-sign thetas; anything else indicates a corrupted pair.
    """
    if sign not in ("theta_positive", "theta_negative"):
        raise ValidationError(
            "sign must be theta_positive or theta_negative", field="sign")
    a, b = branches
    if not (a.params.theta * b.params.theta < 0):
        raise InternalConsistencyError(
            "branch thetas do not have opposite signs")
    want_positive = sign == "theta_positive"
    return a if (a.params.theta > 0) == want_positive else b


def two_step_estimator(panel, sign: str = "theta_positive") -> EstimateResult:
    """Reduced-form IV fit, closed-form inversion, sign-restricted choice.

    When the estimated discriminant is non-positive, or the y-feedback
    coefficient pi_xy is within ``PI_XY_GUARD_SE`` standard errors of zero,
    the equal-persistence diagnosis is reported instead of an estimate.
    """
    rf, _, fit_x = fit_reduced_form(panel)
    se_pi_xy = float(fit_x.std_errors()[1])
    disc = rf.discriminant()
    if disc <= 0.0 or abs(rf.pi_xy) < PI_XY_GUARD_SE * se_pi_xy:
        reason = ("estimated discriminant is non-positive"
                  if disc <= 0.0 else
                  f"pi_xy = {rf.pi_xy:.4g} is within {PI_XY_GUARD_SE:.0f} "
                  f"standard errors ({se_pi_xy:.4g}) of zero")
        return EstimateResult(
            chosen=None, rejected=None, selection_rule="none",
            reduced_form=rf, provenance="two_step", degenerate=True,
            diagnosis=f"degenerate reduced form: {reason}; the two "
                      "persistence parameters appear equal, under which the "
                      "moment carries no slope information")
    plus, minus = invert_reduced_form(rf)
    chosen = select_by_sign((plus, minus), sign)
    rejected = minus if chosen is plus else plus
    return EstimateResult(chosen=chosen, rejected=rejected,
                          selection_rule=sign, reduced_form=rf,
                          provenance="two_step")


@dataclass
class WarmStart:
    """A starting point for local estimation under weaker assumptions."""

    point: ParamPoint
    strategy: str
    flagged: bool = False
    note: str = ""


def _predetermined_point(panel) -> ParamPoint:
    """Point estimate assuming the input is chosen one period ahead.

    With x_t admissible as an instrument the linear block is solved from
    {1, x_t} at each candidate rho and the x_{t-1} moment is driven to
    zero by bisection; among candidate roots the one with the smallest
    joint over-identification score wins.
    """
    solve = ("const", "x_lag0")
    report = ("x_lag1", "x_lag2", "y_lag2")

    def at(rho):
        return concentrate_rho(panel, rho, family="quasi_diff",
                               solve_instruments=solve,
                               report_instruments=report)

    grid = np.linspace(-0.9, 0.9, 37)
    vals = np.full(grid.size, np.nan)
    for i, rho in enumerate(grid):
        try:
            vals[i] = at(rho).moments[0]
        except DynpanError:
            pass
    candidates = []
    for i in range(grid.size - 1):
        a, b = vals[i], vals[i + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b < 0:
            lo, hi, flo = grid[i], grid[i + 1], a
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = at(mid).moments[0]
                if fm == 0.0:
                    lo = hi = mid
                    break
                if np.sign(fm) == np.sign(flo):
                    lo, flo = mid, fm
                else:
                    hi = mid
            candidates.append(0.5 * (lo + hi))
    if not candidates:
        candidates = [float(grid[np.nanargmin(np.abs(vals))])]
    best, best_score = None, np.inf
    for rho in candidates:
        cr = at(rho)
        score = float(np.sum((cr.moments / cr.moment_ses) ** 2))
        if score < best_score:
            best, best_score = cr, score
    return ParamPoint(alpha=best.coefficients["alpha"],
                      beta=best.coefficients["beta"], rho=best.rho)


def warm_start_pipeline(panel, strategy: str,
                        sign: str = "theta_positive") -> WarmStart:
    """Produce a starting ParamPoint from a more identification-robust fit.

    ``predetermined_start`` estimates as if the input were chosen one
    period ahead (extra instrument x_t); ``reduced_form_start`` runs the
    sign-restricted two-step estimator.  Either point is meant to seed a
    local search under the weaker timing assumptions; when the panel's
    generating variant does not match the strategy's assumption the result
    is still returned but flagged as possibly biased.
    """
    if strategy == "reduced_form_start":
        result = two_step_estimator(panel, sign)
        if result.degenerate:
            raise ValidationError(
                "reduced-form start unavailable: " + result.diagnosis,
                field="strategy")
        p = result.chosen.params
        return WarmStart(point=ParamPoint(p.alpha, p.beta, p.rho_omega),
                         strategy=strategy)
    if strategy == "predetermined_start":
        point = _predetermined_point(panel)
        flagged = panel.spec.variant != "predetermined"
        note = ("panel was not generated under one-period-ahead input "
                "choice; the start may be biased" if flagged else "")
        return WarmStart(point=point, strategy=strategy, flagged=flagged,
                         note=note)
    raise ValidationError(
        "strategy must be predetermined_start or reduced_form_start",
        field="strategy")


def _fmt(value) -> str:
    return repr(float(value))


def write_curve_csv(curve: ObjectiveCurve, path, rescale: float = 1.0) -> None:
    """axis_value,m,objective rows plus a trailing comment block with the
    located zeros and minima.  ``rescale`` multiplies the emitted objective
    column only; stored values are never rescaled."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("axis_value,m,objective\n")
        for g, m, q in zip(curve.grid, curve.m, curve.msq):
            fh.write(f"{_fmt(g)},{_fmt(m)},{_fmt(q * rescale)}\n")
        fh.write(f"# axis,{curve.axis}\n")
        for root in curve.zeros:
            fh.write(f"# zero,{_fmt(root.location)},m={_fmt(root.m_value)},"
                     f"converged={root.converged}\n")
        for mn in curve.minima:
            fh.write(f"# minimum,{_fmt(mn.location)},"
                     f"objective={_fmt(mn.value)}\n")


def write_estimate_csv(result: EstimateResult, path) -> None:
    """Both branches with labels; a degenerate result records its diagnosis."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("branch,selected,beta,theta,rho_omega,rho_x,alpha,pi\n")
        if not result.degenerate:
            for br, selected in ((result.chosen, 1), (result.rejected, 0)):
                p = br.params
                fh.write(f"{br.branch_sign},{selected},{_fmt(p.beta)},"
                         f"{_fmt(p.theta)},{_fmt(p.rho_omega)},"
                         f"{_fmt(p.rho_x)},{_fmt(p.alpha)},{_fmt(p.pi)}\n")
        fh.write(f"# selection_rule,{result.selection_rule}\n")
        fh.write(f"# provenance,{result.provenance}\n")
        if result.degenerate:
            fh.write(f"# degenerate,{result.diagnosis}\n")
