"""Moment construction and instrumental-variable kernels.

Residual families
-----------------
quasi_diff    r_t = (y_t - rho y_{t-1}) - alpha (1 - rho)
                    - beta (x_t - rho x_{t-1}),              defined for t >= 2
double_diff   first difference of the quasi-difference, which removes firm
              intercepts:  (D_rho y_t - D_rho y_{t-1})
                    - beta (D_rho x_t - D_rho x_{t-1}),      defined for t >= 3
multi_input   quasi_diff with a second regressor z,          defined for t >= 2

Instruments are named columns: ``const`` or ``<series>_lag<k>`` with series
in {y, x, z} and k >= 0.  Everything is pooled across firms and usable
periods.  The timing convention throughout: the residual at period t may be
paired only with instruments dated t-1 or earlier, except that ``x_lag0``
is admissible when the input is chosen one period ahead.  ``y_lag1`` is
never used as an instrument because the residual contains the lagged
measurement error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import RankDeficiencyError, ValidationError
from .model import ParamPoint, ReducedFormParams

_SERIES = ("y", "x", "z")


def _parse_name(name: str):
    if name == "const":
        return ("const", 0)
    series, sep, lag = name.partition("_lag")
    if not sep or series not in _SERIES or not lag.isdigit():
        raise ValidationError(
            f"bad instrument name {name!r}; use 'const' or "
            "'<y|x|z>_lag<k>'", field="instruments")
    return (series, int(lag))


@dataclass(frozen=True)
class InstrumentSpec:
    """An ordered set of named instrument columns."""

    names: tuple[str, ...]

    def __post_init__(self):
        for name in self.names:
            _parse_name(name)

    @property
    def max_lag(self) -> int:
        return max((_parse_name(n)[1] for n in self.names if n != "const"),
                   default=0)

    def needs_z(self) -> bool:
        return any(_parse_name(n)[0] == "z" for n in self.names)


#: Instrument sets used by the moment families.
BENCHMARK_INSTRUMENTS = InstrumentSpec(("const", "x_lag1", "x_lag2", "y_lag2"))
FIXED_EFFECTS_INSTRUMENTS = InstrumentSpec(
    ("const", "x_lag2", "x_lag3", "y_lag3"))
PREDETERMINED_INSTRUMENTS = InstrumentSpec(
    ("const", "x_lag0", "x_lag1", "x_lag2", "y_lag2"))
CONCENTRATED_BETA_INSTRUMENTS = InstrumentSpec(("x_lag1",))
MULTI_INPUT_INSTRUMENTS = InstrumentSpec(
    ("const", "x_lag1", "z_lag1", "x_lag2", "y_lag2", "z_lag2"))

_FAMILY_DEFAULTS = {
    "quasi_diff": BENCHMARK_INSTRUMENTS,
    "double_diff": FIXED_EFFECTS_INSTRUMENTS,
    "multi_input": MULTI_INPUT_INSTRUMENTS,
}
def _series_map(panel):
    out = {"y": panel.y, "x": panel.x}
    if panel.z is not None:
        out["z"] = panel.z
    return out


def _column(series_map, name, t_min, t_len):
    """Flatten one named column over periods [t_min, t_min + t_len)."""
    kind, lag = _parse_name(name)
    if kind == "const":
        n = next(iter(series_map.values())).shape[0]
        return np.ones(n * t_len)
    if kind not in series_map:
        raise ValidationError(f"panel has no series {kind!r}",
                              field="instruments")
    arr = series_map[kind]
    lo = t_min - lag
    return arr[:, lo:lo + t_len].ravel()


def instrument_matrix(panel, spec: InstrumentSpec, t_min: int) -> np.ndarray:
    """Stacked instrument columns for residuals starting at period t_min
    (0-based)."""
    if spec.max_lag > t_min:
        raise ValidationError(
            f"instrument lag {spec.max_lag} exceeds the first usable "
            f"period {t_min}; increase n_periods", field="instruments")
    series = _series_map(panel)
    t_len = panel.spec.n_periods - t_min
    return np.column_stack(
        [_column(series, n, t_min, t_len) for n in spec.names])


@dataclass
class IvFit:
    """Just-identified IV fit with retained cross-products for diagnostics."""

    coefficients: np.ndarray
    residuals: np.ndarray
    n_obs: int
    zx: np.ndarray     # instruments' cross-product with regressors
    zz: np.ndarray     # instruments' Gram matrix
    names: tuple[str, ...] = ()

    def std_errors(self) -> np.ndarray:
        """Large-sample homoskedastic IV standard errors (diagnostic only)."""
        sigma2 = float(self.residuals @ self.residuals) / self.n_obs
        zxi = np.linalg.inv(self.zx)
        cov = sigma2 * zxi @ self.zz @ zxi.T
        return np.sqrt(np.diag(cov))


def _checked_solve(zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
    """Solve zx @ coef = zy after verifying zx is numerically full rank."""
    pivots = np.linalg.svd(zx, compute_uv=False)
    smallest = pivots[-1] if pivots.size else 0.0
    if smallest <= 1e-10 * max(pivots[0] if pivots.size else 0.0, 1.0):
        raise RankDeficiencyError(
            f"singular instrument-regressor cross-product; smallest pivot "
            f"{smallest:.3e}", smallest_pivot=smallest)
    return np.linalg.solve(zx, zy)


def two_sls(dep: np.ndarray, regressors: np.ndarray,
            instruments: np.ndarray, names: Sequence[str] = ()) -> IvFit:
    """Just-identified IV: coefficients = (Z'X)^{-1} Z'y.

    Requires as many instruments as regressors; a numerically singular Z'X
    raises :class:`RankDeficiencyError` naming the smallest pivot.
    """
    dep = np.asarray(dep, dtype=float)
    X = np.atleast_2d(np.asarray(regressors, dtype=float))
    Z = np.atleast_2d(np.asarray(instruments, dtype=float))
    if X.shape != Z.shape:
        raise ValidationError(
            f"need a just-identified system: instruments {Z.shape} vs "
            "regressors " + str(X.shape), field="instruments")
    zx = Z.T @ X
    coef = _checked_solve(zx, Z.T @ dep)
    residuals = dep - X @ coef
    return IvFit(coefficients=coef, residuals=residuals, n_obs=dep.size,
                 zx=zx, zz=Z.T @ Z, names=tuple(names))


def quasi_diff_residual(panel, p: ParamPoint) -> np.ndarray:
    """Quasi-differenced residuals, one column per period t >= 2.

    With the true parameters and no measurement error this equals the
    productivity innovation xi_t; at the pseudo-solution it equals
    -u_t / theta.
    """
    y, x = panel.y, panel.x
    return ((y[:, 1:] - p.rho * y[:, :-1]) - p.alpha * (1.0 - p.rho)
            - p.beta * (x[:, 1:] - p.rho * x[:, :-1]))


def double_diff_residual(panel, beta: float, rho: float) -> np.ndarray:
    """First difference of the quasi-difference (removes firm intercepts);
    one column per period t >= 3."""
    y, x = panel.y, panel.x
    dy = y[:, 1:] - rho * y[:, :-1]
    dx = x[:, 1:] - rho * x[:, :-1]
    return (dy[:, 1:] - dy[:, :-1]) - beta * (dx[:, 1:] - dx[:, :-1])


def multi_input_residual(panel, alpha: float, beta: float, gamma: float,
                         rho: float) -> np.ndarray:
    """Quasi-differenced residual with two endogenous regressors."""
    if panel.z is None:
        raise ValidationError("panel has no second input z",
                              field="panel")
    y, x, z = panel.y, panel.x, panel.z
    return ((y[:, 1:] - rho * y[:, :-1]) - alpha * (1.0 - rho)
            - beta * (x[:, 1:] - rho * x[:, :-1])
            - gamma * (z[:, 1:] - rho * z[:, :-1]))


def _family_residual(panel, family: str, params) -> tuple[np.ndarray, int]:
    """Residual matrix plus the 0-based period of its first column."""
    if family == "quasi_diff":
        if not isinstance(params, ParamPoint):
            params = ParamPoint(*params)
        return quasi_diff_residual(panel, params), 1
    if family == "double_diff":
        beta, rho = params
        return double_diff_residual(panel, beta, rho), 2
    if family == "multi_input":
        alpha, beta, gamma, rho = params
        return multi_input_residual(panel, alpha, beta, gamma, rho), 1
    raise ValidationError(f"unknown moment family {family!r}", field="family")


@dataclass
class MomentReport:
    """Sample moments, their quadratic-form objective, and scale info."""

    names: tuple[str, ...]
    moments: np.ndarray
    objective: float
    weighting: str
    n_obs: int
    std_errors: np.ndarray

    @property
    def t_stats(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.moments / self.std_errors


def moment_stats(Z: np.ndarray, r: np.ndarray, weighting: str = "identity"):
    """Sample moments of instrument-residual products.

    Returns (m, objective, se) with m = Z'r / n and objective = m' W m,
    where W is the identity or the inverse of the uncentered outer-product
    of the per-observation moments (invariant to rescaling columns of Z).
    """
    n = r.size
    zr = Z * r[:, None]
    m = zr.sum(axis=0) / n
    S = zr.T @ zr / n
    centered = S - np.outer(m, m)
    se = np.sqrt(np.clip(np.diag(centered), 0.0, None) / n)
    if weighting == "identity":
        objective = float(m @ m)
    else:
        try:
            objective = float(m @ np.linalg.solve(S, m))
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "moment outer-product is singular; two-step weighting "
                "unavailable") from exc
    return m, objective, se


def gmm_objective(panel, family: str, params,
                  instruments: Optional[InstrumentSpec] = None,
                  weighting: str = "identity") -> MomentReport:
    """Evaluate m = (1/n) sum z_t r_t and the objective m' W m.

    ``weighting`` is ``identity`` or ``two_step``; the two-step weight is
    the inverse of the moment outer-product at the evaluated point, which
    makes the objective invariant to rescaling instrument columns.
    """
    if weighting not in ("identity", "two_step"):
        raise ValidationError("weighting must be identity or two_step",
                              field="weighting")
    spec = instruments if instruments is not None else _FAMILY_DEFAULTS[family]
    resid, offset = _family_residual(panel, family, params)
    t_min = max(offset, spec.max_lag)
    if t_min >= panel.spec.n_periods:
        raise ValidationError(
            "not enough periods for the requested instrument lags",
            field="n_periods")
    r = resid[:, t_min - offset:].ravel()
    Z = instrument_matrix(panel, spec, t_min)
    m, objective, se = moment_stats(Z, r, weighting)
    return MomentReport(names=spec.names, moments=m, objective=objective,
                        weighting=weighting, n_obs=r.size, std_errors=se)


def fit_reduced_form(panel):
    """IV fit of y_t and x_t on (1, y_{t-1}, x_{t-1}).

    The lagged output is instrumented by its second lag because the
    projection errors contain the period t-1 measurement error; x_{t-1}
    instruments itself.  Pools all firms and periods t >= 3.  Returns
    (ReducedFormParams, y-equation fit, x-equation fit).
    """
    y, x = panel.y, panel.x
    if panel.spec.n_periods < 3:
        raise ValidationError("reduced form needs at least 3 periods",
                              field="n_periods")
    n = y.shape[0] * (y.shape[1] - 2)
    one = np.ones(n)
    y0, y1, y2 = y[:, 2:].ravel(), y[:, 1:-1].ravel(), y[:, :-2].ravel()
    x0, x1 = x[:, 2:].ravel(), x[:, 1:-1].ravel()
    R = np.column_stack([one, y1, x1])
    Z = np.column_stack([one, y2, x1])
    names = ("const", "y_lag1", "x_lag1")
    fit_y = two_sls(y0, R, Z, names=names)
    fit_x = two_sls(x0, R, Z, names=names)
    params = ReducedFormParams(
        pi_y0=fit_y.coefficients[0], pi_yy=fit_y.coefficients[1],
        pi_yx=fit_y.coefficients[2], pi_x0=fit_x.coefficients[0],
        pi_xy=fit_x.coefficients[1], pi_xx=fit_x.coefficients[2])
    return params, fit_y, fit_x


@dataclass
class ConcentratedBeta:
    """Result of concentrating (alpha, rho) out of the moment at a fixed
    candidate slope."""

    beta: float
    alpha: float
    rho: float
    moment: float
    moment_se: float
    n_obs: int


def beta_scan_evaluator(panel):
    """Callable evaluating the concentrated moment at candidate slopes.

    The panel's lagged views are materialized once, so repeated calls (a
    grid scan plus bisection refinements) avoid re-slicing 200k-element
    arrays at every point.
    """
    y, x = panel.y, panel.x
    y0, y1, y2 = y[:, 2:].ravel(), y[:, 1:-1].ravel(), y[:, :-2].ravel()
    x0, x1, x2 = x[:, 2:].ravel(), x[:, 1:-1].ravel(), x[:, :-2].ravel()
    n = y0.size

    def evaluate(beta_tilde: float) -> ConcentratedBeta:
        w0 = y0 - beta_tilde * x0
        w1 = y1 - beta_tilde * x1
        w2 = y2 - beta_tilde * x2
        s1, s2 = w1.sum(), w2.sum()
        zx = np.array([[float(n), s1], [s2, w2 @ w1]])
        zy = np.array([w0.sum(), w2 @ w0])
        c, rho = _checked_solve(zx, zy)
        r = (y0 - rho * y1) - c - beta_tilde * (x0 - rho * x1)
        prod = x1 * r
        moment = float(prod.mean())
        # sampling se of the concentrated moment: the influence function
        # carries the first-step (c, rho) estimation noise through
        # -b' A^{-1} z_i e_i with b = d m / d (c, rho)
        step1_resid = w0 - c - rho * w1
        b = np.array([x1.mean(), (x1 * w1).mean()])
        v = np.linalg.solve((zx / n).T, b)
        psi = prod - (v[0] + v[1] * w2) * step1_resid
        se = float(psi.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        alpha = c / (1.0 - rho) if abs(1.0 - rho) > 1e-12 else float("nan")
        return ConcentratedBeta(beta=beta_tilde, alpha=float(alpha),
                                rho=float(rho), moment=moment, moment_se=se,
                                n_obs=n)

    return evaluate


def concentrate_beta(panel, beta_tilde: float) -> ConcentratedBeta:
    """Concentrated single-instrument moment at a candidate slope.

    Step 1 forms w_t = y_t - beta_tilde x_t and fits
    w_t = alpha (1 - rho) + rho w_{t-1} by IV, instrumenting w_{t-1} with
    w_{t-2}.  Step 2 evaluates the quasi-differenced residual at
    (alpha_hat, beta_tilde, rho_hat) against the single instrument x_{t-1}.
    Both steps pool periods t >= 3.
    """
    return beta_scan_evaluator(panel)(beta_tilde)


@dataclass
class ConcentratedRho:
    """Linear coefficients solved at a fixed candidate persistence, plus the
    remaining over-identifying moments."""

    rho: float
    coefficients: dict
    moment_names: tuple[str, ...]
    moments: np.ndarray
    moment_ses: np.ndarray
    n_obs: int


def concentrate_rho(panel, rho_tilde: float, family: str = "quasi_diff",
                    solve_instruments: Optional[tuple] = None,
                    report_instruments: Optional[tuple] = None,
                    ) -> ConcentratedRho:
    """Solve the intercept and slopes by just-identified IV at a fixed rho,
    then report the left-over moments.

    The moment is linear in (alpha, beta[, gamma]) once rho is fixed, so a
    just-identified subset ({1, x_{t-1}} plus {z_{t-1}} with a second input)
    pins the linear block; the lag-2 instruments are then free to move away
    from zero except at the true persistence and at each market-factor
    persistence.  Pass explicit instrument-name tuples to override either
    the solving subset or the reported moments.
    """
    if family not in ("quasi_diff", "multi_input"):
        raise ValidationError(
            "rho concentration supports quasi_diff or multi_input",
            field="family")
    if family == "multi_input" and panel.z is None:
        raise ValidationError("panel has no second input z", field="panel")
    if solve_instruments is None:
        solve_instruments = ("const", "x_lag1") if family == "quasi_diff" \
            else ("const", "x_lag1", "z_lag1")
    if report_instruments is None:
        report_instruments = ("x_lag2", "y_lag2") if family == "quasi_diff" \
            else ("x_lag2", "y_lag2", "z_lag2")
    all_spec = InstrumentSpec(tuple(solve_instruments)
                              + tuple(report_instruments))
    t_min = max(1, all_spec.max_lag)
    if t_min >= panel.spec.n_periods:
        raise ValidationError(
            "not enough periods for the requested instrument lags",
            field="n_periods")
    t_len = panel.spec.n_periods - t_min
    series = _series_map(panel)

    def level_and_lag(arr):
        lev = arr[:, t_min:].ravel()
        lag = arr[:, t_min - 1:-1].ravel()
        return lev, lag

    y0, y1 = level_and_lag(panel.y)
    x0, x1 = level_and_lag(panel.x)
    n = y0.size
    dep = y0 - rho_tilde * y1
    cols = [(1.0 - rho_tilde) * np.ones(n), x0 - rho_tilde * x1]
    names = ["alpha", "beta"]
    if family == "multi_input":
        z0, z1 = level_and_lag(panel.z)
        cols.append(z0 - rho_tilde * z1)
        names.append("gamma")
    if len(solve_instruments) != len(cols):
        raise ValidationError(
            f"need {len(cols)} solving instruments, got "
            f"{len(solve_instruments)}", field="solve_instruments")
    Z = np.column_stack(
        [_column(series, nm, t_min, t_len) for nm in solve_instruments])
    X = np.column_stack(cols)
    fit = two_sls(dep, X, Z, names=tuple(names))
    r = fit.residuals
    A = fit.zx / n
    moments, ses = [], []
    for name in report_instruments:
        col = _column(series, name, t_min, t_len)
        prod = col * r
        moments.append(prod.mean())
        # influence function includes the solved linear block's noise
        b = X.T @ col / n
        v = np.linalg.solve(A.T, b)
        psi = prod - (Z @ v) * r
        ses.append(psi.std(ddof=1) / np.sqrt(n))
    return ConcentratedRho(
        rho=rho_tilde,
        coefficients=dict(zip(names, (float(v) for v in fit.coefficients))),
        moment_names=tuple(report_instruments), moments=np.array(moments),
        moment_ses=np.array(ses), n_obs=n)


def _fmt(value) -> str:
    return repr(float(value))


def write_moment_report_csv(report: MomentReport, path) -> None:
    """name,value rows; moments labeled by instrument name."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,value\n")
        for name, m in zip(report.names, report.moments):
            fh.write(f"moment[{name}],{_fmt(m)}\n")
        for name, s in zip(report.names, report.std_errors):
            fh.write(f"se[{name}],{_fmt(s)}\n")
        fh.write(f"objective,{_fmt(report.objective)}\n")
        fh.write(f"weighting,{report.weighting}\n")
        fh.write(f"n_obs,{report.n_obs}\n")


def write_iv_fit_csv(fit: IvFit, path) -> None:
    """name,value rows for coefficients and their standard errors."""
    names = fit.names or tuple(
        f"coef{i}" for i in range(len(fit.coefficients)))
    ses = fit.std_errors()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,value\n")
        for name, c in zip(names, fit.coefficients):
            fh.write(f"coef[{name}],{_fmt(c)}\n")
        for name, s in zip(names, ses):
            fh.write(f"se[{name}],{_fmt(s)}\n")
        fh.write(f"n_obs,{fit.n_obs}\n")
