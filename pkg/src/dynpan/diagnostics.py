"""Ex-post checks that flag a pseudo-solution or an equal-persistence panel.

Each check is a pure function of its inputs and returns a
:class:`DiagnosticReport` whose verdict is driven entirely by the statistic,
its large-sample standard error, and the declared endogeneity sign.  At the
spurious parameter point the level residual y - alpha - beta*x flips the
sign of its correlation with the input, which is what the first two checks
exploit; the third tests the observable footprint of unequal persistence
(the input gains a second autoregressive lag); the last guards a whole scan
against the flat no-information case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimate import two_sls
from .identify import ObjectiveCurve
from .model import ParamPoint

#: Standard-error multiples used by the verdict rules.
SIGN_TEST_BAND = 3.0
AR_TEST_REJECT = 4.0
AR_TEST_FLAT = 2.0
FLATNESS_BAND = 3.0


@dataclass(frozen=True)
class DiagnosticReport:
    statistic: float
    standard_error: float
    verdict: str
    rule_applied: str

    def render(self) -> str:
        return (f"statistic={self.statistic:.6g} "
                f"se={self.standard_error:.6g} verdict={self.verdict} "
                f"rule: {self.rule_applied}")

    def csv_rows(self):
        return (("statistic", repr(float(self.statistic))),
                ("standard_error", repr(float(self.standard_error))),
                ("verdict", self.verdict),
                ("rule_applied", self.rule_applied))


def _sign_name(declared_theta_sign: str) -> float:
    if declared_theta_sign == "theta_positive":
        return 1.0
    if declared_theta_sign == "theta_negative":
        return -1.0
    raise ValidationError(
        "declared sign must be theta_positive or theta_negative",
        field="declared_theta_sign")


def residual_sign_test(panel, p: ParamPoint,
                       declared_theta_sign: str = "theta_positive",
                       ) -> DiagnosticReport:
    """Correlation between the input and the level residual at a candidate.

    At the truth the residual contains the persistent unobservable the
    input loads on, so the correlation carries theta's sign; at the
    pseudo-solution the residual is the negatively-loaded market factor and
    the correlation flips.  A flip of more than SIGN_TEST_BAND standard
    errors (about 1/sqrt(n)) is flagged.
    """
    want = _sign_name(declared_theta_sign)
    e = panel.y - p.alpha - p.beta * panel.x
    x = panel.x.ravel()
    e = e.ravel()
    n = x.size
    sx, se_ = x.std(), e.std()
    rule = (f"corr(x, y - alpha - beta x) should carry the declared theta "
            f"sign; flag when it contradicts by > {SIGN_TEST_BAND:.0f} se")
    if sx == 0.0 or se_ == 0.0:
        return DiagnosticReport(float("nan"), float("nan"), "inconclusive",
                                rule + " (degenerate: zero variance)")
    corr = float(np.corrcoef(x, e)[0, 1])
    stderr = 1.0 / np.sqrt(n)
    signed = corr * want
    if signed < -SIGN_TEST_BAND * stderr:
        verdict = "pseudo_suspected"
    elif signed > SIGN_TEST_BAND * stderr:
        verdict = "consistent_with_truth"
    else:
        verdict = "inconclusive"
    return DiagnosticReport(corr, stderr, verdict, rule)


def moment_inequality(panel, p: ParamPoint,
                      declared_theta_sign: str = "theta_positive",
                      ) -> DiagnosticReport:
    """One-sided check of E[x * (y - alpha - beta x)] >= 0 (for theta > 0).

    Necessary at the truth under the declared sign, violated at the
    pseudo-solution; it cannot by itself confirm a candidate.
    """
    want = _sign_name(declared_theta_sign)
    e = panel.y - p.alpha - p.beta * panel.x
    prod = (panel.x * e).ravel()
    n = prod.size
    stat = float(prod.mean())
    stderr = float(prod.std(ddof=1) / np.sqrt(n)) if prod.std() > 0 \
        else float("nan")
    rule = ("one-sided: mean(x * residual) signed by theta must not be "
            f"below -{SIGN_TEST_BAND:.0f} se")
    if not np.isfinite(stderr):
        return DiagnosticReport(stat, stderr, "inconclusive",
                                rule + " (degenerate: zero variance)")
    signed = stat * want
    if signed < -SIGN_TEST_BAND * stderr:
        verdict = "pseudo_suspected"
    elif signed > SIGN_TEST_BAND * stderr:
        verdict = "consistent_with_truth"
    else:
        verdict = "inconclusive"
    return DiagnosticReport(stat, stderr, verdict, rule)


def ar_order_test(panel) -> DiagnosticReport:
    """Second-lag coefficient of the input's autoregression.

    With unequal persistence parameters the input is a two-factor process
    whose projection needs two lags; with equal persistence it is exactly
    AR(1).  |t| > AR_TEST_REJECT supports unequal persistence, |t| <
    AR_TEST_FLAT warns that the persistences look equal, in between is
    inconclusive.
    """
    x = panel.x
    if panel.spec.n_periods < 3:
        raise ValidationError("need at least 3 periods", field="n_periods")
    x0 = x[:, 2:].ravel()
    x1 = x[:, 1:-1].ravel()
    x2 = x[:, :-2].ravel()
    n = x0.size
    X = np.column_stack([np.ones(n), x1, x2])
    fit = two_sls(x0, X, X, names=("const", "x_lag1", "x_lag2"))
    coef2 = float(fit.coefficients[2])
    se2 = float(fit.std_errors()[2])
    t = abs(coef2) / se2 if se2 > 0 else float("inf")
    rule = (f"x on (1, x_lag1, x_lag2): second-lag |t| > "
            f"{AR_TEST_REJECT:.0f} supports unequal persistence; |t| < "
            f"{AR_TEST_FLAT:.0f} warns of equal persistence")
    if t > AR_TEST_REJECT:
        verdict = "consistent_with_truth"
    elif t < AR_TEST_FLAT:
        verdict = "equal_rho_warning"
    else:
        verdict = "inconclusive"
    return DiagnosticReport(coef2, se2, verdict, rule)


def flatness_guard(curve: ObjectiveCurve) -> DiagnosticReport:
    """Largest standardized |m| over a scanned grid.

    A moment that never separates from zero by FLATNESS_BAND standard
    errors anywhere on the grid means the scan carries no slope
    information, the equal-persistence pathology.
    """
    ok = np.isfinite(curve.m) & np.isfinite(curve.ses) & (curve.ses > 0)
    rule = (f"max over grid of |m|/se(m) < {FLATNESS_BAND:.0f} means the "
            "moment is flat at zero everywhere (equal-persistence warning)")
    if not ok.any():
        return DiagnosticReport(float("nan"), float("nan"), "inconclusive",
                                rule + " (no valid grid points)")
    ratios = np.abs(curve.m[ok]) / curve.ses[ok]
    stat = float(ratios.max())
    if stat < FLATNESS_BAND:
        verdict = "equal_rho_warning"
    else:
        verdict = "consistent_with_truth"
    return DiagnosticReport(stat, 1.0, verdict, rule)


def write_diagnostic_csv(report: DiagnosticReport, path) -> None:
    """name,value rows including the rule text."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,value\n")
        for name, value in report.csv_rows():
            fh.write(f"{name},\"{value}\"\n" if "," in str(value)
                     else f"{name},{value}\n")
