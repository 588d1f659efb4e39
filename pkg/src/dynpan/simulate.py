"""Seeded panel generation for every data-generating-process variant.

All variants share the AR(1) productivity process

    omega_t = rho_omega * omega_{t-1} + xi_t

and an output equation of the form y = alpha + beta*x (+ gamma*z) + omega
+ eta.  They differ in how the input x (and the second input z) load on
omega and on the persistent market factors kappa and wp:

    benchmark             x = pi + theta*omega + kappa,  kappa AR(1)
    fixed_effects         benchmark with firm intercepts alpha_i, pi_i
    multi_input           x, z both load on omega and on two AR(1) market
                          factors kappa (rho_x) and wp (rho_z)
    dynamic_input         x = pi + theta*omega + theta_z*z + kappa with z an
                          independent AR(1) input
    nonlinear_omega_input x = pi + theta*omega + theta2*omega^2 + kappa
    logistic_kappa        kappa persistence rises with |kappa| via a logistic
                          factor in (0.5, 1); theta2 = 0 reproduces the
                          benchmark's rho_x = 0.5
    ar2_kappa             kappa follows an AR(2) with (rho1_x, rho2_x)
    arma_x                benchmark plus an i.i.d. input shock eps
    reversed_curvature    kappa persistence falls with |kappa| (factor in
                          (0, 0.5])
    predetermined         x is chosen one period ahead:
                          x_t = pi + theta*rho_omega*omega_{t-1} + kappa_{t-1}

Randomness is a Philox (counter-based) stream per (seed, shock label); each
label is drawn exactly once as a matrix whose rows are firms, so output is
independent of any parallel schedule and the first k rows of a larger panel
equal the panel simulated with k firms.  Linear AR states start from their
exact stationary distribution; the nonlinear-kappa recursions are burned in
for ``BURN_IN`` discarded periods from zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .model import StructuralParams

#: Discarded leading periods for the nonlinear kappa recursions.
BURN_IN = 200

VARIANTS = (
    "benchmark",
    "fixed_effects",
    "multi_input",
    "dynamic_input",
    "nonlinear_omega_input",
    "logistic_kappa",
    "ar2_kappa",
    "arma_x",
    "reversed_curvature",
    "predetermined",
)

#: Stable sub-stream identifiers; the Philox key is (seed, label id).
_LABEL_IDS = {
    "xi": 1, "u": 2, "eta": 3, "eps": 4, "v": 5,
    "omega_init": 6, "kappa_init": 7, "kappa_init2": 8, "wp_init": 9,
    "z_init": 10, "fe_alpha": 11, "fe_pi": 12,
}


@dataclass(frozen=True)
class VariantParams:
    """Extension parameters; each variant reads the subset it needs."""

    theta2: float = 0.0        # quadratic input term, or logistic slope
    rho1_x: float = 0.5        # AR(2) kappa coefficients
    rho2_x: float = 0.0
    sigma_eps: float = 0.0     # scale of the i.i.d. input shock
    gamma: float = 0.3         # second-input output elasticity
    theta_omega: float = 1.0   # two-input loadings on (omega, kappa, wp)
    theta_kappa: float = 1.0
    theta_wp: float = 0.5
    delta_omega: float = 1.0
    delta_kappa: float = 0.5
    delta_wp: float = 1.0
    rho_z: float = 0.3         # persistence of wp / of the dynamic input
    sigma_v: float = 1.0       # scale of the wp (or dynamic-input) shock
    theta_z: float = 0.5       # dynamic-input loading in the x equation
    pi_z: float = 0.0          # second-input intercept
    sigma_alpha_fe: float = 1.0
    sigma_pi_fe: float = 1.0


@dataclass(frozen=True)
class DgpSpec:
    """Full description of one simulated panel."""

    variant: str
    structural: StructuralParams
    n_firms: int
    n_periods: int
    seed: int
    ext: VariantParams = field(default_factory=VariantParams)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(
                f"unknown variant {self.variant!r}; expected one of "
                f"{', '.join(VARIANTS)}", field="variant")
        if self.n_firms < 1:
            raise ValidationError("n_firms must be >= 1", field="n_firms")
        min_t = 5 if self.variant == "fixed_effects" else 4
        if self.n_periods < min_t:
            raise ValidationError(
                f"n_periods must be >= {min_t} for {self.variant}",
                field="n_periods")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must fit in 64 unsigned bits",
                                  field="seed")
        if self.variant == "ar2_kappa":
            if not (0.0 <= self.ext.rho2_x < 1.0):
                raise ValidationError("rho2_x must lie in [0, 1)",
                                      field="ext.rho2_x")
            if self.ext.rho1_x + self.ext.rho2_x >= 1.0:
                raise ValidationError(
                    "rho1_x + rho2_x must be < 1 (stationarity)",
                    field="ext.rho1_x")
        if self.variant in ("multi_input", "dynamic_input"):
            if not abs(self.ext.rho_z) < 1.0:
                raise ValidationError("|rho_z| must be < 1 (stationarity)",
                                      field="ext.rho_z")
        for name in ("sigma_eps", "sigma_v", "sigma_alpha_fe", "sigma_pi_fe"):
            if getattr(self.ext, name) < 0.0:
                raise ValidationError("scale must be >= 0",
                                      field=f"ext.{name}")


@dataclass(frozen=True)
class PanelData:
    """Simulated observables plus every latent state and shock.

    Arrays are (n_firms, n_periods) and are frozen after creation; the
    generating spec is retained so estimators can read dimensions and tests
    can reconstruct the defining equations.
    """

    spec: DgpSpec
    y: np.ndarray
    x: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    z: Optional[np.ndarray] = None
    wp: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    fe_alpha: Optional[np.ndarray] = None
    fe_pi: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("y", "x", "omega", "kappa", "xi", "u", "eta",
                     "z", "wp", "eps", "v", "fe_alpha", "fe_pi"):
            arr = getattr(self, name)
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n_obs(self) -> int:
        return self.spec.n_firms * self.spec.n_periods


def _normal(seed: int, label: str, shape, scale: float = 1.0) -> np.ndarray:
    """Standard-normal draw from the (seed, label) Philox sub-stream."""
    key = np.array([seed, _LABEL_IDS[label]], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    draw = gen.standard_normal(shape)
    return draw * scale if scale != 1.0 else draw


def stationary_ar1_init(rho: float, sigma: float,
                        draw: np.ndarray | float) -> np.ndarray | float:
    """Scale a standard-normal draw to the stationary AR(1) marginal,
    draw * sigma / sqrt(1 - rho^2)."""
    if not abs(rho) < 1.0:
        raise ValidationError("|rho| must be < 1 for a stationary start",
                              field="rho")
    return draw * (sigma / np.sqrt(1.0 - rho * rho))


def _ar1_states(seed, label_shock, label_init, rho, sigma, n, t):
    """Stationary AR(1) panel; returns (states, shocks), both (n, t)."""
    shocks = _normal(seed, label_shock, (n, t), sigma)
    states = np.empty((n, t))
    states[:, 0] = stationary_ar1_init(rho, sigma,
                                       _normal(seed, label_init, n))
    for j in range(1, t):
        states[:, j] = rho * states[:, j - 1] + shocks[:, j]
    return states, shocks


def logistic_persistence(kappa: np.ndarray, theta2: float) -> np.ndarray:
    """Persistence factor exp(theta2|k|)/(1+exp(theta2|k|)), in [0.5, 1).

    Evaluated as 1/(1+exp(-theta2|k|)) so large states cannot overflow.
    """
    return 1.0 / (1.0 + np.exp(-theta2 * np.abs(kappa)))


def reversed_persistence(kappa: np.ndarray) -> np.ndarray:
    """Persistence factor 1 - exp(|k|)/(1+exp(|k|)), in (0, 0.5]."""
    return 1.0 - 1.0 / (1.0 + np.exp(-np.abs(kappa)))


def _nonlinear_kappa(seed, factor_fn, sigma, n, t):
    """Nonlinear kappa recursion k_t = f(k_{t-1})*k_{t-1} + u_t, burned in
    for BURN_IN periods from zero; returns (states, shocks) for the last
    ``t`` periods."""
    total = BURN_IN + t
    shocks = _normal(seed, "u", (n, total), sigma)
    k = np.zeros(n)
    states = np.empty((n, t))
    for j in range(total):
        k = factor_fn(k) * k + shocks[:, j]
        if j >= BURN_IN:
            states[:, j - BURN_IN] = k
    return states, shocks[:, BURN_IN:]


def _ar2_kappa(seed, rho1, rho2, sigma, n, t):
    """Stationary AR(2) kappa panel; the first two columns are drawn from
    the exact joint stationary distribution."""
    shocks = _normal(seed, "u", (n, t), sigma)
    denom = (1.0 + rho2) * ((1.0 - rho2) ** 2 - rho1 ** 2)
    g0 = sigma ** 2 * (1.0 - rho2) / denom
    g1 = g0 * rho1 / (1.0 - rho2)
    states = np.empty((n, t))
    d0 = _normal(seed, "kappa_init", n)
    d1 = _normal(seed, "kappa_init2", n)
    states[:, 0] = np.sqrt(g0) * d0
    if g0 > 0.0:
        states[:, 1] = (g1 / g0) * states[:, 0] + np.sqrt(
            g0 - g1 * g1 / g0) * d1
    else:
        states[:, 1] = 0.0
    for j in range(2, t):
        states[:, j] = (rho1 * states[:, j - 1] + rho2 * states[:, j - 2]
                        + shocks[:, j])
    return states, shocks


def draw_panel(spec: DgpSpec) -> PanelData:
    """Simulate one panel; a pure function of the spec (seed included)."""
    spec.validate()
    s, ext = spec.structural, spec.ext
    n, t, seed = spec.n_firms, spec.n_periods, spec.seed
    eta = _normal(seed, "eta", (n, t), s.sigma_eta)

    if spec.variant == "predetermined":
        # latents carry one leading pre-sample period so x_1 is defined
        omega_all, xi_all = _ar1_states(seed, "xi", "omega_init",
                                        s.rho_omega, s.sigma_xi, n, t + 1)
        kappa_all, u_all = _ar1_states(seed, "u", "kappa_init",
                                       s.rho_x, s.sigma_u, n, t + 1)
        omega, xi = omega_all[:, 1:], xi_all[:, 1:]
        kappa, u = kappa_all[:, 1:], u_all[:, 1:]
        x = s.pi + s.theta * s.rho_omega * omega_all[:, :-1] + kappa_all[:, :-1]
        y = s.alpha + s.beta * x + omega + eta
        return PanelData(spec=spec, y=y, x=x, omega=omega, kappa=kappa,
                         xi=xi, u=u, eta=eta)

    omega, xi = _ar1_states(seed, "xi", "omega_init",
                            s.rho_omega, s.sigma_xi, n, t)

    if spec.variant == "logistic_kappa":
        kappa, u = _nonlinear_kappa(
            seed, lambda k: logistic_persistence(k, ext.theta2),
            s.sigma_u, n, t)
    elif spec.variant == "reversed_curvature":
        kappa, u = _nonlinear_kappa(seed, reversed_persistence, s.sigma_u, n, t)
    elif spec.variant == "ar2_kappa":
        kappa, u = _ar2_kappa(seed, ext.rho1_x, ext.rho2_x, s.sigma_u, n, t)
    else:
        kappa, u = _ar1_states(seed, "u", "kappa_init",
                               s.rho_x, s.sigma_u, n, t)

    if spec.variant == "multi_input":
        wp, v = _ar1_states(seed, "v", "wp_init", ext.rho_z, ext.sigma_v, n, t)
        x = (s.pi + ext.theta_omega * omega + ext.theta_kappa * kappa
             + ext.theta_wp * wp)
        z = (ext.pi_z + ext.delta_omega * omega + ext.delta_kappa * kappa
             + ext.delta_wp * wp)
        y = s.alpha + s.beta * x + ext.gamma * z + omega + eta
        return PanelData(spec=spec, y=y, x=x, z=z, omega=omega, kappa=kappa,
                         wp=wp, xi=xi, u=u, eta=eta, v=v)

    if spec.variant == "dynamic_input":
        z_dev, v = _ar1_states(seed, "v", "z_init", ext.rho_z, ext.sigma_v,
                               n, t)
        z = ext.pi_z + z_dev
        x = s.pi + s.theta * omega + ext.theta_z * z + kappa
        y = s.alpha + s.beta * x + ext.gamma * z + omega + eta
        return PanelData(spec=spec, y=y, x=x, z=z, omega=omega, kappa=kappa,
                         xi=xi, u=u, eta=eta, v=v)

    if spec.variant == "fixed_effects":
        fe_alpha = s.alpha + _normal(seed, "fe_alpha", n, ext.sigma_alpha_fe)
        fe_pi = s.pi + _normal(seed, "fe_pi", n, ext.sigma_pi_fe)
        x = fe_pi[:, None] + s.theta * omega + kappa
        y = fe_alpha[:, None] + s.beta * x + omega + eta
        return PanelData(spec=spec, y=y, x=x, omega=omega, kappa=kappa,
                         xi=xi, u=u, eta=eta, fe_alpha=fe_alpha, fe_pi=fe_pi)

    if spec.variant == "nonlinear_omega_input":
        x = s.pi + s.theta * omega + ext.theta2 * omega ** 2 + kappa
    elif spec.variant == "arma_x":
        eps = _normal(seed, "eps", (n, t), ext.sigma_eps)
        x = s.pi + s.theta * omega + kappa + eps
        y = s.alpha + s.beta * x + omega + eta
        return PanelData(spec=spec, y=y, x=x, omega=omega, kappa=kappa,
                         xi=xi, u=u, eta=eta, eps=eps)
    else:  # benchmark, logistic_kappa, ar2_kappa, reversed_curvature
        x = s.pi + s.theta * omega + kappa
    y = s.alpha + s.beta * x + omega + eta
    return PanelData(spec=spec, y=y, x=x, omega=omega, kappa=kappa,
                     xi=xi, u=u, eta=eta)


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the double."""
    return repr(float(value))


def write_panel_csv(panel: PanelData, path) -> None:
    """Write one row per (firm, period): firm,period,y,x[,z],omega,kappa,
    xi,u,eta[,eps].  UTF-8, LF line endings, full double precision."""
    cols = [("y", panel.y), ("x", panel.x)]
    if panel.z is not None:
        cols.append(("z", panel.z))
    cols += [("omega", panel.omega), ("kappa", panel.kappa),
             ("xi", panel.xi), ("u", panel.u), ("eta", panel.eta)]
    if panel.eps is not None:
        cols.append(("eps", panel.eps))
    header = "firm,period," + ",".join(name for name, _ in cols)
    n, t = panel.spec.n_firms, panel.spec.n_periods
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(n):
            for j in range(t):
                vals = ",".join(_fmt(arr[i, j]) for _, arr in cols)
                fh.write(f"{i + 1},{j + 1},{vals}\n")
