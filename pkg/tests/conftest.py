"""Shared fixtures: the expensive 200k-observation panels are built once."""

import dataclasses

import pytest

from dynpan.model import StructuralParams
from dynpan.simulate import DgpSpec, VariantParams, draw_panel

#: Default benchmark parameters used across the test suite.
DEFAULTS = StructuralParams(beta=0.6, theta=1.0, rho_omega=0.7, rho_x=0.5,
                            alpha=1.0, pi=0.0,
                            sigma_xi=1.0, sigma_u=1.0, sigma_eta=1.0)


def make_spec(variant="benchmark", n_firms=40_000, n_periods=5, seed=0,
              ext=None, **overrides):
    s = dataclasses.replace(DEFAULTS, **overrides) if overrides else DEFAULTS
    return DgpSpec(variant=variant, structural=s, n_firms=n_firms,
                   n_periods=n_periods, seed=seed,
                   ext=ext or VariantParams())


@pytest.fixture(scope="session")
def bench200k():
    return draw_panel(make_spec())


@pytest.fixture(scope="session")
def bench200k_eta0():
    return draw_panel(make_spec(sigma_eta=0.0))


@pytest.fixture(scope="session")
def fe200k():
    return draw_panel(make_spec("fixed_effects"))


@pytest.fixture(scope="session")
def multi200k():
    return draw_panel(make_spec("multi_input"))


@pytest.fixture(scope="session")
def pred200k():
    return draw_panel(make_spec("predetermined"))


@pytest.fixture(scope="session")
def equal_rho_200k():
    return draw_panel(make_spec(rho_omega=0.5, rho_x=0.5))
