"""Dynamic-panel pseudo-solution toolkit.

Simulates panels whose input choice loads on a persistent unobservable,
evaluates the quasi-differenced moment conditions that such models are
estimated with, reproduces the spurious second zero those moments admit,
and implements the reduced-form inversion, sign-restriction selection, and
diagnostics that resolve it.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DegenerateReducedFormError,
    DynpanError,
    InternalConsistencyError,
    NoEndogeneityError,
    RankDeficiencyError,
    ValidationError,
)
from .model import (  # noqa: F401
    ParamPoint,
    ReducedFormParams,
    SolutionBranch,
    StructuralParams,
    forward_map,
    invert_reduced_form,
    pseudo_point,
)
