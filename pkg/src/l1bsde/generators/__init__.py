"""Generators: representation, assumption validators, penalization and regularization."""

from .catalog import SPLITS, catalog, describe, get
from .convolution import SearchConfig, SearchDomainError, inf_convolve_yz, inf_convolve_z
from .expr import ExpressionError, data_function, generator_function
from .spec import (
    CLASS_IDS,
    CrossedBarriersError,
    GeneratorSpec,
    add,
    linear_generator,
    linear_growth_constant,
    norm,
    penalize_double,
    penalize_lower,
    penalize_upper,
    shift,
    zero_generator,
)
from .validators import (
    AssumptionReport,
    MissingParameterError,
    SamplerConfig,
    check,
    check_moduli,
    check_one_sided_osgood,
    check_sublinear_z_growth,
    check_z_uniform_continuity,
    recheck,
    validate,
)

__all__ = [
    "AssumptionReport", "CLASS_IDS", "CrossedBarriersError", "ExpressionError", "GeneratorSpec",
    "MissingParameterError", "SPLITS", "SamplerConfig", "SearchConfig", "SearchDomainError", "add",
    "catalog", "check", "check_moduli", "check_one_sided_osgood", "check_sublinear_z_growth",
    "check_z_uniform_continuity", "data_function", "describe", "generator_function", "get",
    "inf_convolve_yz", "inf_convolve_z", "linear_generator", "linear_growth_constant", "norm",
    "penalize_double", "penalize_lower", "penalize_upper", "recheck", "shift", "validate",
    "zero_generator",
]
