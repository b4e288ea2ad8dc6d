from . import dual
from .dual import Dual
from .integrate import IntegrationError, MCResult, mc_integrate, quad_integrate_1d
from .jacobian import (
    DUAL,
    FD,
    DiffConfig,
    MapSingularityError,
    jacobian,
    relative_frobenius,
    value_and_jacobian,
)
from .linalg import RankDeficiencyError, half_logdet_gram, logdet_lu, pinv_left, signed_logdet_lu
from .report import CovReport, LogDensity
from .rng import RngStream, make_rng, rademacher

__all__ = [
    "dual",
    "Dual",
    "IntegrationError",
    "MCResult",
    "mc_integrate",
    "quad_integrate_1d",
    "DUAL",
    "FD",
    "DiffConfig",
    "MapSingularityError",
    "jacobian",
    "relative_frobenius",
    "value_and_jacobian",
    "RankDeficiencyError",
    "half_logdet_gram",
    "logdet_lu",
    "pinv_left",
    "signed_logdet_lu",
    "CovReport",
    "LogDensity",
    "RngStream",
    "make_rng",
    "rademacher",
]
