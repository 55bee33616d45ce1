"""sobext: finite metric measure spaces, Whitney covers, extension operators.

The package discretizes metric measure spaces (Z, d, mu) into weighted point
clouds and implements, exactly on the finite space, the machinery needed to
probe Sobolev extendability: ball queries and maximal operators, Whitney
coverings with Lipschitz partitions of unity, Hajlasz gradient calculus,
sharp (oscillation) functionals, the cutoff and double-partition extension
operators, and Poincare-constant estimation.
"""

__version__ = "0.1.0"

from sobext.errors import (
    SobextError,
    ConfigError,
    NumericError,
    ResolutionError,
)
from sobext.space import (
    Space,
    SubsetMask,
    Field,
    VecField,
    build_grid_space,
    ball,
    average,
    maximal,
    measure_density_constant,
    doubling_constant,
)
from sobext.domains import DomainSpec, gen_domain, gen_test_field
from sobext.whitney import (
    WhitneyCover,
    PartitionOfUnity,
    whitney_cover,
    verify_whitney,
    partition_of_unity,
)
from sobext.gradients import (
    GradientCertificate,
    SharpField,
    check_hajlasz,
    minimal_hajlasz_gradient,
    discrete_upper_gradient,
    sharp_functional,
    local_gradient_from_sharp,
    lipschitz_postcompose,
    product_rule,
)
from sobext.extension import (
    ExtensionResult,
    extend,
    extend_p1,
    extend_vector,
    local_extension_estimate,
    extension_criterion,
)
from sobext.approx import (
    TruncationLadder,
    schauder_truncate,
    energy_density_report,
    lipschitz_approximate,
    coordinatewise_density_check,
)
from sobext.poincare import (
    PIReport,
    pi_check_ball,
    estimate_pi_constants,
    qp_pi_check,
    extension_implies_pi_experiment,
    standard_battery,
)

__all__ = [
    "__version__",
    "SobextError", "ConfigError", "NumericError", "ResolutionError",
    "Space", "SubsetMask", "Field", "VecField",
    "build_grid_space", "ball", "average", "maximal",
    "measure_density_constant", "doubling_constant",
    "DomainSpec", "gen_domain", "gen_test_field",
    "WhitneyCover", "PartitionOfUnity",
    "whitney_cover", "verify_whitney", "partition_of_unity",
    "GradientCertificate", "SharpField",
    "check_hajlasz", "minimal_hajlasz_gradient", "discrete_upper_gradient",
    "sharp_functional", "local_gradient_from_sharp",
    "lipschitz_postcompose", "product_rule",
    "ExtensionResult", "extend", "extend_p1", "extend_vector",
    "local_extension_estimate", "extension_criterion",
    "TruncationLadder", "schauder_truncate", "energy_density_report",
    "lipschitz_approximate", "coordinatewise_density_check",
    "PIReport", "pi_check_ball", "estimate_pi_constants", "qp_pi_check",
    "extension_implies_pi_experiment", "standard_battery",
]
