"""Rough drivers, rough flows, and desk-scale homogenization experiments."""

from .domain import SpatialDomain, TimeGrid
from .driver import (DriverRegularity, RoughDriver, additivity_defect,
                     canonical_lift, chen_defect, driver_holder_norm,
                     perturb_second_level)
from .fields import SmoothVectorField, TwoTimeVectorField
from .flow import (FlowMap, SolverConfig, continuity_probe, local_step,
                   order_estimate, solve_flow)
from .quadrature import QuadratureConfig
from .randfield import (FieldRealization, KernelSpec, MixingProfile,
                        covariance_oracle, mixing_profile, synthesize)
from .toy import (PhaseFunction, ToyDriverFamily, convergence_report,
                  default_phase, limit_driver, rescaled_driver,
                  toy_first_level, toy_second_level)
from .turbulence import (HomogenizationOracles, TurbulenceConfig,
                         compute_oracles, empirical_onepoint,
                         empirical_twopoint, family_vs_sequence_check,
                         localization_stability, localized_driver,
                         localized_driver_sample, rescaled_trajectory,
                         skeleton_check, star_product)
from .besov import (BesovParams, MomentStatistic, TightnessParams,
                    besov_norm, check_tightness_exponents, davydov_check,
                    finite_difference, holder_space_norm, tightness_statistic)

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
