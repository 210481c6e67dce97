"""Structured variational approximations for discrete graphical models."""
from .model import (DirectedFamily, FactorizedModel, StructuralError, TableFactor,
                    Variable, bayesian_network, d_separated, factor_marginalize,
                    factor_product, factor_restrict)
from .exact import eliminate, exact_kl, log_evidence, log_partition, marginal
from .structure import FitResult, OptimizerOptions, Structure
from .bn import (BnApproximation, RelevanceSets, derivative_check, energy_bn,
                 evaluate_bound, fit, relevance_sets, update_family)
from .cg import (CgApproximation, derivative_check_cg, evaluate_bound_cg, fit_cg,
                 posterior_chain_graph, update_cpd_cg, update_potential)
from .io import MODEL_FORMAT_VERSION
from .hidden import (HiddenApproximation, evaluate_G, expected_R_sum, fit_hidden,
                     info_decomposition, marginal_bound, mixture_mean_field,
                     update_rho, update_theta_h)

__version__ = "0.1.0"
