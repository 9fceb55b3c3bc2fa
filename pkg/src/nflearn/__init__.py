"""Network function learning from sampled graphs."""
from .graph import (GraphError, InfluenceMatrix, ValuedGraph, degrees, influence_matrix,
                    neighbors, norm_check, tau_neighborhood)
from .functions import (MuField, Theta, c_values, cnf_mu, contextual_features, rnf_mu_exact,
                        rnf_mu_tau)
from .estimation import (EstimateReport, SampleTerms, VarianceSpec, grid_search, profile_beta,
                         sandwich_variance, score_cnf, score_derivative, score_rnf,
                         tilde_quantities, wls_solve)
from .snowball import (SRSWOR, Bernoulli, QTau, SampleGraph, eligibility_flags, f_in_sample,
                       inclusion_prob, joint_inclusion_prob, run_tsbs, sbs_weights)
from .trw import WalkConfig, WalkTrace, replicate_estimate, run_trw, transition_probs, trw_weights

__all__ = [
    "GraphError",
    "InfluenceMatrix",
    "ValuedGraph",
    "degrees",
    "influence_matrix",
    "neighbors",
    "norm_check",
    "tau_neighborhood",
    "MuField",
    "Theta",
    "c_values",
    "cnf_mu",
    "contextual_features",
    "rnf_mu_exact",
    "rnf_mu_tau",
    "EstimateReport",
    "SampleTerms",
    "VarianceSpec",
    "grid_search",
    "profile_beta",
    "sandwich_variance",
    "score_cnf",
    "score_derivative",
    "score_rnf",
    "tilde_quantities",
    "wls_solve",
    "SRSWOR",
    "Bernoulli",
    "QTau",
    "SampleGraph",
    "eligibility_flags",
    "f_in_sample",
    "inclusion_prob",
    "joint_inclusion_prob",
    "run_tsbs",
    "sbs_weights",
    "WalkConfig",
    "WalkTrace",
    "replicate_estimate",
    "run_trw",
    "transition_probs",
    "trw_weights",
]

__version__ = "0.1.0"
