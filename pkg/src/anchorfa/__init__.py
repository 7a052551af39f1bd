"""Anchored discrete factor analysis: method-of-moments learning of binary
latent-variable models with noisy-or observations, guided by expert anchors."""

from .errors import (AnchorfaError, CapacityError, ConditioningError,
                     ConvergenceWarning, ValidationError)
from .evaluate import (em_refine, gibbs_posterior, heldout_latent_loglik,
                       last_tag_accuracy, last_tag_predict, posterior_exact)
from .fileio import (load_model, load_moment_set, load_structure,
                     parse_anchors, parse_dataset, save_model,
                     save_moment_set, save_structure)
from .loadings import (estimate_leak, f_blanket, f_direct, f_tree,
                       prune_failures, ranked_loadings)
from .model import (AdfaModel, AnchorMap, BinaryDataset, LatentNetwork,
                    NoisyOrLoadings, VariableSpace, exact_marginal,
                    joint_prob, quickscore_negative, random_model,
                    sample_dataset, tree_negative_prob)
from .moments import (MixingMatrix, RecoveryConfig, build_mixing,
                      empirical_anchor_moments, recover_moment_set,
                      recover_polytope, recover_simplex)
from .noise import (assemble_triplet, empirical_triplet,
                    singly_labeled_estimate, triplet_decompose)
from .pipeline import PipelineConfig, run_pipeline
from .structure import ScoredStructure, bic_score, chow_liu, exact_search
from .tables import MomentSet, SubsetMoment

__version__ = "0.1.0"

__all__ = [
    "AdfaModel", "AnchorMap", "AnchorfaError", "BinaryDataset",
    "CapacityError", "ConditioningError", "ConvergenceWarning",
    "LatentNetwork", "MixingMatrix", "MomentSet", "NoisyOrLoadings",
    "PipelineConfig", "RecoveryConfig", "ScoredStructure", "SubsetMoment",
    "ValidationError", "VariableSpace", "assemble_triplet", "bic_score",
    "build_mixing", "chow_liu", "em_refine", "empirical_anchor_moments",
    "empirical_triplet", "estimate_leak", "exact_marginal", "exact_search",
    "f_blanket", "f_direct", "f_tree", "gibbs_posterior",
    "heldout_latent_loglik", "joint_prob", "last_tag_accuracy",
    "last_tag_predict", "load_model", "load_moment_set", "load_structure",
    "parse_anchors", "parse_dataset", "posterior_exact", "prune_failures",
    "quickscore_negative", "random_model", "ranked_loadings",
    "recover_moment_set", "recover_polytope", "recover_simplex",
    "run_pipeline", "sample_dataset", "save_model", "save_moment_set",
    "save_structure", "singly_labeled_estimate", "tree_negative_prob",
]
