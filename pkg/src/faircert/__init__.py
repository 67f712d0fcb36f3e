"""Certified word-substitution robustness and bias mitigation for text CNNs.

Train small text classifiers whose predictions are provably invariant to
word substitutions (interval bound propagation or randomized smoothing),
combine them with bias-mitigation methods (embedding debiasing, instance
weighting, adversarial debiasing), and evaluate equalized-odds fairness
alongside certified robust accuracy.
"""

from .autodiff import Tensor, backward, finite_diff_check
from .data import (
    Dataset,
    Example,
    SynthConfig,
    generate_synthetic,
    read_corpus,
    synthetic_neighbor_table,
    tokenize,
    write_corpus,
    write_report,
    read_report,
)
from .debias import (
    Adversary,
    GenderSubspace,
    InstanceWeightTable,
    debias_gradient,
    gender_direction,
    hard_debias,
    instance_weights,
)
from .estimator import RobustTextClassifier
from .explain import Explanation, GenderTokenReport, disagreement_set, gender_token_report, lime_explain
from .intervals import (
    IntervalTensor,
    interval_affine,
    interval_from_substitutions,
    interval_monotone,
    worst_case_loss,
)
from .lexicons import default_gender_pairs, default_gendered_lexicon, default_identity_lexicon
from .metrics import (
    GroupRates,
    MetricsReport,
    auc,
    cra,
    equality_difference,
    evaluate_model,
    group_rates,
    selection_score,
)
from .model import (
    TextCnn,
    Vocabulary,
    build_vocab,
    load_embeddings,
    load_model,
    random_embeddings,
    save_model,
    write_embeddings,
)
from .perturb import (
    SubstitutionTable,
    PerturbationSpaceError,
    augment_gender_pairs,
    build_neighbor_table,
    enumerate_perturbations,
    load_gender_pairs,
    read_neighbor_table,
    sample_perturbation,
    to_clusters,
    write_neighbor_table,
)
from .robustness import (
    CertificationResult,
    IbpLossBreakdown,
    certify_dataset,
    certify_ibp,
    ibp_loss,
    safer_certify,
    smoothed_scores_exact,
    smoothed_scores_mc,
)
from .train import TrainConfig, TrainingDiverged, ibp_schedule, safer_train_step, train

__version__ = "0.1.0"
