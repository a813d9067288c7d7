"""weightprov: weight-level independence testing for neural models.

Given the weights of two models, decide whether they were trained from
independent random initializations.  The package provides exact
permutation-based p-values for same-architecture pairs, a robust
activation-alignment statistic that survives output-preserving camouflage
and architecture changes, per-block localization for pruning forensics,
and the deterministic toy training machinery used to validate all of the
above statistically.
"""

from .containers import (
    ArchManifest,
    ModelBundle,
    bundle_from_arrays,
    load_model,
    read_container,
    read_manifest,
    save_model,
    write_container,
    write_manifest,
)
from .independence import (
    GeneralizedResult,
    LocalizedMatch,
    MatchOutcome,
    aggregate_blocks,
    generalized_test,
    huref_invariants,
    jsd_baseline,
    localize_blocks,
    permtest,
    phi_h_all_blocks,
    phi_h_block,
    phi_l2,
    phi_match_all_blocks,
    phi_match_block,
    phi_u_block,
)
from .matching import cosine_similarity_matrix, match_rows, solve_lap
from .model import (
    ActivationTrace,
    GluMlpParams,
    TokenBatch,
    glu_mlp_forward,
    next_token_distribution,
    random_token_batch,
    transformer_forward,
)
from .stats import (
    DISPLAY_FLOOR,
    LogPValue,
    chi2_even_log_sf,
    fisher_aggregate,
    spearman_pvalue,
    student_t_log_sf,
)
from .training import (
    AdversarySpec,
    TrainConfig,
    TrainRun,
    distill_glu_mlp,
    glu_mlp_grad,
    init_model,
    make_dependent_pair,
    make_null_pair,
    train_glu_mlp,
)
from .transforms import (
    RotationParams,
    TransformSpec,
    apply_pi_emb,
    apply_pi_mlp,
    apply_rotation,
    apply_transform_spec,
    random_orthogonal,
    random_permutation,
    random_rotation_params,
)

__version__ = "0.1.0"
