"""forestcase: case-based explanations mined from random-forest
proximities.

Train a bagged CART forest that keeps its bootstrap bookkeeping, extract
the model-learned distance through three proximity definitions (original,
out-of-bag, GAP), and select prototypes, critics, semi-factuals and
counter-factuals from the training data, scored by a dual-backend
evaluation suite under a cross-validated protocol.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    Dataset,
    FoldPlan,
    encode,
    filter_classes,
    load_csv,
    load_dataset,
    save_dataset,
    stratified_folds,
    synth_three_class,
)
from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    ForestCaseError,
    MissingValueError,
    ModelMismatchError,
    ParseError,
    StageError,
)
from .explain import (  # noqa: F401
    CriticSet,
    ExplanationBundle,
    FactualPair,
    PrototypeSet,
    counter_factual,
    factual_pairs,
    hdp_prototypes,
    kmedoids_prototypes,
    nearest_prototype_predict,
    select_critics,
    semi_factual,
    witness,
    witness_values,
)
from .forest import (  # noqa: F401
    ForestParams,
    TrainedForest,
    TreeRecord,
    fit,
    grid_search,
    load_forest,
    oob_predict,
    predict,
    predict_proba,
    save_forest,
    weighted_f1,
)
from .pipeline import (  # noqa: F401
    ExperimentConfig,
    ExperimentResult,
    MDSResult,
    emit_reports,
    mds_embed,
    run_experiment,
    tune_prototype_count,
)
from .proximity import (  # noqa: F401
    DistanceMatrix,
    ProximityMatrix,
    extend_gap,
    extend_proximity,
    l2_distance,
    proximity_gap,
    proximity_oob,
    proximity_original,
    to_distance,
)
