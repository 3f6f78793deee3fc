"""Preference-aware fair federated learning simulator.

Clients jointly train a shared communicated trunk while each keeps a
private hypernetwork that maps a (performance, fairness) preference vector
to the weights of its personalized head; the resulting preference-to-
trade-off mapping is evaluated through Pareto and hypervolume analysis.
"""

from .autodiff import DenseNetSpec, ParamVector, Tape, backward, finite_diff_gradient, forward
from .data import (
    BatchPlan,
    CsvSchema,
    FederatedPartition,
    TabularDataset,
    batches,
    generate_synthetic,
    load_csv,
    partition,
    save_csv,
    standardize,
)
from .federation import (
    BaselineResult,
    ClientState,
    PraFFLResult,
    ProtocolMonitor,
    RoundLog,
    TrainConfig,
    aggregate,
    sample_participants,
    train_fedavg_plain,
    train_praffl,
    train_weighted_sum_baseline,
)
from .models import (
    CommunicatedModel,
    Hypernetwork,
    PersonalizedModel,
    hyper_emit,
    infer_with_preference,
    init_communicated,
    init_hypernetwork,
    predict,
)
from .moo import (
    Dominance,
    ReferencePoint,
    SolutionSet,
    dominates,
    evaluate_sweep,
    hypervolume_2d,
    hypervolume_mc_oracle,
    nondominated_filter,
    sample_preference_uniform,
    sweep_grid,
)
from .objectives import (
    EPS_LAMBDA,
    IdealPoint,
    ObjectivePoint,
    PointKind,
    PreferenceVector,
    cross_entropy,
    dp_disparity_hard,
    dp_disparity_soft,
    error_rate,
    scalarizing_direction,
    tchebycheff,
    weighted_sum,
)

__version__ = "0.1.0"
