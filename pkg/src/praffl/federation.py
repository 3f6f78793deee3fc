"""The federated training loop and its baselines.

Each round: the server samples participants, every participant downloads
the global communicated trunk, trains it on cross-entropy for tau_c epochs
with its personalized head frozen at the anchor preference, then trains its
hypernetwork for tau_p epochs on the weighted-Tchebycheff loss with the
trunk frozen, averaging gradients over a fresh batch of sampled preference
vectors at every step. The server then averages the participants' trunks.

Only trunk parameters ever cross the client-server boundary; hypernetwork
parameters and sampled preferences stay client-local.

Randomness: every stream is derived from (seed, round, client id,
purpose) through a SeedSequence, so concurrency cannot perturb results and
per-client noise is independent across clients.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import moo
from .autodiff import ParamVector, Tape
from .data import BatchPlan, FederatedPartition, TabularDataset, batches
from .errors import ConfigurationError, ProtocolError, TrainingDivergedError
from .models import (
    CommunicatedModel,
    Hypernetwork,
    PersonalizedModel,
    hyper_emit,
    init_communicated,
    init_hypernetwork,
    personalized_spec,
    xavier_params,
)
from .objectives import (
    EPS_LAMBDA,
    PROB_EPS,
    ObjectivePoint,
    PointKind,
    PreferenceVector,
    cross_entropy,
    weighted_sum,
)

DEFAULT_LAMBDA_CHECK = PreferenceVector(0.5, 0.5)
ROUND_EVAL_PREFS = 11

# stream purpose tags
_TAG_PARTICIPANTS = 1
_TAG_COMM_BATCH = 2
_TAG_HYPER_BATCH = 3
_TAG_PREFS = 4
_TAG_BASELINE_BATCH = 5
_TAG_BASELINE_PREFS = 6


@dataclass(frozen=True)
class TrainConfig:
    clients: int
    rounds: int
    tau_c: int
    tau_p: int
    eta: float
    n_lambda: int
    participation: float = 1.0
    lambda_check: PreferenceVector = DEFAULT_LAMBDA_CHECK
    batch_size: int = 128
    seed: int = 0
    local_epochs: int = 30

    def __post_init__(self) -> None:
        if self.clients < 1:
            raise ConfigurationError("clients must be >= 1")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if self.tau_c < 0 or self.tau_p < 0:
            raise ConfigurationError("tau_c and tau_p must be >= 0")
        if self.tau_c + self.tau_p != self.local_epochs:
            raise ConfigurationError(
                f"tau_c + tau_p must equal local_epochs: "
                f"tau_c={self.tau_c}, tau_p={self.tau_p}, local_epochs={self.local_epochs}"
            )
        if not (0.0 < self.participation <= 1.0):
            raise ConfigurationError("participation must lie in (0, 1]")
        if self.eta < 0.0:
            raise ConfigurationError("eta must be >= 0")
        if self.n_lambda < 1:
            raise ConfigurationError("n_lambda must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class ClientState:
    id: int
    data: TabularDataset
    hypernetwork: Hypernetwork
    local_communicated: CommunicatedModel


@dataclass(frozen=True)
class RoundLog:
    round: int
    participants: list[int]
    mean_comm_loss: float
    mean_hyper_loss: float
    client_hv: list[float]
    mean_hv: float

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "participants": self.participants,
            "mean_comm_loss": self.mean_comm_loss,
            "mean_hyper_loss": self.mean_hyper_loss,
            "client_hv": self.client_hv,
            "mean_hv": self.mean_hv,
        }


@dataclass
class ProtocolMonitor:
    """Collects evidence for the protocol invariants during a run."""

    aggregate_records: list[dict] = field(default_factory=list)
    freeze_records: list[dict] = field(default_factory=list)
    epoch_records: list[dict] = field(default_factory=list)

    def record_aggregate(self, round_index: int, inputs: list[ParamVector], expected_layout) -> None:
        self.aggregate_records.append(
            {
                "round": round_index,
                "count": len(inputs),
                "layouts_ok": all(pv.layout == expected_layout for pv in inputs),
            }
        )

    def record_freeze(self, round_index: int, client_id: int, phase: str, unchanged: bool) -> None:
        self.freeze_records.append(
            {"round": round_index, "client": client_id, "phase": phase, "unchanged": unchanged}
        )

    def record_epochs(self, round_index: int, client_id: int, comm: int, hyper: int) -> None:
        self.epoch_records.append(
            {"round": round_index, "client": client_id, "comm": comm, "hyper": hyper}
        )

    @property
    def all_aggregates_ok(self) -> bool:
        return all(r["layouts_ok"] for r in self.aggregate_records)

    @property
    def all_freezes_ok(self) -> bool:
        return all(r["unchanged"] for r in self.freeze_records)


def _checksum(params: ParamVector) -> str:
    return hashlib.sha256(params.values.tobytes()).hexdigest()


def _derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, np.uint64)[0])


def _pref_stream(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, round_index, client_id, _TAG_PREFS])


def sample_participants(clients: int, participation: float, round_index: int, seed: int) -> list[int]:
    """Uniform sample without replacement of ceil(p*K) client ids, sorted."""
    size = math.ceil(participation * clients)
    rng = np.random.default_rng([seed, round_index, _TAG_PARTICIPANTS])
    chosen = rng.choice(clients, size=size, replace=False)
    return sorted(int(c) for c in chosen)


def _step(params: ParamVector, grad: ParamVector, eta: float, context: str) -> None:
    params.values -= eta * grad.values
    if not np.isfinite(params.values).all():
        raise TrainingDivergedError(f"parameters diverged {context}")


def communicated_phase(
    client: ClientState, global_params: ParamVector, cfg: TrainConfig, round_index: int
) -> tuple[ParamVector, float, int]:
    """Download the global trunk, then tau_c epochs of cross-entropy descent.

    The personalized head is frozen at the anchor preference's emission for
    the whole phase; the hypernetwork itself is untouched.
    """
    local = client.local_communicated
    local.params.values[:] = global_params.values
    if cfg.tau_c == 0:
        return local.params, 0.0, 0

    head = PersonalizedModel(
        client.hypernetwork.personalized, hyper_emit(client.hypernetwork, cfg.lambda_check)
    )
    # client-independent stream: the cross-entropy phase gains nothing from
    # per-client decorrelation, and a shared order keeps clients in
    # identical positions perfectly aligned
    plan = BatchPlan(cfg.batch_size, _derive_seed(cfg.seed, round_index, _TAG_COMM_BATCH))
    losses = []
    for epoch in range(cfg.tau_c):
        for rows in batches(client.data, plan, epoch):
            tape = Tape()
            hidden = ad.forward(local.spec, local.params, client.data.features[rows], tape)
            probs = ad.reshape(ad.forward(head.spec, head.params, hidden, tape), rows.size)
            loss = cross_entropy(probs, client.data.labels[rows])
            if not np.isfinite(float(loss)):
                raise TrainingDivergedError(
                    f"communicated loss diverged (round {round_index}, client {client.id}, epoch {epoch})"
                )
            losses.append(float(loss))
            grads = ad.backward(tape, 1.0)
            _step(
                local.params,
                grads[local.params],
                cfg.eta,
                f"(communicated phase, round {round_index}, client {client.id}, epoch {epoch})",
            )
    return local.params, float(np.mean(losses)), cfg.tau_c


def _sample_preference_batch(rng: np.random.Generator, count: int) -> np.ndarray:
    lambda1 = rng.uniform(EPS_LAMBDA, 1.0 - EPS_LAMBDA, size=count)
    return np.stack([lambda1, 1.0 - lambda1], axis=1)


def _tchebycheff_batch(l1, l2, lambdas: np.ndarray):
    """Mean Tchebycheff value over per-preference loss columns.

    ``lambdas`` holds importance weights (performance, fairness); each row
    is translated to its objective-space direction (the swapped pair, see
    objectives.scalarizing_direction) before dividing. Averaging the
    scalarized values and differentiating equals averaging the
    per-preference gradients.
    """
    term1 = ad.div(l1, lambdas[:, 1])
    term2 = ad.div(l2, lambdas[:, 0])
    return ad.reduce_mean(ad.maximum(term1, term2))


def _column_losses(probs, labels: np.ndarray, sensitive: np.ndarray):
    """Per-preference-column cross-entropy and soft disparity.

    ``probs`` is (rows x preferences). A mini-batch that happens to miss a
    sensitive group contributes a zero fairness term for that step.
    """
    count = labels.size
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    y = labels[:, None].astype(np.float64)
    log_likelihood = y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)
    ce = ad.neg(ad.div(ad.reduce_sum(log_likelihood, axis=0), float(count)))
    mask0 = (sensitive == 0).astype(np.float64)
    mask1 = (sensitive == 1).astype(np.float64)
    if mask0.sum() == 0 or mask1.sum() == 0:
        width = probs.value.shape[1] if isinstance(probs, ad.Var) else probs.shape[1]
        return ce, np.zeros(width)
    mean0 = ad.div(ad.reduce_sum(ad.mul(probs, mask0[:, None]), axis=0), float(mask0.sum()))
    mean1 = ad.div(ad.reduce_sum(ad.mul(probs, mask1[:, None]), axis=0), float(mask1.sum()))
    return ce, ad.absolute(ad.sub(mean0, mean1))


def hypernetwork_phase(
    client: ClientState, cfg: TrainConfig, round_index: int
) -> tuple[ParamVector, float, int]:
    """tau_p epochs of Tchebycheff descent on the hypernetwork only.

    The trunk is frozen at its post-communicated-phase state, so the shared
    representation is computed once for the whole phase. Every step samples
    a fresh batch of n_lambda preferences and descends on the mean
    scalarized loss, i.e. the average of the per-preference gradients.
    """
    hn = client.hypernetwork
    if hn.personalized.hidden_dims != ():
        raise ConfigurationError("hypernetwork training requires a single-affine personalized head")
    if cfg.tau_p == 0:
        return hn.params, 0.0, 0

    repr_dim = hn.personalized.input_dim
    hidden_all = ad.forward(client.local_communicated.spec, client.local_communicated.params, client.data.features)
    plan = BatchPlan(cfg.batch_size, _derive_seed(cfg.seed, round_index, client.id, _TAG_HYPER_BATCH))
    pref_rng = _pref_stream(cfg.seed, round_index, client.id)
    losses = []
    for epoch in range(cfg.tau_p):
        for rows in batches(client.data, plan, epoch):
            lambdas = _sample_preference_batch(pref_rng, cfg.n_lambda)
            tape = Tape()
            emitted = ad.forward(hn.spec, hn.params, lambdas, tape)  # (n_lambda, |head|)
            weights = emitted[:, :repr_dim]
            bias = emitted[:, repr_dim:]
            logits = ad.add(ad.matmul(hidden_all[rows], ad.transpose(weights)), ad.transpose(bias))
            probs = ad.sigmoid(logits)
            ce, disparity = _column_losses(probs, client.data.labels[rows], client.data.sensitive[rows])
            loss = _tchebycheff_batch(ce, disparity, lambdas)
            if not np.isfinite(float(loss)):
                raise TrainingDivergedError(
                    f"hypernetwork loss diverged (round {round_index}, client {client.id}, epoch {epoch})"
                )
            losses.append(float(loss))
            grads = ad.backward(tape, 1.0)
            _step(
                hn.params,
                grads[hn.params],
                cfg.eta,
                f"(hypernetwork phase, round {round_index}, client {client.id}, epoch {epoch})",
            )
    return hn.params, float(np.mean(losses)), cfg.tau_p


def aggregate(params_list: list[ParamVector]) -> ParamVector:
    """Coordinate-wise mean, summed in the order given (ascending client id)."""
    if not params_list:
        raise ProtocolError("aggregate() requires at least one parameter vector")
    layout = params_list[0].layout
    for pv in params_list[1:]:
        if pv.layout != layout:
            raise ProtocolError("aggregate() received mismatched parameter layouts")
    first = params_list[0].values
    if all(np.array_equal(pv.values, first) for pv in params_list[1:]):
        return ParamVector(layout, first.copy())  # exact fixed point on equal inputs
    total = np.zeros(layout.size)
    for pv in params_list:
        total += pv.values
    return ParamVector(layout, total / len(params_list))


def _require_both_groups(partition: FederatedPartition) -> None:
    for k, ds in enumerate(partition.clients):
        groups = set(np.unique(ds.sensitive).tolist())
        if groups != {0, 1}:
            raise ConfigurationError(
                f"client {k} is missing a sensitive group; disparity would be undefined"
            )


def _client_hv_sweep(predict_fn_for, partition: FederatedPartition, ref: moo.ReferencePoint) -> list[float]:
    prefs = moo.sweep_grid(ROUND_EVAL_PREFS)
    hvs = []
    for k, ds in enumerate(partition.clients):
        sweep = moo.sweep_with_predictor(predict_fn_for(k), ds, prefs)
        hvs.append(moo.hypervolume_2d(sweep, ref))
    return hvs


@dataclass
class PraFFLResult:
    communicated: CommunicatedModel
    hypernetworks: list[Hypernetwork]
    rounds: list[RoundLog]


def train_praffl(
    partition: FederatedPartition,
    cfg: TrainConfig,
    hv_ref: moo.ReferencePoint = moo.ReferencePoint(1.0, 1.0),
    monitor: ProtocolMonitor | None = None,
) -> PraFFLResult:
    """Run the full preference-aware training loop.

    Returns the final aggregated trunk, every client's hypernetwork, and a
    per-round log with an 11-preference hypervolume summary per client.
    """
    if partition.num_clients != cfg.clients:
        raise ConfigurationError(
            f"partition has {partition.num_clients} clients but config says {cfg.clients}"
        )
    _require_both_groups(partition)

    num_features = partition.clients[0].num_features
    global_model = init_communicated(num_features, cfg.seed)
    head = personalized_spec()
    clients = [
        ClientState(
            id=k,
            data=ds,
            hypernetwork=init_hypernetwork(head, cfg.seed),
            local_communicated=CommunicatedModel(global_model.spec, global_model.params.copy()),
        )
        for k, ds in enumerate(partition.clients)
    ]

    logs: list[RoundLog] = []
    for round_index in range(1, cfg.rounds + 1):
        participants = sample_participants(cfg.clients, cfg.participation, round_index, cfg.seed)
        comm_losses, hyper_losses = [], []
        updated: list[ParamVector] = []
        for k in participants:
            client = clients[k]
            hyper_before = _checksum(client.hypernetwork.params)
            params, comm_loss, comm_epochs = communicated_phase(
                client, global_model.params, cfg, round_index
            )
            if monitor is not None:
                monitor.record_freeze(
                    round_index, k, "communicated_phase",
                    _checksum(client.hypernetwork.params) == hyper_before,
                )
            comm_before = _checksum(params)
            _, hyper_loss, hyper_epochs = hypernetwork_phase(client, cfg, round_index)
            if monitor is not None:
                monitor.record_freeze(
                    round_index, k, "hypernetwork_phase", _checksum(params) == comm_before
                )
                monitor.record_epochs(round_index, k, comm_epochs, hyper_epochs)
            comm_losses.append(comm_loss)
            hyper_losses.append(hyper_loss)
            updated.append(params)
        if monitor is not None:
            monitor.record_aggregate(round_index, updated, global_model.spec.layout())
        global_model.params.values[:] = aggregate(updated).values

        client_hv = _client_hv_sweep(
            lambda k: (
                lambda features, pref: _predict_praffl(global_model, clients[k].hypernetwork, pref, features)
            ),
            partition,
            hv_ref,
        )
        logs.append(
            RoundLog(
                round=round_index,
                participants=participants,
                mean_comm_loss=float(np.mean(comm_losses)),
                mean_hyper_loss=float(np.mean(hyper_losses)),
                client_hv=client_hv,
                mean_hv=float(np.mean(client_hv)),
            )
        )
    return PraFFLResult(global_model, [c.hypernetwork for c in clients], logs)


def _predict_praffl(cm: CommunicatedModel, hn: Hypernetwork, pref: PreferenceVector, features) -> np.ndarray:
    from .models import infer_with_preference

    return infer_with_preference(cm, hn, pref, features)


# ---------------------------------------------------------------------------
# Baselines


@dataclass(frozen=True)
class BaselineModel:
    """A monolithic FedAvg-style model; when preference_input is set, the
    preference vector is concatenated onto the features at both training
    and inference time."""

    spec: ad.DenseNetSpec
    params: ParamVector
    preference_input: bool

    def predict(self, features: np.ndarray, pref: PreferenceVector | None = None) -> np.ndarray:
        if self.preference_input:
            if pref is None:
                raise ConfigurationError("this model requires a preference vector at inference")
            features = _concat_preference(features, pref)
        return np.asarray(ad.forward(self.spec, self.params, features)).ravel()


@dataclass
class BaselineResult:
    model: BaselineModel
    rounds: list[RoundLog]


def _concat_preference(features: np.ndarray, pref: PreferenceVector) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    tiled = np.broadcast_to(pref.as_array(), (features.shape[0], 2))
    return np.hstack([features, tiled])


def baseline_spec(num_features: int, preference_input: bool) -> ad.DenseNetSpec:
    extra = 2 if preference_input else 0
    return ad.DenseNetSpec(
        num_features + extra, (32, 32), 1, hidden_activation="tanh", output_activation="sigmoid"
    )


def _train_fedavg_family(
    partition: FederatedPartition,
    cfg: TrainConfig,
    preference_input: bool,
    lambda_fixed: PreferenceVector | None,
    fairness_term: bool,
    hv_ref: moo.ReferencePoint,
) -> BaselineResult:
    _require_both_groups(partition)
    num_features = partition.clients[0].num_features
    spec = baseline_spec(num_features, preference_input)
    rng = np.random.default_rng([cfg.seed, 0xBA5E])
    global_params = xavier_params(spec, rng)
    model = BaselineModel(spec, global_params, preference_input)
    needs_pref = preference_input or fairness_term

    logs: list[RoundLog] = []
    for round_index in range(1, cfg.rounds + 1):
        participants = sample_participants(cfg.clients, cfg.participation, round_index, cfg.seed)
        round_losses = []
        updated = []
        for k in participants:
            ds = partition.clients[k]
            local = global_params.copy()
            plan = BatchPlan(cfg.batch_size, _derive_seed(cfg.seed, round_index, k, _TAG_BASELINE_BATCH))
            pref_rng = np.random.default_rng([cfg.seed, round_index, k, _TAG_BASELINE_PREFS])
            for epoch in range(cfg.local_epochs):
                for rows in batches(ds, plan, epoch):
                    if lambda_fixed is not None:
                        pref = lambda_fixed
                    elif needs_pref:
                        pref = PreferenceVector.from_performance_weight(
                            pref_rng.uniform(EPS_LAMBDA, 1.0 - EPS_LAMBDA)
                        )
                    else:
                        pref = None
                    xb = ds.features[rows]
                    if preference_input:
                        xb = _concat_preference(xb, pref)
                    tape = Tape()
                    probs = ad.reshape(ad.forward(spec, local, xb, tape), rows.size)
                    ce = cross_entropy(probs, ds.labels[rows])
                    if fairness_term:
                        ce_v, disparity = _soft_losses(probs, ds.sensitive[rows], ce)
                        loss = weighted_sum(
                            ObjectivePoint(ce_v, disparity, PointKind.TRAIN_LOSS), pref
                        )
                    else:
                        loss = ce
                    if not np.isfinite(float(loss)):
                        raise TrainingDivergedError(
                            f"baseline loss diverged (round {round_index}, client {k}, epoch {epoch})"
                        )
                    round_losses.append(float(loss))
                    grads = ad.backward(tape, 1.0)
                    _step(local, grads[local], cfg.eta,
                          f"(baseline, round {round_index}, client {k}, epoch {epoch})")
            updated.append(local)
        global_params.values[:] = aggregate(updated).values

        client_hv = _client_hv_sweep(
            lambda k: (lambda features, pref: model.predict(features, pref if preference_input else None)),
            partition,
            hv_ref,
        )
        logs.append(
            RoundLog(
                round=round_index,
                participants=participants,
                mean_comm_loss=float(np.mean(round_losses)) if round_losses else 0.0,
                mean_hyper_loss=0.0,
                client_hv=client_hv,
                mean_hv=float(np.mean(client_hv)),
            )
        )
    return BaselineResult(model, logs)


def _soft_losses(probs, sensitive: np.ndarray, ce):
    """Batch-level soft disparity with the same empty-group fallback as the
    hypernetwork phase."""
    mask0 = (sensitive == 0).astype(np.float64)
    mask1 = (sensitive == 1).astype(np.float64)
    if mask0.sum() == 0 or mask1.sum() == 0:
        return ce, 0.0
    mean0 = ad.div(ad.reduce_sum(ad.mul(probs, mask0)), float(mask0.sum()))
    mean1 = ad.div(ad.reduce_sum(ad.mul(probs, mask1)), float(mask1.sum()))
    return ce, ad.absolute(ad.sub(mean0, mean1))


def train_weighted_sum_baseline(
    partition: FederatedPartition,
    cfg: TrainConfig,
    lambda_fixed: PreferenceVector | None = None,
    hv_ref: moo.ReferencePoint = moo.ReferencePoint(1.0, 1.0),
) -> BaselineResult:
    """Preference-concatenation weighted-sum FedAvg.

    With ``lambda_fixed`` unset, one preference is sampled per mini-batch
    (concat mode), so a single global model is asked to cover the whole
    trade-off curve through its preference input.
    """
    return _train_fedavg_family(
        partition, cfg, preference_input=True, lambda_fixed=lambda_fixed,
        fairness_term=True, hv_ref=hv_ref,
    )


def train_fedavg_plain(
    partition: FederatedPartition,
    cfg: TrainConfig,
    hv_ref: moo.ReferencePoint = moo.ReferencePoint(1.0, 1.0),
) -> BaselineResult:
    """Performance-only FedAvg reference without any preference pathway."""
    return _train_fedavg_family(
        partition, cfg, preference_input=False, lambda_fixed=None,
        fairness_term=False, hv_ref=hv_ref,
    )
