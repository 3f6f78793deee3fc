"""The split architecture: a shared communicated trunk, a per-client
personalized head, and the hypernetwork that emits the head's parameters
from a preference vector.

Default shapes keep the personalized head tiny (a single affine layer) so
the hypernetwork output stays small: trunk features -> 32 -> 32 -> 1 with
tanh, head 1 -> 1 with a sigmoid, hypernetwork 2 -> 32 -> 32 -> |head|
with relu. The one-dimensional shared representation is deliberate: it is
narrower than the raw feature space, so an untrained trunk is a real
bottleneck and the preference front can only unfold as the trunk itself
improves across communication rounds.

The hypernetwork's final layer starts at zero, so the initial head is
identically zero and every preference maps to probability 0.5; its earlier
layers start small-uniform, spreading the preference mapping's growth over
many rounds instead of saturating within the first.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DenseNetSpec, ParamVector, Tape
from .errors import ConfigurationError, DataError
from .objectives import PreferenceVector

REPR_DIM = 1
COMM_HIDDEN = (32, 32)
HYPER_HIDDEN = (32, 32)
HYPER_INIT_SPREAD = 0.05
PREF_DIM = 2


@dataclass(frozen=True)
class CommunicatedModel:
    """Feature extractor shared with the server and averaged across clients."""

    spec: DenseNetSpec
    params: ParamVector

    def __post_init__(self) -> None:
        if self.params.layout != self.spec.layout():
            raise ConfigurationError("communicated parameters do not match spec layout")


@dataclass(frozen=True)
class PersonalizedModel:
    """Per-client head mapping the shared representation to a probability."""

    spec: DenseNetSpec
    params: ParamVector

    def __post_init__(self) -> None:
        if self.spec.output_activation != "sigmoid" or self.spec.output_dim != 1:
            raise ConfigurationError("personalized head must be a 1-output sigmoid network")
        if self.params.layout != self.spec.layout():
            raise ConfigurationError("personalized parameters do not match spec layout")


@dataclass(frozen=True)
class Hypernetwork:
    """Maps a preference vector to the full flattened head parameter set."""

    spec: DenseNetSpec
    params: ParamVector
    personalized: DenseNetSpec

    def __post_init__(self) -> None:
        if self.spec.input_dim != PREF_DIM:
            raise ConfigurationError("hypernetwork input must be the 2-dim preference vector")
        if self.spec.output_dim != self.personalized.param_count():
            raise ConfigurationError(
                f"hypernetwork output dim {self.spec.output_dim} != personalized "
                f"parameter count {self.personalized.param_count()}"
            )
        if self.params.layout != self.spec.layout():
            raise ConfigurationError("hypernetwork parameters do not match spec layout")


def communicated_spec(num_features: int, repr_dim: int = REPR_DIM, hidden: tuple[int, ...] = COMM_HIDDEN) -> DenseNetSpec:
    return DenseNetSpec(num_features, hidden, repr_dim, hidden_activation="tanh")


def personalized_spec(repr_dim: int = REPR_DIM) -> DenseNetSpec:
    return DenseNetSpec(repr_dim, (), 1, output_activation="sigmoid")


def hypernetwork_spec(head: DenseNetSpec, hidden: tuple[int, ...] = HYPER_HIDDEN) -> DenseNetSpec:
    return DenseNetSpec(PREF_DIM, hidden, head.param_count(), hidden_activation="relu")


def xavier_params(spec: DenseNetSpec, rng: np.random.Generator, zero_final: bool = False) -> ParamVector:
    values = np.zeros(spec.param_count())
    layout = spec.layout()
    last = len(spec.layer_dims()) - 1
    for entry, start, stop in layout.segments():
        layer = int(entry.name[1:])
        if entry.name.startswith("b") or (zero_final and layer == last):
            continue  # biases (and optionally the final weight block) stay zero
        limit = np.sqrt(6.0 / (entry.rows + entry.cols))
        values[start:stop] = rng.uniform(-limit, limit, entry.size)
    return ParamVector(layout, values)


def small_uniform_params(spec: DenseNetSpec, rng: np.random.Generator, spread: float) -> ParamVector:
    """Small-uniform weights with a zero-initialized final layer."""
    values = np.zeros(spec.param_count())
    layout = spec.layout()
    last = len(spec.layer_dims()) - 1
    for entry, start, stop in layout.segments():
        layer = int(entry.name[1:])
        if entry.name.startswith("b") or layer == last:
            continue
        values[start:stop] = rng.uniform(-spread, spread, entry.size)
    return ParamVector(layout, values)


def init_communicated(num_features: int, seed: int) -> CommunicatedModel:
    spec = communicated_spec(num_features)
    rng = np.random.default_rng([seed, 0x5EED])
    return CommunicatedModel(spec, xavier_params(spec, rng))


def init_hypernetwork(head: DenseNetSpec, seed: int) -> Hypernetwork:
    """Zero final layer (head starts identically zero, predictions 0.5 for
    every preference), small uniform earlier layers."""
    spec = hypernetwork_spec(head)
    rng = np.random.default_rng([seed, 0xBE7A])
    return Hypernetwork(spec, small_uniform_params(spec, rng, HYPER_INIT_SPREAD), head)


def hyper_emit(hn: Hypernetwork, pref: PreferenceVector, tape: Tape | None = None):
    """Emit head parameters for one preference vector.

    Untaped, returns a ParamVector in the head's layout; with a tape, a
    flat Var through which gradients reach the hypernetwork parameters.
    """
    batch = pref.as_array().reshape(1, PREF_DIM)
    out = ad.forward(hn.spec, hn.params, batch, tape)
    flat = ad.reshape(out, hn.personalized.param_count())
    if tape is None:
        return ParamVector(hn.personalized.layout(), flat)
    return flat


def predict(cm: CommunicatedModel, pm: PersonalizedModel, batch) -> np.ndarray:
    """Pure composed inference: head(trunk(batch)) as probabilities."""
    if cm.spec.output_dim != pm.spec.input_dim:
        raise ConfigurationError("trunk output dim does not match head input dim")
    hidden = ad.forward(cm.spec, cm.params, batch)
    return np.asarray(ad.forward(pm.spec, pm.params, hidden)).ravel()


def infer_with_preference(cm: CommunicatedModel, hn: Hypernetwork, pref: PreferenceVector, batch) -> np.ndarray:
    """Emit the head for a preference, then predict. Pure: no parameter mutation."""
    head_params = hyper_emit(hn, pref)
    return predict(cm, PersonalizedModel(hn.personalized, head_params), batch)


# ---------------------------------------------------------------------------
# Checkpoints: named sections, each a serialized ParamVector.

_COMM_SECTION = b"communicated\n"
_HYPER_SECTION = b"hypernetwork\n"


def save_checkpoint(path, communicated: ParamVector, hypernetwork: ParamVector | None = None) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_COMM_SECTION)
        ad.write_param_vector(fh, communicated)
        if hypernetwork is not None:
            fh.write(_HYPER_SECTION)
            ad.write_param_vector(fh, hypernetwork)


def load_checkpoint(path) -> tuple[ParamVector, ParamVector | None]:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.readline() != _COMM_SECTION:
            raise DataError(f"{path}: expected a communicated-parameters section")
        communicated = ad.read_param_vector(fh)
        marker = fh.readline()
        if not marker:
            return communicated, None
        if marker != _HYPER_SECTION:
            raise DataError(f"{path}: unexpected section {marker!r}")
        return communicated, ad.read_param_vector(fh)
