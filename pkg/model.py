#!/usr/bin/env python3
"""
baller2vec: identity embeddings and per-entity feature MLPs feeding a
Transformer that attends across agents and time under the causal
multi-entity mask, with classifier heads for player and ball trajectories.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from binning import BinGrid2D, BinGrid3D
from errors import AgentLookupError, CaptureIndexError, ConfigurationError, UsageError
from masking import build_causal_entity_mask
from nn_core import (Embedding, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, Tensor, concat,
                     init_embedding, log_softmax_array, no_grad, relu, softmax, softmax_cross_entropy,
                     take_rows)
from tracking_data import PlaySequence

logger = logging.getLogger(__name__)

TASKS = ('P', 'B', 'both')
MODEL_KINDS = ('baller2vec', 'grnn')
DTYPES = {'float32': np.float32, 'float64': np.float64}
# x, y and frontcourt for players; x, y and height for the ball
COORDINATE_FEATURES = 3


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    layers: int = 2
    embedding_dim: int = 8
    player_mlp: Tuple[int, ...] = (16, 32, 64)
    ball_mlp: Tuple[int, ...] = (16, 32, 64)
    league_size: int = 40
    task: str = 'P'
    use_identity: bool = True
    grnn_d_ff: Optional[int] = None
    dtype: str = 'float32'
    player_bins: int = 11
    player_extent: float = 11.0
    ball_bins: int = 19
    ball_extent: float = 19.0
    seed: int = 0

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigurationError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        for name in ('player_mlp', 'ball_mlp'):
            widths = tuple(getattr(self, name))
            if len(widths) != 3:
                raise ConfigurationError(f"{name} needs three widths, got {widths}")
            if widths[-1] != self.d_model:
                raise ConfigurationError(f"{name} must end at d_model={self.d_model}, got {widths[-1]}")
            object.__setattr__(self, name, widths)
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {tuple(DTYPES)}, got {self.dtype!r}")
        if min(self.layers, self.d_ff, self.embedding_dim, self.league_size) < 1:
            raise ConfigurationError("layers, d_ff, embedding_dim and league_size must be positive")
        if self.grnn_d_ff is not None and self.grnn_d_ff < 1:
            raise ConfigurationError(f"grnn_d_ff must be positive, got {self.grnn_d_ff}")
        BinGrid2D(self.player_bins, self.player_extent)
        BinGrid3D(self.ball_bins, self.ball_extent)

    @classmethod
    def full_scale(cls, task: str = 'P', **changes) -> 'ModelConfig':
        """The full-size basketball configuration."""
        values = dict(d_model=512, heads=8, d_ff=2048, layers=6, embedding_dim=20,
                      player_mlp=(128, 256, 512), ball_mlp=(128, 256, 512), league_size=450, task=task)
        values.update(changes)
        return cls(**values)

    @property
    def player_grid(self) -> BinGrid2D:
        return BinGrid2D(self.player_bins, self.player_extent)

    @property
    def ball_grid(self) -> BinGrid3D:
        return BinGrid3D(self.ball_bins, self.ball_extent)

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]

    def predicts(self, task: str) -> bool:
        return self.task in (task, 'both')

    def replace(self, **changes) -> 'ModelConfig':
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict:
        values = dataclasses.asdict(self)
        values['player_mlp'] = list(self.player_mlp)
        values['ball_mlp'] = list(self.ball_mlp)
        return values

    @classmethod
    def from_dict(cls, values: Dict) -> 'ModelConfig':
        values = dict(values)
        unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        for name in ('player_mlp', 'ball_mlp'):
            if name in values:
                values[name] = tuple(values[name])
        return cls(**values)


class EmbeddingTable(Module):
    """
    B player vectors plus one ball vector. With identity ablated, every
    player shares a single generic vector.
    """

    def __init__(self, league_size: int, dim: int, rng: np.random.Generator, dtype, use_identity: bool = True):
        self.league_size = league_size
        self.use_identity = use_identity
        if use_identity:
            self.players = Embedding(league_size, dim, rng, dtype)
        else:
            self.generic = Parameter(init_embedding(rng, 1, dim, dtype))
        self.ball = Parameter(init_embedding(rng, 1, dim, dtype))

    @property
    def count(self) -> int:
        return (self.league_size if self.use_identity else 1) + 1

    def player_vectors(self, agent_ids: np.ndarray, steps: int = 1) -> Tensor:
        """One row per (step, slot), in t-major order."""
        agent_ids = np.asarray(agent_ids, dtype=np.int64)
        if not self.use_identity:
            return take_rows(self.generic, np.zeros(steps * agent_ids.size, dtype=np.int64))
        unknown = agent_ids[(agent_ids < 0) | (agent_ids >= self.league_size)]
        if unknown.size:
            raise AgentLookupError(f"agent id {int(unknown[0])} outside league of {self.league_size}")
        return self.players(np.tile(agent_ids, steps))

    def ball_vectors(self, steps: int = 1) -> Tensor:
        return take_rows(self.ball, np.zeros(steps, dtype=np.int64))


class FeatureMLP(Module):
    """Three linear layers, ReLU after the first two."""

    def __init__(self, in_features: int, widths: Tuple[int, ...], rng: np.random.Generator, dtype):
        self.layers = []
        previous = in_features
        for width in widths:
            self.layers.append(Linear(previous, width, rng, dtype))
            previous = width

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class TransformerLayer(Module):
    """Post-norm encoder layer with no dropout."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator, dtype):
        self.attention = MultiHeadAttention(d_model, heads, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.feed_forward_in = Linear(d_model, d_ff, rng, dtype)
        self.feed_forward_out = Linear(d_ff, d_model, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)

    def forward(self, x: Tensor, mask: np.ndarray, return_weights: bool = False):
        attended, weights = self.attention(x, mask, return_weights=True)
        h = self.norm1(x + attended)
        out = self.norm2(h + self.feed_forward_out(relu(self.feed_forward_in(h))))
        return (out, weights) if return_weights else out


@dataclass
class TaskLoss:
    total: Tensor
    count: int

    @property
    def mean(self) -> float:
        return float(self.total.data) / self.count if self.count else 0.0


class TrajectoryModel(Module):
    """Shared plumbing: embeddings, feature MLPs and the predictor interface."""

    kind = 'trajectory'

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = config.numpy_dtype
        rng = np.random.default_rng(config.seed)
        self.embeddings = EmbeddingTable(config.league_size, config.embedding_dim, rng, self.dtype,
                                         config.use_identity)
        in_features = config.embedding_dim + COORDINATE_FEATURES
        self.player_mlp = FeatureMLP(in_features, config.player_mlp, rng, self.dtype)
        self.ball_mlp = FeatureMLP(in_features, config.ball_mlp, rng, self.dtype)
        self._rng = rng

    def player_logits(self, seq: PlaySequence) -> Tensor:
        raise NotImplementedError

    def ball_logits(self, seq: PlaySequence) -> Tensor:
        raise UsageError(f"{self.kind} has no ball head")

    def logits(self, seq: PlaySequence) -> Tuple[Tensor, Tensor]:
        """Player and ball logits together; subclasses share one encoder pass between the heads."""
        return self.player_logits(seq), self.ball_logits(seq)

    def log_probabilities(self, seq: PlaySequence, task: str) -> np.ndarray:
        """(T, P, L) for task P, (T, L) for task B, without recording a graph."""
        with no_grad():
            if task == 'P':
                logits = self.player_logits(seq).data.reshape(seq.steps, seq.n_players, -1)
            else:
                logits = self.ball_logits(seq).data
        return log_softmax_array(logits.astype(np.float64))

    def task_loss(self, seq: PlaySequence, task: Optional[str] = None) -> TaskLoss:
        task = task or self.config.task
        if task == 'both':
            player, ball = self.logits(seq)
            total = (softmax_cross_entropy(player, seq.player_labels.reshape(-1))
                     + softmax_cross_entropy(ball, seq.ball_labels))
            return TaskLoss(total, seq.player_labels.size + seq.ball_labels.size)
        return loss_task_p(self, seq) if task == 'P' else loss_task_b(self, seq)


def featurize(model: TrajectoryModel, seq: PlaySequence) -> Tensor:
    """Token matrix [T*K, d_model]; slot k < P is a player, slot P the ball."""
    T, P = seq.steps, seq.n_players
    d = model.config.d_model
    dtype = model.dtype
    player_features = np.concatenate(
        [seq.player_xy[:T], seq.frontcourt[:, :, np.newaxis]], axis=-1).reshape(T * P, COORDINATE_FEATURES)
    player_in = concat([model.embeddings.player_vectors(seq.agent_ids, T),
                        Tensor(player_features.astype(dtype))], axis=-1)
    ball_in = concat([model.embeddings.ball_vectors(T), Tensor(seq.ball_xyz[:T].astype(dtype))], axis=-1)
    players = model.player_mlp(player_in).reshape(T, P, d)
    ball = model.ball_mlp(ball_in).reshape(T, 1, d)
    return concat([players, ball], axis=1).reshape(T * (P + 1), d)


class Baller2VecModel(TrajectoryModel):
    kind = 'baller2vec'

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng, dtype = self._rng, self.dtype
        self.layers = [TransformerLayer(config.d_model, config.heads, config.d_ff, rng, dtype)
                       for _ in range(config.layers)]
        self.player_head = (Linear(config.d_model, config.player_grid.label_count, rng, dtype)
                            if config.predicts('P') else None)
        self.ball_head = (Linear(config.d_model, config.ball_grid.label_count, rng, dtype)
                          if config.predicts('B') else None)

    def encode(self, seq: PlaySequence, capture: bool = False):
        """Transformer outputs [T*K, d]; with capture, also each layer's attention weights."""
        tokens = featurize(self, seq)
        mask = build_causal_entity_mask(seq.steps, seq.n_players + 1).allowed
        captured = []
        for layer in self.layers:
            tokens, weights = layer(tokens, mask, return_weights=True)
            if capture:
                captured.append(weights)
        return (tokens, captured) if capture else tokens

    def _entity_rows(self, seq: PlaySequence, hidden: Tensor, ball: bool) -> Tensor:
        T, K = seq.steps, seq.n_players + 1
        grid = hidden.reshape(T, K, self.config.d_model)
        if ball:
            return grid[:, K - 1, :]
        return grid[:, :K - 1, :].reshape(T * (K - 1), self.config.d_model)

    def _player_rows(self, seq: PlaySequence, hidden: Tensor) -> Tensor:
        if self.player_head is None:
            raise UsageError(f"model was built for task {self.config.task}, not P")
        return self.player_head(self._entity_rows(seq, hidden, ball=False))

    def _ball_rows(self, seq: PlaySequence, hidden: Tensor) -> Tensor:
        if self.ball_head is None:
            raise UsageError(f"model was built for task {self.config.task}, not B")
        return self.ball_head(self._entity_rows(seq, hidden, ball=True))

    def player_logits(self, seq: PlaySequence) -> Tensor:
        return self._player_rows(seq, self.encode(seq))

    def ball_logits(self, seq: PlaySequence) -> Tensor:
        return self._ball_rows(seq, self.encode(seq))

    def logits(self, seq: PlaySequence) -> Tuple[Tensor, Tensor]:
        hidden = self.encode(seq)
        return self._player_rows(seq, hidden), self._ball_rows(seq, hidden)


def forward_task_p(model: TrajectoryModel, seq: PlaySequence) -> Tensor:
    """Player trajectory distributions, [T, P, player labels]."""
    logits = model.player_logits(seq)
    return softmax(logits).reshape(seq.steps, seq.n_players, logits.shape[-1])


def forward_task_b(model: TrajectoryModel, seq: PlaySequence) -> Tensor:
    """Ball trajectory distributions, [T, ball labels]."""
    return softmax(model.ball_logits(seq))


def loss_task_p(model: TrajectoryModel, seq: PlaySequence) -> TaskLoss:
    total = softmax_cross_entropy(model.player_logits(seq), seq.player_labels.reshape(-1))
    return TaskLoss(total, seq.player_labels.size)


def loss_task_b(model: TrajectoryModel, seq: PlaySequence) -> TaskLoss:
    total = softmax_cross_entropy(model.ball_logits(seq), seq.ball_labels)
    return TaskLoss(total, seq.ball_labels.size)


@dataclass
class AttentionCapture:
    weights: np.ndarray   # [T*K, T*K], one head of one layer
    steps: int
    entities: int
    layer: int
    head: int

    @property
    def ball_slot(self) -> int:
        return self.entities - 1

    def row(self, step: int, slot: Optional[int] = None) -> np.ndarray:
        slot = self.ball_slot if slot is None else slot
        return self.weights[step * self.entities + slot]

    def temporal_sums(self, step: int, slot: Optional[int] = None) -> np.ndarray:
        """Attention the reference token pays each entity, summed over all time steps."""
        return self.row(step, slot).reshape(self.steps, self.entities).sum(axis=0)


def attention_capture(model: Baller2VecModel, seq: PlaySequence, layer: int, head: int) -> AttentionCapture:
    config = model.config
    if not 0 <= layer < config.layers:
        raise CaptureIndexError(f"layer {layer} outside [0, {config.layers})")
    if not 0 <= head < config.heads:
        raise CaptureIndexError(f"head {head} outside [0, {config.heads})")
    with no_grad():
        _, captured = model.encode(seq, capture=True)
    return AttentionCapture(np.asarray(captured[layer][head], dtype=np.float64),
                            seq.steps, seq.n_players + 1, layer, head)


def count_parameters(model: Module) -> int:
    return sum(int(p.data.size) for p in model.parameters() if p.trainable)


def build_model(kind: str, config: ModelConfig) -> TrajectoryModel:
    if kind == 'baller2vec':
        return Baller2VecModel(config)
    if kind == 'grnn':
        from grnn import GRNNModel
        return GRNNModel(config)
    raise ConfigurationError(f"model_kind must be one of {MODEL_KINDS}, got {kind!r}")


def describe(model: TrajectoryModel) -> List[str]:
    lines = [f"{model.kind}: {count_parameters(model):,} trainable parameters"]
    for name, param in model.named_parameters():
        lines.append(f"  {name}: {param.shape}")
    return lines
