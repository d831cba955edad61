#!/usr/bin/env python3
"""
Graph recurrent baseline: a fully connected graph network over the
entities of each step, feeding a GRU whose weight matrices are
Transformer-style feed-forward blocks.
"""

import logging

import numpy as np

from errors import UsageError
from model import ModelConfig, TrajectoryModel, featurize, forward_task_p
from nn_core import LayerNorm, Linear, Module, Tensor, concat, relu, sigmoid, tanh
from tracking_data import PlaySequence

logger = logging.getLogger(__name__)

GRU_GATES = 6


class TFFBlock(Module):
    """LN(x + W2 ReLU(W1 x + b1) + b2)."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, dtype):
        self.inner = Linear(d_model, d_ff, rng, dtype)
        self.outer = Linear(d_ff, d_model, rng, dtype)
        self.norm = LayerNorm(d_model, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x + self.outer(relu(self.inner(x))))


class TFFGRUCell(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, dtype):
        self.update_input = TFFBlock(d_model, d_ff, rng, dtype)
        self.update_hidden = TFFBlock(d_model, d_ff, rng, dtype)
        self.reset_input = TFFBlock(d_model, d_ff, rng, dtype)
        self.reset_hidden = TFFBlock(d_model, d_ff, rng, dtype)
        self.candidate_input = TFFBlock(d_model, d_ff, rng, dtype)
        self.candidate_hidden = TFFBlock(d_model, d_ff, rng, dtype)

    def forward(self, o: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(self.update_input(o) + self.update_hidden(h))
        r = sigmoid(self.reset_input(o) + self.reset_hidden(h))
        candidate = tanh(self.candidate_input(o) + self.candidate_hidden(r * h))
        return (1.0 - z) * h + z * candidate


def tff_parameter_count(d_model: int, d_ff: int) -> int:
    return 2 * d_model * d_ff + d_ff + 3 * d_model


def transformer_parameter_count(config: ModelConfig) -> int:
    d, f = config.d_model, config.d_ff
    attention = 4 * (d * d + d)
    feed_forward = 2 * d * f + f + d
    norms = 4 * d
    return config.layers * (attention + feed_forward + norms)


def paired_grnn_config(config: ModelConfig) -> ModelConfig:
    """
    A GRNN config whose eight TFF blocks hold as many parameters as the
    Transformer stack of `config`; embeddings, MLPs and head are shared.
    """
    d = config.d_model
    blocks = 2 + GRU_GATES
    d_ff = round((transformer_parameter_count(config) / blocks - 3 * d) / (2 * d + 1))
    return config.replace(grnn_d_ff=max(1, d_ff), task='P')


class GRNNModel(TrajectoryModel):
    kind = 'grnn'

    def __init__(self, config: ModelConfig):
        if config.task != 'P':
            raise UsageError(f"the graph recurrent baseline only predicts player trajectories, got task {config.task}")
        super().__init__(config)
        rng, dtype = self._rng, self.dtype
        d_ff = config.grnn_d_ff or config.d_ff
        self.edge_tff = TFFBlock(config.d_model, d_ff, rng, dtype)
        self.node_tff = TFFBlock(config.d_model, d_ff, rng, dtype)
        self.gru = TFFGRUCell(config.d_model, d_ff, rng, dtype)
        self.player_head = Linear(config.d_model, config.player_grid.label_count, rng, dtype)

    def hidden_states(self, seq: PlaySequence) -> Tensor:
        """Player hidden states [T, P, d]; step t only sees inputs up to t."""
        T, P = seq.steps, seq.n_players
        K, d = P + 1, self.config.d_model
        tokens = featurize(self, seq)
        # mean over the other K-1 entities
        neighbors = ((1.0 - np.eye(K)) / (K - 1)).astype(self.dtype)[:, :, np.newaxis]
        h = Tensor(np.zeros((K, d), dtype=self.dtype))
        states = []
        for t in range(T):
            v = tokens[t * K:(t + 1) * K]
            pairs = v.reshape(K, 1, d) + v.reshape(1, K, d)
            messages = (self.edge_tff(pairs) * neighbors).sum(axis=1)
            o = self.node_tff(messages)
            h = self.gru(o, h)
            states.append(h[:P].reshape(1, P, d))
        return concat(states, axis=0)

    def player_logits(self, seq: PlaySequence) -> Tensor:
        hidden = self.hidden_states(seq)
        return self.player_head(hidden.reshape(seq.steps * seq.n_players, self.config.d_model))


def grnn_forward(model: GRNNModel, seq: PlaySequence) -> Tensor:
    """Player trajectory distributions, [T, P, player labels]."""
    return forward_task_p(model, seq)
