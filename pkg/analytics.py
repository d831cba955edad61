#!/usr/bin/env python3
"""
Model analytics: identity embeddings and their neighbourhoods, attention
through time, and predicted trajectory distributions, exported as CSV
"""

import csv
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from errors import AgentLookupError, UnsupportedModeError, UsageError
from model import AttentionCapture, TrajectoryModel, attention_capture, forward_task_p
from nn_core import no_grad
from tracking_data import PlaySequence

logger = logging.getLogger(__name__)


class ModelAnalytics:
    def __init__(self, model: TrajectoryModel):
        self.model = model

    def embedding_matrix(self) -> np.ndarray:
        """Player identity embeddings, one row per agent id"""
        table = self.model.embeddings
        if not table.use_identity:
            raise UnsupportedModeError("model was trained without player identity; it has no per-agent embeddings")
        return np.asarray(table.players.table.data, dtype=np.float64)

    def export_embeddings(self, path: str) -> int:
        vectors = self.embedding_matrix()
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['agent_id'] + [f"dim_{i}" for i in range(vectors.shape[1])])
            for agent_id, row in enumerate(vectors):
                writer.writerow([agent_id] + [repr(float(v)) for v in row])
        logger.info(f"Exported {len(vectors)} embeddings to {path}")
        return len(vectors)

    def nearest_neighbors(self, agent_id: int, k: Optional[int] = None) -> List[Tuple[int, int, float]]:
        """(rank, agent_id, distance) by Euclidean distance, the query itself excluded"""
        vectors = self.embedding_matrix()
        if not 0 <= agent_id < len(vectors):
            raise AgentLookupError(f"agent id {agent_id} outside league of {len(vectors)}")
        distances = np.linalg.norm(vectors - vectors[agent_id], axis=1)
        order = [i for i in np.argsort(distances, kind='stable') if i != agent_id]
        if k is not None:
            order = order[:k]
        return [(rank, int(i), float(distances[i])) for rank, i in enumerate(order, start=1)]

    def export_neighbors(self, agent_id: int, k: Optional[int], path: str) -> int:
        neighbors = self.nearest_neighbors(agent_id, k)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['rank', 'agent_id', 'distance'])
            for rank, neighbor, distance in neighbors:
                writer.writerow([rank, neighbor, repr(distance)])
        return len(neighbors)

    def neighbor_agreement(self, group_of: Callable[[int], int]) -> float:
        """Fraction of agents whose nearest neighbour belongs to the same group"""
        vectors = self.embedding_matrix()
        hits = 0
        for agent_id in range(len(vectors)):
            _, neighbor, _ = self.nearest_neighbors(agent_id, 1)[0]
            hits += group_of(agent_id) == group_of(neighbor)
        return hits / len(vectors)

    def capture_attention(self, seq: PlaySequence, layer: int, head: int) -> AttentionCapture:
        if self.model.kind != 'baller2vec':
            raise UnsupportedModeError(f"{self.model.kind} models have no attention weights")
        return attention_capture(self.model, seq, layer, head)

    def export_attention(self, seq: PlaySequence, layer: int, head: int, ref_step: int, path: str,
                         matrix_path: Optional[str] = None) -> np.ndarray:
        """Per-slot temporal sums for the ball token at ref_step; the ball is the last slot"""
        if not 0 <= ref_step < seq.steps:
            raise UsageError(f"reference step {ref_step} outside [0, {seq.steps})")
        capture = self.capture_attention(seq, layer, head)
        sums = capture.temporal_sums(ref_step)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['agent_slot', 'temporal_sum'])
            for slot, value in enumerate(sums):
                writer.writerow([slot, repr(float(value))])
        if matrix_path:
            np.savetxt(matrix_path, capture.weights, delimiter=',', fmt='%.9g')
        logger.info(f"Ball attention at step {ref_step} (layer {layer}, head {head}): "
                    f"ball self-sum {sums[-1]:.3f}")
        return sums

    def trajectory_distribution(self, seq: PlaySequence, step: int, slot: int) -> np.ndarray:
        """Predicted distribution over player trajectory bins for one player at one step"""
        if slot == seq.n_players:
            raise UnsupportedModeError("the ball slot has no player trajectory distribution")
        if not 0 <= slot < seq.n_players:
            raise UsageError(f"agent slot {slot} outside [0, {seq.n_players})")
        if not 0 <= step < seq.steps:
            raise UsageError(f"step {step} outside [0, {seq.steps})")
        if not self.model.config.predicts('P'):
            raise UnsupportedModeError(f"model predicts task {self.model.config.task}, not P")
        with no_grad():
            probabilities = forward_task_p(self.model, seq).data
        return np.asarray(probabilities[step, slot], dtype=np.float64)

    def export_trajectory_distribution(self, seq: PlaySequence, step: int, slot: int, path: str) -> np.ndarray:
        probabilities = self.trajectory_distribution(seq, step, slot)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['bin_label', 'probability'])
            for label, p in enumerate(probabilities):
                writer.writerow([label, repr(float(p))])
        return probabilities
