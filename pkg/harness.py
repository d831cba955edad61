#!/usr/bin/env python3
"""
Training and evaluation harness: the Adam training loop with plateau
learning-rate drop and early stopping, NLL and perplexity metrics,
baseline predictors, and the ablation and speed protocols.
"""

import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from checkpoint import restore_parameters, save_checkpoint, snapshot_parameters
from errors import ConfigurationError, NumericError, UsageError
from grnn import paired_grnn_config
from model import ModelConfig, TrajectoryModel, build_model, count_parameters
from nn_core import Adam
from tracking_data import (GameRecord, PlaySequence, expand_single_player, sample_training_sequence,
                           select_players, truncate, with_agent_ids)

logger = logging.getLogger(__name__)

METRICS_HEADER = ['epoch', 'train_nll', 'val_nll', 'val_pp', 'lr', 'seconds']
ABLATION_HEADER = ['arm', 'task', 'nll', 'pp']
TIME_MATCHED_HEADER = ['model', 'budget_fraction', 'nll', 'seconds_per_epoch']


@dataclass
class TrainConfig:
    samples_per_epoch: int = 20000
    max_epochs: int = 1000
    max_seconds: Optional[float] = None
    learning_rate: float = 1e-6
    reduced_learning_rate: float = 1e-7
    patience: int = 20
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9
    seed: int = 0
    sequence_steps: int = 20
    rotate_probability: float = 0.5
    # Train on this many randomly chosen players of each sequence
    player_slots: Optional[int] = None

    def __post_init__(self):
        for name in ('samples_per_epoch', 'max_epochs', 'patience', 'batch_size', 'sequence_steps'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.reduced_learning_rate < self.learning_rate:
            raise ConfigurationError("need 0 < reduced_learning_rate < learning_rate")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ConfigurationError("max_seconds must be positive when set")
        if not 0.0 <= self.rotate_probability <= 1.0:
            raise ConfigurationError("rotate_probability must be a probability")
        if self.player_slots is not None and self.player_slots < 1:
            raise ConfigurationError("player_slots must be positive when set")

    def replace(self, **changes) -> 'TrainConfig':
        return dataclasses.replace(self, **changes)


@dataclass
class Metrics:
    mean_nll: float
    perplexity: float
    sequence_count: int
    prediction_count: int
    total_nll: float
    seconds: float = 0.0

    @classmethod
    def from_nlls(cls, nlls: Sequence[float], sequence_count: int, seconds: float = 0.0) -> 'Metrics':
        total = math.fsum(nlls)
        mean = total / len(nlls)
        return cls(mean, math.exp(mean), sequence_count, len(nlls), total, seconds)


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    val_nll: float
    val_pp: float
    lr: float
    seconds: float

    def row(self) -> List:
        return [self.epoch, repr(self.train_nll), repr(self.val_nll), repr(self.val_pp), repr(self.lr),
                f"{self.seconds:.3f}"]


def write_metrics_csv(history: Sequence[EpochLog], path: str):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for log in history:
            writer.writerow(log.row())


class PlateauSchedule:
    """
    Tracks validation NLL. After `patience` consecutive epochs without
    improvement the learning rate drops once; another `patience` flat epochs
    after that stop training.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0
        self.reduced = False

    def observe(self, val_nll: float) -> str:
        if val_nll < self.best:
            self.best = val_nll
            self.bad_epochs = 0
            return 'improved'
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return 'plateau'
        self.bad_epochs = 0
        if not self.reduced:
            self.reduced = True
            return 'reduce'
        return 'stop'


@dataclass
class TrainResult:
    history: List[EpochLog]
    best_epoch: int
    best_val_nll: float
    stopped: str
    checkpoint_path: Optional[str] = None

    @property
    def seconds_per_epoch(self) -> float:
        return float(np.mean([log.seconds for log in self.history])) if self.history else 0.0


class Trainer:
    def __init__(self, model: TrajectoryModel, train_games: Sequence[GameRecord],
                 val_sequences: Sequence[PlaySequence], config: TrainConfig,
                 checkpoint_path: Optional[str] = None, metrics_path: Optional[str] = None,
                 registry=None, run_id: Optional[int] = None):
        self.model = model
        self.train_games = list(train_games)
        self.val_sequences = list(val_sequences)
        self.config = config
        self.checkpoint_path = checkpoint_path
        self.metrics_path = metrics_path
        self.registry = registry
        self.run_id = run_id
        self.rng = np.random.default_rng(config.seed)
        self.optimizer = Adam(model.parameters(), lr=config.learning_rate, beta1=config.beta1,
                              beta2=config.beta2, epsilon=config.epsilon)
        self.steps_taken = 0
        self.task = model.config.task

    def sample(self) -> PlaySequence:
        cfg = self.config
        seq = sample_training_sequence(self.train_games, self.rng, steps=cfg.sequence_steps,
                                       rotate_probability=cfg.rotate_probability,
                                       player_grid=self.model.config.player_grid,
                                       ball_grid=self.model.config.ball_grid)
        if cfg.player_slots is not None and cfg.player_slots < seq.n_players:
            slots = np.sort(self.rng.choice(seq.n_players, size=cfg.player_slots, replace=False))
            seq = select_players(seq, slots)
        return seq

    def train_step(self, batch: Sequence[PlaySequence]) -> float:
        """One optimizer update on the mean per-prediction NLL of the batch."""
        self.optimizer.zero_grad()
        losses = [self.model.task_loss(seq, self.task) for seq in batch]
        count = sum(loss.count for loss in losses)
        total = 0.0
        for seq, loss in zip(batch, losses):
            value = float(loss.total.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at step {self.steps_taken + 1} on sequence {seq.describe()}")
            total += value
            (loss.total * (1.0 / count)).backward()
        self.optimizer.step()
        self.steps_taken += 1
        logger.debug(f"step {self.steps_taken}: nll {total / count:.4f}")
        return total / count

    def train_epoch(self, sequences: Optional[Sequence[PlaySequence]] = None,
                    deadline: Optional[float] = None) -> float:
        """Mean training NLL over one epoch of freshly sampled (or given) sequences."""
        cfg = self.config
        if sequences is None:
            sequences = [self.sample() for _ in range(cfg.samples_per_epoch)]
        step_means, step_counts = [], []
        for start in range(0, len(sequences), cfg.batch_size):
            batch = sequences[start:start + cfg.batch_size]
            step_means.append(self.train_step(batch))
            step_counts.append(len(batch))
            if deadline is not None and time.perf_counter() >= deadline:
                break
        return float(np.average(step_means, weights=step_counts))

    def validate(self) -> Metrics:
        return evaluate(self.model, self.val_sequences, self.task)

    def train(self) -> TrainResult:
        cfg = self.config
        schedule = PlateauSchedule(cfg.patience)
        history: List[EpochLog] = []
        best_epoch, best_snapshot = 0, None
        started = time.perf_counter()
        deadline = started + cfg.max_seconds if cfg.max_seconds else None
        stopped = 'max_epochs'

        for epoch in range(1, cfg.max_epochs + 1):
            epoch_start = time.perf_counter()
            train_nll = self.train_epoch(deadline=deadline)
            seconds = time.perf_counter() - epoch_start
            val = self.validate()
            if not math.isfinite(val.mean_nll):
                raise NumericError(f"non-finite validation NLL after epoch {epoch}")
            log = EpochLog(epoch, train_nll, val.mean_nll, val.perplexity, self.optimizer.lr, seconds)
            history.append(log)
            logger.info(f"Epoch {epoch}: train NLL {train_nll:.4f}, val NLL {val.mean_nll:.4f}, "
                        f"val PP {val.perplexity:.3f}, lr {self.optimizer.lr:.1e}, {seconds:.1f}s")
            if self.registry is not None and self.run_id is not None:
                self.registry.log_epoch(self.run_id, log)
            if self.metrics_path:
                write_metrics_csv(history, self.metrics_path)

            decision = schedule.observe(val.mean_nll)
            if decision == 'improved':
                best_epoch, best_snapshot = epoch, snapshot_parameters(self.model)
                if self.checkpoint_path:
                    save_checkpoint(self.model, self.checkpoint_path,
                                    {'epoch': epoch, 'val_nll': val.mean_nll, 'seed': cfg.seed})
            elif decision == 'reduce':
                self.optimizer.lr = cfg.reduced_learning_rate
                logger.info(f"Validation NLL flat for {cfg.patience} epochs, learning rate now "
                            f"{cfg.reduced_learning_rate:.1e}")
            elif decision == 'stop':
                stopped = 'early_stopping'
                logger.info(f"Early stopping after epoch {epoch}")
                break
            if deadline is not None and time.perf_counter() >= deadline:
                stopped = 'time_budget'
                break

        if best_snapshot is not None:
            restore_parameters(self.model, best_snapshot)
        best_val = history[best_epoch - 1].val_nll if best_epoch else math.inf
        return TrainResult(history, best_epoch, best_val, stopped, self.checkpoint_path)

    def overfit_single_batch(self, batch: Sequence[PlaySequence], steps: int = 2000,
                             target_nll: float = 0.05) -> List[float]:
        """Repeated updates on one fixed batch; stops once the NLL falls below target."""
        losses = []
        for _ in range(steps):
            losses.append(self.train_step(batch))
            if losses[-1] < target_nll:
                break
        return losses


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _sequence_nlls(predictor, seq: PlaySequence, task: str) -> np.ndarray:
    log_probabilities = predictor.log_probabilities(seq, task)
    if task == 'P':
        T, P = seq.player_labels.shape
        picked = log_probabilities[np.arange(T)[:, None], np.arange(P)[None, :], seq.player_labels]
    else:
        picked = log_probabilities[np.arange(seq.steps), seq.ball_labels]
    return -picked.reshape(-1)


def evaluate(predictor, sequences: Sequence[PlaySequence], task: str = 'P') -> Metrics:
    """Mean NLL over every (sequence, step, entity) prediction and its perplexity."""
    if not sequences:
        raise UsageError("cannot evaluate on an empty set of sequences")
    started = time.perf_counter()
    tasks = ('P', 'B') if task == 'both' else (task,)
    nlls = []
    for seq in sequences:
        for t in tasks:
            nlls.extend(_sequence_nlls(predictor, seq, t).tolist())
    return Metrics.from_nlls(nlls, len(sequences), time.perf_counter() - started)


class UniformPredictor:
    def __init__(self, player_labels: int = 121, ball_labels: int = 6859):
        self.label_counts = {'P': player_labels, 'B': ball_labels}

    def log_probabilities(self, seq: PlaySequence, task: str) -> np.ndarray:
        L = self.label_counts[task]
        shape = (seq.steps, seq.n_players, L) if task == 'P' else (seq.steps, L)
        return np.full(shape, -math.log(L))


class MarginalBaseline:
    """A constant prediction: the label distribution of the training set."""

    def __init__(self, probabilities: np.ndarray, task: str = 'P'):
        probabilities = np.asarray(probabilities, dtype=np.float64)
        if probabilities.ndim != 1 or not np.isclose(probabilities.sum(), 1.0) or np.any(probabilities < 0):
            raise UsageError("marginal baseline needs a probability vector")
        self.probabilities = probabilities
        self.task = task
        self._log = np.log(probabilities)

    @classmethod
    def from_probabilities(cls, probabilities, task: str = 'P') -> 'MarginalBaseline':
        return cls(probabilities, task)

    @classmethod
    def fit(cls, sequences: Sequence[PlaySequence], task: str = 'P',
            label_count: Optional[int] = None) -> 'MarginalBaseline':
        """Label frequencies with add-one smoothing."""
        if not sequences:
            raise UsageError("marginal baseline needs at least one training sequence")
        if label_count is None:
            grid = sequences[0].player_grid if task == 'P' else sequences[0].ball_grid
            label_count = grid.label_count
        counts = np.ones(label_count)
        for seq in sequences:
            labels = seq.player_labels if task == 'P' else seq.ball_labels
            np.add.at(counts, labels.reshape(-1), 1)
        return cls(counts / counts.sum(), task)

    @property
    def entropy(self) -> float:
        p = self.probabilities
        return float(-np.sum(p[p > 0] * np.log(p[p > 0])))

    def log_probabilities(self, seq: PlaySequence, task: str) -> np.ndarray:
        if task != self.task:
            raise UsageError(f"baseline was fit for task {self.task}, not {task}")
        shape = (seq.steps, seq.n_players) if task == 'P' else (seq.steps,)
        return np.broadcast_to(self._log, shape + self._log.shape)


def marginal_baseline(train_sequences: Sequence[PlaySequence], task: str = 'P') -> MarginalBaseline:
    return MarginalBaseline.fit(train_sequences, task)


def random_player_swap_eval(model: TrajectoryModel, sequences: Sequence[PlaySequence],
                            rng: np.random.Generator, task: str = 'P') -> Metrics:
    """Evaluate after replacing each sequence's players with distinct random league agents."""
    league_size = model.config.league_size
    swapped = []
    for seq in sequences:
        ids = rng.choice(league_size, size=seq.n_players, replace=False)
        swapped.append(with_agent_ids(seq, ids))
    return evaluate(model, swapped, task)


def single_frame_eval(model: TrajectoryModel, sequences: Sequence[PlaySequence], task: str = 'P') -> Metrics:
    """Predictions for the first step only, from the first frame alone."""
    return evaluate(model, [truncate(seq, 1) for seq in sequences], task)


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArmSpec:
    name: str
    task: str
    single_player: bool
    use_identity: bool


ABLATION_ARMS = (
    ArmSpec('1-NI', 'P', True, False),
    ArmSpec('10-NI', 'P', False, False),
    ArmSpec('10-I', 'P', False, True),
    ArmSpec('10-NI', 'B', False, False),
    ArmSpec('10-I', 'B', False, True),
)


@dataclass
class AblationRow:
    arm: str
    task: str
    nll: float
    pp: float


@dataclass
class AblationReport:
    rows: List[AblationRow]
    gains: Dict[str, float] = field(default_factory=dict)

    def nll(self, arm: str, task: str) -> float:
        for row in self.rows:
            if row.arm == arm and row.task == task:
                return row.nll
        raise KeyError(f"{arm}/{task}")


def relative_gains(rows: Sequence[AblationRow]) -> Dict[str, float]:
    """Relative NLL reduction of each richer arm over the one it extends."""
    by_key = {(row.arm, row.task): row.nll for row in rows}
    pairs = (('P', '10-NI', '1-NI'), ('P', '10-I', '10-NI'), ('B', '10-I', '10-NI'))
    gains = {}
    for task, better, base in pairs:
        if (better, task) in by_key and (base, task) in by_key:
            gains[f"{task}:{better} over {base}"] = (by_key[base, task] - by_key[better, task]) / by_key[base, task]
    return gains


def write_ablation_csv(rows: Sequence[AblationRow], path: str):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(ABLATION_HEADER)
        for row in rows:
            writer.writerow([row.arm, row.task, repr(row.nll), repr(row.pp)])


def run_ablations(train_games: Sequence[GameRecord], val_sequences: Sequence[PlaySequence],
                  test_sequences: Sequence[PlaySequence], model_config: ModelConfig, train_config: TrainConfig,
                  output_dir: Optional[str] = None, registry=None,
                  arms: Sequence[ArmSpec] = ABLATION_ARMS) -> AblationReport:
    """Train and evaluate every arm from the same seed on the same evaluation sequences."""
    rows = []
    for arm in arms:
        config = model_config.replace(task=arm.task, use_identity=arm.use_identity)
        arm_train = train_config.replace(player_slots=1 if arm.single_player else None)
        val = expand_single_player(val_sequences) if arm.single_player else list(val_sequences)
        test = expand_single_player(test_sequences) if arm.single_player else list(test_sequences)
        label = f"{arm.task}-{arm.name}"
        logger.info(f"Ablation arm {label}: training")
        model = build_model('baller2vec', config)
        checkpoint_path = os.path.join(output_dir, f"ablation_{label}.ckpt") if output_dir else None
        Trainer(model, train_games, val, arm_train, checkpoint_path=checkpoint_path).train()
        metrics = evaluate(model, test, arm.task)
        rows.append(AblationRow(arm.name, arm.task, metrics.mean_nll, metrics.perplexity))
        logger.info(f"Ablation arm {label}: test NLL {metrics.mean_nll:.4f}, PP {metrics.perplexity:.3f}")
        if registry is not None:
            registry.record_ablation(arm.name, arm.task, metrics.mean_nll, metrics.perplexity, train_config.seed)

    report = AblationReport(rows, relative_gains(rows))
    for name, gain in report.gains.items():
        logger.info(f"Relative NLL gain {name}: {gain:.1%}")
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        write_ablation_csv(rows, os.path.join(output_dir, 'ablation.csv'))
    return report


# ---------------------------------------------------------------------------
# Speed
# ---------------------------------------------------------------------------

@dataclass
class SpeedReport:
    baller2vec_seconds_per_epoch: float
    grnn_seconds_per_epoch: float
    baller2vec_parameters: int
    grnn_parameters: int

    @property
    def speedup(self) -> float:
        return self.grnn_seconds_per_epoch / self.baller2vec_seconds_per_epoch


def _seconds_per_epoch(model: TrajectoryModel, sequences: List[PlaySequence], config: TrainConfig,
                       epochs: int) -> float:
    trainer = Trainer(model, [], [], config)
    timings = []
    for _ in range(epochs):
        started = time.perf_counter()
        trainer.train_epoch(sequences)
        timings.append(time.perf_counter() - started)
    return float(np.mean(timings))


def speed_benchmark(b2v_model: TrajectoryModel, grnn_model: TrajectoryModel, games: Sequence[GameRecord],
                    config: TrainConfig, epochs: int = 1) -> SpeedReport:
    """Seconds per training epoch of both models on the same sampled sequences."""
    sampler = Trainer(b2v_model, games, [], config)
    sequences = [sampler.sample() for _ in range(config.samples_per_epoch)]
    b2v = _seconds_per_epoch(b2v_model, sequences, config, epochs)
    grnn = _seconds_per_epoch(grnn_model, sequences, config, epochs)
    report = SpeedReport(b2v, grnn, count_parameters(b2v_model), count_parameters(grnn_model))
    logger.info(f"Seconds per epoch: baller2vec {b2v:.2f} ({report.baller2vec_parameters:,} params), "
                f"GRNN {grnn:.2f} ({report.grnn_parameters:,} params), speedup {report.speedup:.2f}x")
    return report


@dataclass
class TimeMatchedRow:
    model: str
    budget_fraction: float
    nll: float
    seconds_per_epoch: float


def write_time_matched_csv(rows: Sequence[TimeMatchedRow], path: str):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(TIME_MATCHED_HEADER)
        for row in rows:
            writer.writerow([row.model, repr(row.budget_fraction), repr(row.nll), f"{row.seconds_per_epoch:.3f}"])


def time_matched_comparison(train_games: Sequence[GameRecord], val_sequences: Sequence[PlaySequence],
                            test_sequences: Sequence[PlaySequence], model_config: ModelConfig,
                            train_config: TrainConfig, grnn_epochs: int = 1,
                            fractions: Sequence[float] = (1.0, 0.5, 0.25)) -> List[TimeMatchedRow]:
    """
    Train the parameter-matched GRNN for `grnn_epochs`, then baller2vec for
    each fraction of the GRNN's wall-clock time, and compare test NLL.
    """
    model_config = model_config.replace(task='P')
    grnn_config = paired_grnn_config(model_config)
    grnn = build_model('grnn', grnn_config)
    started = time.perf_counter()
    grnn_result = Trainer(grnn, train_games, val_sequences, train_config.replace(max_epochs=grnn_epochs)).train()
    budget = time.perf_counter() - started
    rows = [TimeMatchedRow('grnn', 1.0, evaluate(grnn, test_sequences, 'P').mean_nll,
                           grnn_result.seconds_per_epoch)]
    logger.info(f"GRNN trained {grnn_epochs} epochs in {budget:.1f}s")

    for fraction in fractions:
        b2v = build_model('baller2vec', model_config)
        config = train_config.replace(max_seconds=budget * fraction, max_epochs=max(train_config.max_epochs,
                                                                                    grnn_epochs))
        result = Trainer(b2v, train_games, val_sequences, config).train()
        nll = evaluate(b2v, test_sequences, 'P').mean_nll
        rows.append(TimeMatchedRow('baller2vec', fraction, nll, result.seconds_per_epoch))
        logger.info(f"baller2vec at {fraction:.0%} of the GRNN budget: test NLL {nll:.4f}")
    return rows
