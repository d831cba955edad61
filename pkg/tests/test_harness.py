import csv
import dataclasses
import math
import time

import numpy as np
import pytest

from checkpoint import checkpoint_metadata, load_checkpoint
from database import DatabaseManager
from errors import ConfigurationError, NumericError, UsageError
from grnn import paired_grnn_config
from harness import (ABLATION_ARMS, AblationRow, ArmSpec, MarginalBaseline, Metrics, PlateauSchedule, TrainConfig,
                     Trainer, UniformPredictor, evaluate, marginal_baseline, random_player_swap_eval,
                     relative_gains, run_ablations, single_frame_eval, speed_benchmark, time_matched_comparison)
from model import ModelConfig, build_model
from synthetic_league import SyntheticLeagueConfig, generate_synthetic_league
from tracking_data import build_eval_set, sequence_from_window


@pytest.fixture
def desk_train_config():
    return TrainConfig(samples_per_epoch=3, max_epochs=2, learning_rate=1e-2, reduced_learning_rate=1e-3,
                       patience=2, sequence_steps=5, seed=1)


@pytest.fixture
def val_sequences(small_league):
    return build_eval_set(small_league, target=4, steps=5)


class TestMetrics:
    def test_uniform_player_perplexity(self, random_sequence):
        metrics = evaluate(UniformPredictor(), [random_sequence], 'P')
        assert metrics.prediction_count == 40
        assert metrics.perplexity == pytest.approx(121.0)

    def test_uniform_ball_perplexity(self, random_sequence):
        assert evaluate(UniformPredictor(), [random_sequence], 'B').perplexity == pytest.approx(6859.0)

    def test_perfect_predictor(self):
        metrics = Metrics.from_nlls([0.0] * 12, sequence_count=3)
        assert (metrics.mean_nll, metrics.perplexity) == (0.0, 1.0)

    def test_empty_set(self):
        with pytest.raises(UsageError):
            evaluate(UniformPredictor(), [], 'P')

    def test_both_tasks_pool_predictions(self, random_sequence):
        metrics = evaluate(UniformPredictor(), [random_sequence], 'both')
        assert metrics.prediction_count == 44
        assert metrics.mean_nll == pytest.approx((40 * math.log(121) + 4 * math.log(6859)) / 44)

    def test_order_of_the_eval_set_does_not_matter(self, tiny_config, val_sequences):
        model = build_model('baller2vec', tiny_config.replace(task='both'))
        forward = evaluate(model, val_sequences, 'both')
        backward = evaluate(model, val_sequences[::-1], 'both')
        assert len(val_sequences) > 1
        assert dataclasses.replace(backward, seconds=0.0) == dataclasses.replace(forward, seconds=0.0)


class TestMarginalBaseline:
    def test_peaks_on_the_only_label(self, stationary_game):
        baseline = marginal_baseline([sequence_from_window(stationary_game, 0, 20)], 'P')
        assert int(np.argmax(baseline.probabilities)) == 60
        assert baseline.probabilities[60] == pytest.approx(201 / 321)

    def test_perplexity_is_exp_entropy(self, random_sequence):
        counts = np.bincount(random_sequence.player_labels.reshape(-1), minlength=121)
        with np.errstate(divide='ignore'):
            baseline = MarginalBaseline.from_probabilities(counts / counts.sum(), 'P')
            metrics = evaluate(baseline, [random_sequence], 'P')
        assert metrics.perplexity == pytest.approx(math.exp(baseline.entropy))

    def test_wrong_task(self, random_sequence):
        baseline = marginal_baseline([random_sequence], 'B')
        with pytest.raises(UsageError):
            baseline.log_probabilities(random_sequence, 'P')

    def test_rejects_non_distribution(self):
        with pytest.raises(UsageError):
            MarginalBaseline([0.5, 0.6])


class TestPlateauSchedule:
    def test_flat_curve_reduces_then_stops(self):
        schedule = PlateauSchedule(patience=20)
        decisions = [schedule.observe(5.0) for _ in range(41)]
        assert decisions[0] == 'improved'
        assert decisions.index('reduce') == 20
        assert decisions.index('stop') == 40
        assert set(decisions[1:20]) == {'plateau'}

    def test_improvement_resets_the_count(self):
        schedule = PlateauSchedule(patience=2)
        assert [schedule.observe(v) for v in (3.0, 3.0, 2.0, 2.5, 2.5)] == \
            ['improved', 'plateau', 'improved', 'plateau', 'reduce']


class TestTrainConfig:
    def test_reduced_rate_must_be_lower(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=1e-6, reduced_learning_rate=1e-5)

    def test_positive_counts(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(samples_per_epoch=0)


class TestTraining:
    def test_same_seed_same_first_epoch(self, tiny_config, small_league, val_sequences, desk_train_config):
        config = desk_train_config.replace(max_epochs=1)
        first = Trainer(build_model('baller2vec', tiny_config), small_league, val_sequences, config).train()
        second = Trainer(build_model('baller2vec', tiny_config), small_league, val_sequences, config).train()
        assert first.history[0].train_nll == second.history[0].train_nll
        assert first.history[0].val_nll == second.history[0].val_nll

    def test_loss_goes_down_on_a_fixed_sequence(self, tiny_config, random_sequence, desk_train_config):
        trainer = Trainer(build_model('baller2vec', tiny_config), [], [], desk_train_config)
        losses = [trainer.train_step([random_sequence]) for _ in range(30)]
        assert losses[-1] < losses[0]

    def test_nan_parameter_names_the_sequence(self, tiny_config, random_sequence, desk_train_config):
        model = build_model('baller2vec', tiny_config)
        model.player_head.bias.data[0] = np.nan
        trainer = Trainer(model, [], [], desk_train_config)
        with pytest.raises(NumericError, match='g0003:0'):
            trainer.train_step([random_sequence])

    def test_outputs_and_reproducible_eval(self, tmp_path, tiny_config, small_league, val_sequences,
                                           desk_train_config):
        config = tiny_config.replace(dtype='float32')
        checkpoint_path = str(tmp_path / 'best.ckpt')
        metrics_path = str(tmp_path / 'metrics.csv')
        registry = DatabaseManager(f"sqlite:///{tmp_path / 'runs.db'}")
        run_id = registry.start_run('train', 'baller2vec', 'P', 1)
        result = Trainer(build_model('baller2vec', config), small_league, val_sequences, desk_train_config,
                         checkpoint_path=checkpoint_path, metrics_path=metrics_path, registry=registry,
                         run_id=run_id).train()

        assert len(result.history) == 2
        assert result.stopped == 'max_epochs'
        with open(metrics_path, newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['epoch', 'train_nll', 'val_nll', 'val_pp', 'lr', 'seconds']
        assert [row[0] for row in rows[1:]] == ['1', '2']
        assert [row['epoch'] for row in registry.epoch_history(run_id)] == [1, 2]

        assert checkpoint_metadata(checkpoint_path)['epoch'] == result.best_epoch
        reloaded = load_checkpoint(checkpoint_path, expected_config=config)
        assert evaluate(reloaded, val_sequences, 'P').mean_nll == pytest.approx(result.best_val_nll, abs=1e-6)
        registry.close()

    def test_early_stopping(self, tiny_config, small_league, val_sequences, desk_train_config):
        config = desk_train_config.replace(max_epochs=50, patience=1, learning_rate=1e-9,
                                           reduced_learning_rate=1e-10)
        model = build_model('baller2vec', tiny_config)
        for param in model.parameters():
            param.trainable = False
        result = Trainer(model, small_league, val_sequences, config).train()
        assert result.stopped == 'early_stopping'
        assert len(result.history) == 3
        assert result.history[-1].lr == 1e-10

    @pytest.mark.slow
    def test_overfits_one_sequence(self, tiny_config, random_sequence, desk_train_config):
        config = tiny_config.replace(d_model=16, d_ff=32, player_mlp=(16, 16, 16), ball_mlp=(16, 16, 16))
        trainer = Trainer(build_model('baller2vec', config), [], [], desk_train_config.replace(learning_rate=3e-3))
        losses = trainer.overfit_single_batch([random_sequence], steps=2000, target_nll=0.05)
        assert losses[-1] < 0.05


class TestSpecialEvaluations:
    def test_swap_leaves_identity_free_model_unchanged(self, tiny_config, val_sequences):
        model = build_model('baller2vec', tiny_config.replace(use_identity=False))
        plain = evaluate(model, val_sequences, 'P')
        swapped = random_player_swap_eval(model, val_sequences, np.random.default_rng(0), 'P')
        assert swapped.mean_nll == plain.mean_nll

    def test_swap_changes_identity_model(self, tiny_config, val_sequences):
        model = build_model('baller2vec', tiny_config)
        swapped = random_player_swap_eval(model, val_sequences, np.random.default_rng(0), 'P')
        assert swapped.mean_nll != evaluate(model, val_sequences, 'P').mean_nll

    def test_single_frame_of_a_uniform_model(self, tiny_config, val_sequences):
        model = build_model('baller2vec', tiny_config)
        model.player_head.weight.data[:] = 0.0
        model.player_head.bias.data[:] = 0.0
        metrics = single_frame_eval(model, val_sequences, 'P')
        assert metrics.prediction_count == 10 * len(val_sequences)
        assert metrics.perplexity == pytest.approx(121.0)


class TestAblations:
    def test_relative_gains(self):
        rows = [AblationRow('1-NI', 'P', 4.0, 0.0), AblationRow('10-NI', 'P', 3.0, 0.0),
                AblationRow('10-I', 'P', 2.7, 0.0), AblationRow('10-NI', 'B', 5.0, 0.0),
                AblationRow('10-I', 'B', 4.0, 0.0)]
        gains = relative_gains(rows)
        assert gains['P:10-NI over 1-NI'] == pytest.approx(0.25)
        assert gains['P:10-I over 10-NI'] == pytest.approx(0.1)
        assert gains['B:10-I over 10-NI'] == pytest.approx(0.2)

    def test_missing_arm_skips_its_gain(self):
        assert relative_gains([AblationRow('10-I', 'P', 2.0, 7.4)]) == {}

    def test_tiny_run(self, tmp_path, tiny_config, small_league, val_sequences, desk_train_config):
        registry = DatabaseManager(f"sqlite:///{tmp_path / 'runs.db'}")
        run_id = registry.start_run('ablate', 'baller2vec', 'both', 1)
        arms = (ArmSpec('1-NI', 'P', True, False), ArmSpec('10-I', 'P', False, True),
                ArmSpec('10-I', 'B', False, True))
        report = run_ablations(small_league, val_sequences, val_sequences, tiny_config,
                               desk_train_config.replace(max_epochs=1, samples_per_epoch=2), str(tmp_path),
                               registry, arms)
        assert [(row.arm, row.task) for row in report.rows] == [('1-NI', 'P'), ('10-I', 'P'), ('10-I', 'B')]
        assert all(math.isfinite(row.nll) and row.pp == pytest.approx(math.exp(row.nll)) for row in report.rows)
        assert report.nll('10-I', 'B') == report.rows[2].nll
        with open(tmp_path / 'ablation.csv', newline='') as f:
            assert len(list(csv.reader(f))) == 4
        assert len(registry.ablation_results(run_id)) == 3
        registry.close()


class TestSpeed:
    def test_benchmark_reports_both_models(self, tiny_config, small_league, desk_train_config):
        b2v = build_model('baller2vec', tiny_config)
        grnn = build_model('grnn', paired_grnn_config(tiny_config))
        report = speed_benchmark(b2v, grnn, small_league, desk_train_config.replace(samples_per_epoch=2))
        assert report.baller2vec_seconds_per_epoch > 0
        assert report.speedup > 0
        assert report.grnn_parameters == pytest.approx(report.baller2vec_parameters, rel=0.1)

    def test_time_matched_rows(self, tiny_config, small_league, val_sequences, desk_train_config):
        rows = time_matched_comparison(small_league, val_sequences, val_sequences, tiny_config,
                                       desk_train_config.replace(samples_per_epoch=2, max_epochs=1),
                                       grnn_epochs=1, fractions=(1.0, 0.5))
        assert [(row.model, row.budget_fraction) for row in rows] == \
            [('grnn', 1.0), ('baller2vec', 1.0), ('baller2vec', 0.5)]
        assert all(math.isfinite(row.nll) for row in rows)


LEAGUE_STEPS = 6
DESK_TRAINING = TrainConfig(samples_per_epoch=200, max_epochs=15, learning_rate=1e-3, reduced_learning_rate=1e-4,
                            patience=3, sequence_steps=LEAGUE_STEPS, seed=0)


def desk_model_config(**changes):
    return ModelConfig(d_model=32, heads=4, d_ff=64, layers=2, embedding_dim=8, player_mlp=(32, 32, 32),
                       ball_mlp=(32, 32, 32), league_size=20, dtype='float32', seed=0).replace(**changes)


def league_splits(**changes):
    settings = dict(league_size=20, games=16, periods=2, frames_per_period=1500, seed=5)
    settings.update(changes)
    games = generate_synthetic_league(SyntheticLeagueConfig(**settings))
    train, val, test = games[:12], games[12:14], games[14:]
    return train, build_eval_set(val, 40, LEAGUE_STEPS), build_eval_set(test, 80, LEAGUE_STEPS)


@pytest.fixture(scope='module')
def archetyped_league():
    return league_splits()


@pytest.fixture(scope='module')
def trained_identity_model(archetyped_league):
    train, val, _ = archetyped_league
    model = build_model('baller2vec', desk_model_config())
    Trainer(model, train, val, DESK_TRAINING).train()
    return model


@pytest.mark.slow
class TestSyntheticLearnability:
    def test_beats_the_marginal_baseline(self, archetyped_league, trained_identity_model):
        train, _, test = archetyped_league
        baseline = MarginalBaseline.fit(build_eval_set(train, 400, LEAGUE_STEPS), 'P')
        model_pp = evaluate(trained_identity_model, test, 'P').perplexity
        assert model_pp <= 0.7 * evaluate(baseline, test, 'P').perplexity

    def test_swapping_players_hurts(self, archetyped_league, trained_identity_model):
        test = archetyped_league[2]
        swapped = random_player_swap_eval(trained_identity_model, test, np.random.default_rng(0), 'P')
        assert swapped.mean_nll > evaluate(trained_identity_model, test, 'P').mean_nll

    def test_history_beats_a_single_frame(self, archetyped_league, trained_identity_model):
        test = archetyped_league[2]
        full = evaluate(trained_identity_model, test, 'P')
        assert full.mean_nll < single_frame_eval(trained_identity_model, test, 'P').mean_nll

    def test_ablation_ordering(self, archetyped_league):
        train, val, test = archetyped_league
        report = run_ablations(train, val, test, desk_model_config(), DESK_TRAINING, arms=ABLATION_ARMS[:3])
        assert report.nll('1-NI', 'P') > report.nll('10-NI', 'P') > report.nll('10-I', 'P')
        assert report.gains['P:10-I over 10-NI'] >= 0.02

    def test_no_identity_gain_when_agents_are_alike(self):
        train, val, test = league_splits(archetypes=1, anchor_jitter=0.0)
        report = run_ablations(train, val, test, desk_model_config(), DESK_TRAINING, arms=ABLATION_ARMS[1:3])
        assert report.gains['P:10-I over 10-NI'] < 0.02


def best_epoch_seconds(model, games, steps, repeats=3):
    config = TrainConfig(samples_per_epoch=4, learning_rate=1e-3, reduced_learning_rate=1e-4, sequence_steps=steps,
                         seed=0)
    trainer = Trainer(model, games, [], config)
    sequences = [trainer.sample() for _ in range(config.samples_per_epoch)]
    trainer.train_epoch(sequences)
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        trainer.train_epoch(sequences)
        timings.append(time.perf_counter() - started)
    return min(timings)


@pytest.mark.slow
class TestSpeedAtDeskScale:
    def test_transformer_is_faster_per_epoch(self, archetyped_league):
        config = desk_model_config(d_model=16, heads=2, d_ff=32, player_mlp=(16, 16, 16), ball_mlp=(16, 16, 16))
        grnn = build_model('grnn', paired_grnn_config(config))
        report = speed_benchmark(build_model('baller2vec', config), grnn, archetyped_league[0],
                                 DESK_TRAINING.replace(samples_per_epoch=8, sequence_steps=20), epochs=2)
        assert report.grnn_parameters == pytest.approx(report.baller2vec_parameters, rel=0.1)
        assert report.speedup > 1.0

    def test_doubling_steps_more_than_doubles_transformer_time(self, archetyped_league):
        model = build_model('baller2vec', desk_model_config(d_model=16, heads=2, d_ff=32, player_mlp=(16, 16, 16),
                                                            ball_mlp=(16, 16, 16)))
        short = best_epoch_seconds(model, archetyped_league[0], steps=40)
        long = best_epoch_seconds(model, archetyped_league[0], steps=80)
        assert long > 2 * short
