#!/usr/bin/env python3
"""
courtformer - command line
Synthetic data, training, evaluation, ablations, speed benchmarks and
analysis exports for multi-entity trajectory models
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from analytics import ModelAnalytics
from checkpoint import load_checkpoint
from config import Config, RunConfig, parse_overrides, render_dataclass
from database import DatabaseManager
from errors import CourtformerError, DataError, UsageError
from grnn import paired_grnn_config
from harness import (MarginalBaseline, Trainer, UniformPredictor, evaluate, random_player_swap_eval, run_ablations,
                     single_frame_eval, speed_benchmark, time_matched_comparison, write_time_matched_csv)
from model import ModelConfig, build_model, count_parameters
from synthetic_league import generate_synthetic_league, load_league_config, write_league
from tracking_data import (GameRecord, PlaySequence, build_eval_set, ingest_game, load_games,
                           sequence_from_window, split_games, window_problem)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'best.ckpt'
METRICS_NAME = 'metrics.csv'


def configure_logging(level: str = None):
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO)
    )


class CLIArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so every failure maps to an exit code"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class DataSplits:
    train: List[GameRecord]
    val: List[GameRecord]
    test: List[GameRecord]

    def games(self, split: str) -> List[GameRecord]:
        if split not in ('train', 'val', 'test'):
            raise UsageError(f"split must be train, val or test, got {split!r}")
        return getattr(self, split)


def parse_sequence_spec(spec: str) -> Tuple[str, int]:
    """'GAME_ID:START_FRAME'"""
    game_id, sep, start = spec.rpartition(':')
    if not sep or not game_id:
        raise UsageError(f"sequence must look like GAME_ID:START_FRAME, got {spec!r}")
    try:
        return game_id, int(start)
    except ValueError:
        raise UsageError(f"start frame must be an integer, got {start!r}")


class CourtformerCLI:
    def __init__(self):
        self.handlers: Dict[str, Callable] = {}
        self.parser = self.build_parser()
        self.register_handlers()

    def build_parser(self) -> CLIArgumentParser:
        parser = CLIArgumentParser(prog='courtformer', description=__doc__.strip().splitlines()[0])
        parser.add_argument('--log-level', default=None, type=str.upper,
                            choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Override LOG_LEVEL')
        subparsers = parser.add_subparsers(dest='command', required=True)

        def command(name: str, help_text: str) -> argparse.ArgumentParser:
            sub = subparsers.add_parser(name, help=help_text)
            sub.add_argument('--config', help='Flat key = value config file')
            sub.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                             help='Override one config key (repeatable)')
            sub.add_argument('--seed', type=int, default=None, help='Seed; wins over config and COURTFORMER_SEED')
            sub.add_argument('--out', default=None, help='Output directory')
            sub.add_argument('--registry', default=None, help='Run registry database URL')
            return sub

        command('synth', 'Generate a synthetic league in the tracking format')
        check = command('ingest-check', 'Validate a directory of tracking files')
        check.add_argument('--data', default=None, help='Directory of tracking files (default: data_dir)')
        command('train', 'Train a model with plateau schedule and early stopping')

        ev = command('eval', 'Evaluate a checkpoint on a held-out split')
        ev.add_argument('--checkpoint', default=None)
        ev.add_argument('--split', default='test', choices=['val', 'test'])
        ev.add_argument('--single-frame', action='store_true', help='Only the first step of each sequence')
        ev.add_argument('--swap-players', action='store_true', help='Replace players with random league agents')
        ev.add_argument('--baseline', choices=['marginal', 'uniform'], default=None,
                        help='Evaluate a baseline predictor instead of the checkpoint')

        command('ablate', 'Train and evaluate every ablation arm')

        bench = command('bench', 'Seconds per epoch of baller2vec against the paired GRNN')
        bench.add_argument('--epochs', type=int, default=1)
        bench.add_argument('--time-matched', action='store_true',
                           help='Train baller2vec for fractions of the GRNN wall-clock and compare test NLL')
        bench.add_argument('--grnn-epochs', type=int, default=1)

        emb = command('embeddings', 'Export identity embeddings and nearest neighbours')
        emb.add_argument('--checkpoint', default=None)
        emb.add_argument('--query', type=int, default=None, help='Agent id to find neighbours for')
        emb.add_argument('-k', type=int, default=None, help='Number of neighbours')

        att = command('attention', 'Export ball attention summed through time')
        att.add_argument('--checkpoint', default=None)
        att.add_argument('--sequence', required=True, metavar='GAME_ID:START_FRAME')
        att.add_argument('--layer', type=int, default=0)
        att.add_argument('--head', type=int, default=0)
        att.add_argument('--ref-step', type=int, default=None, help='Reference step (default: last)')
        att.add_argument('--matrix', action='store_true', help='Also dump the full weight matrix')

        traj = command('traj-dist', 'Export one player\'s predicted trajectory distribution')
        traj.add_argument('--checkpoint', default=None)
        traj.add_argument('--sequence', required=True, metavar='GAME_ID:START_FRAME')
        traj.add_argument('--step', type=int, default=0)
        traj.add_argument('--slot', type=int, default=0)
        return parser

    def register_handlers(self):
        """Register all subcommand handlers"""
        self.handlers['synth'] = self.cmd_synth
        self.handlers['ingest-check'] = self.cmd_ingest_check
        self.handlers['train'] = self.cmd_train
        self.handlers['eval'] = self.cmd_eval
        self.handlers['ablate'] = self.cmd_ablate
        self.handlers['bench'] = self.cmd_bench
        self.handlers['embeddings'] = self.cmd_embeddings
        self.handlers['attention'] = self.cmd_attention
        self.handlers['traj-dist'] = self.cmd_trajdist

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(args.log_level)
        self.handlers[args.command](args)
        return 0

    # ------------------------------------------------------------------
    # shared plumbing
    # ------------------------------------------------------------------

    def load_run_config(self, args) -> RunConfig:
        overrides = parse_overrides(args.set)
        if args.out:
            overrides['output_dir'] = args.out
        config = RunConfig.load(args.config, overrides, args.seed)
        config.write(config.output_dir)
        return config

    def open_registry(self, args) -> DatabaseManager:
        return DatabaseManager(args.registry or Config.DATABASE_URL)

    def load_splits(self, config: RunConfig) -> DataSplits:
        games = load_games(config.data_dir, Config.GAME_FILE_SUFFIX)
        return DataSplits(*split_games(games, config.seed))

    def eval_set(self, config: RunConfig, games: List[GameRecord], model_config: ModelConfig) -> List[PlaySequence]:
        sequences = build_eval_set(games, config.eval_target, config.sequence_steps,
                                   model_config.player_grid, model_config.ball_grid)
        if not sequences:
            raise DataError("no evaluation sequences could be built")
        return sequences

    def model_config(self, config: RunConfig) -> ModelConfig:
        model_config = config.model_config()
        if config.model_kind == 'grnn' and model_config.grnn_d_ff is None:
            model_config = paired_grnn_config(model_config)
        return model_config

    def checkpoint_path(self, args, config: RunConfig) -> str:
        path = args.checkpoint or os.path.join(config.output_dir, CHECKPOINT_NAME)
        if not os.path.exists(path):
            raise UsageError(f"checkpoint {path} does not exist; run train first or pass --checkpoint")
        return path

    def find_sequence(self, config: RunConfig, spec: str, model_config: ModelConfig) -> PlaySequence:
        game_id, start = parse_sequence_spec(spec)
        games = {g.game_id: g for g in load_games(config.data_dir, Config.GAME_FILE_SUFFIX)}
        if game_id not in games:
            raise DataError(f"no game {game_id!r} in {config.data_dir}")
        game = games[game_id]
        problem = window_problem(game, start, config.sequence_steps)
        if problem:
            raise DataError(f"{spec}: {problem}")
        return sequence_from_window(game, start, config.sequence_steps, False,
                                    model_config.player_grid, model_config.ball_grid)

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------

    def cmd_synth(self, args):
        league = load_league_config(args.config, parse_overrides(args.set), args.seed)
        out_dir = args.out or RunConfig().data_dir
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, Config.RESOLVED_CONFIG_NAME), 'w', encoding='utf-8') as f:
            f.write(render_dataclass(league))
        games = generate_synthetic_league(league)
        write_league(games, out_dir)
        frames = sum(g.frame_count for g in games)
        print(f"Wrote {len(games)} games ({frames} frames, {league.league_size} agents) to {out_dir}")

    def cmd_ingest_check(self, args):
        config = self.load_run_config(args)
        directory = args.data or config.data_dir
        paths = sorted(p for p in os.listdir(directory) if p.endswith(Config.GAME_FILE_SUFFIX))
        if not paths:
            raise DataError(f"no {Config.GAME_FILE_SUFFIX} files in {directory}")
        for name in paths:
            game = ingest_game(os.path.join(directory, name))
            print(f"{game.game_id}: {game.frame_count} frames, {game.dropped_frames} dropped")
        print(f"{len(paths)} games OK")

    def cmd_train(self, args):
        config = self.load_run_config(args)
        model_config = self.model_config(config)
        splits = self.load_splits(config)
        val = self.eval_set(config, splits.val, model_config)
        model = build_model(config.model_kind, model_config)
        logger.info(f"Training {model.kind} ({count_parameters(model):,} parameters) on "
                    f"{len(splits.train)} games, {len(val)} validation sequences")

        registry = self.open_registry(args)
        run_id = registry.start_run('train', model.kind, model_config.task, config.seed, config.output_dir,
                                    config.to_text())
        try:
            trainer = Trainer(model, splits.train, val, config.train_config(),
                              checkpoint_path=os.path.join(config.output_dir, CHECKPOINT_NAME),
                              metrics_path=os.path.join(config.output_dir, METRICS_NAME),
                              registry=registry, run_id=run_id)
            result = trainer.train()
        except Exception:
            if run_id is not None:
                registry.finish_run(run_id, status='failed')
            raise
        if run_id is not None:
            registry.finish_run(run_id, best_epoch=result.best_epoch, best_val_nll=result.best_val_nll,
                                summary={'stopped': result.stopped, 'epochs': len(result.history)})
        registry.close()
        print(f"Best epoch {result.best_epoch}: val NLL {result.best_val_nll:.6f} ({result.stopped})")

    def cmd_eval(self, args):
        if args.baseline and args.swap_players:
            raise UsageError("--swap-players needs a trained model, not a baseline")
        config = self.load_run_config(args)
        splits = self.load_splits(config)
        if args.baseline:
            model_config = self.model_config(config)
            model = None
        else:
            model = load_checkpoint(self.checkpoint_path(args, config))
            model_config = model.config
        sequences = self.eval_set(config, splits.games(args.split), model_config)
        tasks = ('P', 'B') if model_config.task == 'both' else (model_config.task,)
        mode = 'single_frame' if args.single_frame else 'swap' if args.swap_players else 'full'
        if args.baseline:
            mode = f"{args.baseline}_{mode}"

        rows = []
        for task in tasks:
            predictor = model or self.baseline(args.baseline, task, config, splits, model_config)
            if args.single_frame:
                metrics = single_frame_eval(predictor, sequences, task)
            elif args.swap_players:
                metrics = random_player_swap_eval(predictor, sequences, np.random.default_rng(config.seed), task)
            else:
                metrics = evaluate(predictor, sequences, task)
            rows.append([args.split, mode, task, metrics.sequence_count, metrics.prediction_count,
                         repr(metrics.mean_nll), repr(metrics.perplexity)])
            print(f"{args.split}/{mode} task {task}: NLL {metrics.mean_nll:.6f}, PP {metrics.perplexity:.4f} "
                  f"over {metrics.sequence_count} sequences")

        path = os.path.join(config.output_dir, f"eval_{args.split}_{mode}.csv")
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['split', 'mode', 'task', 'sequences', 'predictions', 'mean_nll', 'perplexity'])
            writer.writerows(rows)

    def baseline(self, kind: str, task: str, config: RunConfig, splits: DataSplits, model_config: ModelConfig):
        if kind == 'uniform':
            return UniformPredictor(model_config.player_grid.label_count, model_config.ball_grid.label_count)
        train_sequences = build_eval_set(splits.train, config.eval_target, config.sequence_steps,
                                         model_config.player_grid, model_config.ball_grid)
        return MarginalBaseline.fit(train_sequences, task)

    def cmd_ablate(self, args):
        config = self.load_run_config(args)
        model_config = config.model_config()
        splits = self.load_splits(config)
        val = self.eval_set(config, splits.val, model_config)
        test = self.eval_set(config, splits.test, model_config)
        registry = self.open_registry(args)
        run_id = registry.start_run('ablate', 'baller2vec', 'P+B', config.seed, config.output_dir, config.to_text())
        report = run_ablations(splits.train, val, test, model_config, config.train_config(),
                               output_dir=config.output_dir, registry=registry)
        if run_id is not None:
            registry.finish_run(run_id, summary=report.gains)
        registry.close()
        for row in report.rows:
            print(f"{row.task} {row.arm}: NLL {row.nll:.4f}, PP {row.pp:.3f}")

    def cmd_bench(self, args):
        config = self.load_run_config(args)
        model_config = config.model_config().replace(task='P')
        grnn_config = paired_grnn_config(model_config)
        splits = self.load_splits(config)
        if args.time_matched:
            val = self.eval_set(config, splits.val, model_config)
            test = self.eval_set(config, splits.test, model_config)
            rows = time_matched_comparison(splits.train, val, test, model_config, config.train_config(),
                                           grnn_epochs=args.grnn_epochs)
            write_time_matched_csv(rows, os.path.join(config.output_dir, 'time_matched.csv'))
            for row in rows:
                print(f"{row.model} x{row.budget_fraction}: NLL {row.nll:.4f}, {row.seconds_per_epoch:.2f} s/epoch")
            return

        b2v = build_model('baller2vec', model_config)
        grnn = build_model('grnn', grnn_config)
        report = speed_benchmark(b2v, grnn, splits.train, config.train_config(), epochs=args.epochs)
        with open(os.path.join(config.output_dir, 'bench.csv'), 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['model', 'parameters', 'seconds_per_epoch'])
            writer.writerow(['baller2vec', report.baller2vec_parameters, f"{report.baller2vec_seconds_per_epoch:.3f}"])
            writer.writerow(['grnn', report.grnn_parameters, f"{report.grnn_seconds_per_epoch:.3f}"])
        print(f"baller2vec {report.baller2vec_seconds_per_epoch:.2f} s/epoch, "
              f"GRNN {report.grnn_seconds_per_epoch:.2f} s/epoch ({report.speedup:.2f}x)")

    def cmd_embeddings(self, args):
        config = self.load_run_config(args)
        analytics = ModelAnalytics(load_checkpoint(self.checkpoint_path(args, config)))
        count = analytics.export_embeddings(os.path.join(config.output_dir, 'embeddings.csv'))
        print(f"Exported {count} embeddings")
        if args.query is not None:
            found = analytics.export_neighbors(args.query, args.k, os.path.join(config.output_dir, 'neighbors.csv'))
            print(f"Exported {found} neighbours of agent {args.query}")

    def cmd_attention(self, args):
        config = self.load_run_config(args)
        model = load_checkpoint(self.checkpoint_path(args, config))
        seq = self.find_sequence(config, args.sequence, model.config)
        ref_step = seq.steps - 1 if args.ref_step is None else args.ref_step
        matrix_path = os.path.join(config.output_dir, 'attention_matrix.csv') if args.matrix else None
        sums = ModelAnalytics(model).export_attention(seq, args.layer, args.head, ref_step,
                                                      os.path.join(config.output_dir, 'attention.csv'), matrix_path)
        print(f"Ball attention at step {ref_step}: players {float(sums[:-1].sum()):.4f}, "
              f"ball {float(sums[-1]):.4f}")

    def cmd_trajdist(self, args):
        config = self.load_run_config(args)
        model = load_checkpoint(self.checkpoint_path(args, config))
        seq = self.find_sequence(config, args.sequence, model.config)
        probabilities = ModelAnalytics(model).export_trajectory_distribution(
            seq, args.step, args.slot, os.path.join(config.output_dir, 'trajdist.csv'))
        print(f"Most likely bin {int(np.argmax(probabilities))} with p={float(probabilities.max()):.4f}")


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        return CourtformerCLI().run(argv)
    except CourtformerError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
