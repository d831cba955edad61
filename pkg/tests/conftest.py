import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from model import ModelConfig  # noqa: E402
from synthetic_league import SyntheticLeagueConfig, generate_synthetic_league  # noqa: E402
from tracking_data import FRAME_RATE_HZ, Frame, GameRecord, PlayerInfo, sequence_from_window  # noqa: E402

HOME_IDS = tuple(range(5))
AWAY_IDS = tuple(range(5, 10))


def spot(slot: int):
    return 10.0 + 7.0 * slot, 10.0 + 3.0 * slot


def make_game(game_id='g0001', n_frames=121, ids=HOME_IDS + AWAY_IDS, player_xy=None, ball=None,
              period=1, home_hoop_side='right'):
    """
    A hand-built game. `player_xy(frame, slot)` and `ball(frame)` default to
    everybody standing still.
    """
    player_xy = player_xy or (lambda f, slot: spot(slot))
    ball = ball or (lambda f: (47.0, 25.0, 3.0))
    roster = tuple(PlayerInfo(agent_id, 'HOM' if agent_id in HOME_IDS else 'AWY') for agent_id in ids)
    frames = []
    for f in range(n_frames):
        players = tuple(sorted((agent_id,) + tuple(player_xy(f, slot)) for slot, agent_id in enumerate(ids)))
        frames.append(Frame(period, round(720.0 - f / FRAME_RATE_HZ, 2), tuple(ball(f)), players))
    return GameRecord(game_id, 'HOM', 'AWY', roster, home_hoop_side, tuple(frames))


@pytest.fixture
def game_factory():
    return make_game


@pytest.fixture
def stationary_game():
    return make_game()


@pytest.fixture
def moving_game():
    """Slot 0 moves +1 ft per 5 Hz step in x; everybody else stands still."""
    def player_xy(f, slot):
        x, y = spot(slot)
        return (x + 0.2 * f, y) if slot == 0 else (x, y)
    return make_game('g0002', player_xy=player_xy)


@pytest.fixture
def random_sequence():
    """A 4-step sequence with random, in-bounds motion."""
    rng = np.random.default_rng(11)
    walk = np.cumsum(rng.normal(0.0, 0.3, size=(21, 10, 2)), axis=0)
    ball_walk = np.cumsum(rng.normal(0.0, 0.3, size=(21, 3)), axis=0)

    def player_xy(f, slot):
        x, y = spot(slot)
        return x + walk[f, slot, 0], y + walk[f, slot, 1]

    def ball(f):
        return 47.0 + ball_walk[f, 0], 25.0 + ball_walk[f, 1], 5.0 + ball_walk[f, 2]

    return sequence_from_window(make_game('g0003', n_frames=21, player_xy=player_xy, ball=ball), 0, 4)


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=8, heads=2, d_ff=16, layers=2, embedding_dim=4, player_mlp=(8, 8, 8),
                       ball_mlp=(8, 8, 8), league_size=12, dtype='float64', seed=0)


@pytest.fixture(scope='session')
def small_league():
    config = SyntheticLeagueConfig(league_size=10, games=4, periods=1, frames_per_period=400, seed=3)
    return generate_synthetic_league(config)
