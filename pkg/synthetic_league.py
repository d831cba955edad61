#!/usr/bin/env python3
"""
Synthetic multi-agent league: archetyped agents with persistent speeds,
ball attraction and formation anchors, playing games whose tracking data
has the same shape as real basketball tracking.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import Config, load_dataclass_file
from errors import ConfigurationError
from tracking_data import (COURT_LENGTH_FT, COURT_WIDTH_FT, DOWNSAMPLE_STRIDE, FRAME_RATE_HZ,
                           Frame, GameRecord, PlayerInfo, write_game)

logger = logging.getLogger(__name__)

# Formation spots for a team attacking the hoop at x = 94
OFFENSE_SPOTS = ((70.0, 25.0), (76.0, 8.0), (76.0, 42.0), (86.0, 14.0), (86.0, 36.0))
DEFENSE_SPOTS = ((76.0, 25.0), (80.0, 12.0), (80.0, 38.0), (88.0, 18.0), (88.0, 32.0))
HOLD_HEIGHT_FT = 3.0
PERIOD_SECONDS = 720.0
# Largest per-step displacement allowed to stay clear of the grid edges
PLAYER_STEP_LIMIT_FT = 5.0
BALL_STEP_LIMIT_FT = 9.0
# Per-agent noise sigma is drawn uniformly within this fraction of noise_sigma
NOISE_SPREAD = 0.5


@dataclass
class SyntheticLeagueConfig:
    league_size: int = 40
    team_size: int = 5
    archetypes: int = 4
    speed_min: float = 0.5        # feet per 5 Hz step
    speed_max: float = 2.0
    noise_sigma: float = 0.2
    attraction_min: float = 0.0
    attraction_max: float = 0.3
    anchor_jitter: float = 4.0
    pass_hazard: float = 0.15
    turnover_hazard: float = 0.03
    pass_steps: int = 3
    pass_range: float = 18.0
    pass_apex: float = 4.0
    games: int = 40
    periods: int = 4
    frames_per_period: int = 1500
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.team_size != 5:
            raise ConfigurationError(f"team_size must be 5, got {self.team_size}")
        if self.league_size % self.team_size or self.league_size < 2 * self.team_size:
            raise ConfigurationError(
                f"league_size must be a multiple of {self.team_size} with at least two teams, got {self.league_size}")
        if not 1 <= self.archetypes <= self.league_size:
            raise ConfigurationError(f"archetypes must be in [1, league_size], got {self.archetypes}")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigurationError("need 0 <= speed_min <= speed_max")
        if self.noise_sigma < 0 or self.anchor_jitter < 0:
            raise ConfigurationError("noise_sigma and anchor_jitter must be non-negative")
        if self.player_step_bound > PLAYER_STEP_LIMIT_FT:
            raise ConfigurationError(
                f"speed_max + 3*max agent sigma must stay within {PLAYER_STEP_LIMIT_FT} ft per step")
        if self.max_agent_sigma > HOLD_HEIGHT_FT:
            raise ConfigurationError(f"agent sigma above {HOLD_HEIGHT_FT} would put the ball below the floor")
        if not 0 <= self.attraction_min <= self.attraction_max:
            raise ConfigurationError("need 0 <= attraction_min <= attraction_max")
        for name in ('pass_hazard', 'turnover_hazard'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must be a probability")
        if self.pass_hazard + self.turnover_hazard > 1.0:
            raise ConfigurationError("pass_hazard + turnover_hazard must not exceed 1")
        if self.pass_steps < 1 or self.pass_range <= 0:
            raise ConfigurationError("pass_steps and pass_range must be positive")
        if self.flight_step > BALL_STEP_LIMIT_FT:
            raise ConfigurationError(
                f"pass_range/pass_steps must stay within {BALL_STEP_LIMIT_FT} ft per step, got {self.flight_step:.2f}")
        if self.flight_step <= self.player_step_bound:
            raise ConfigurationError("pass_range/pass_steps must exceed speed_max + 3*max agent sigma "
                                     "so a pass can catch its receiver")
        if self.games < 0 or self.periods < 1:
            raise ConfigurationError("games must be non-negative and periods positive")
        if not 2 * DOWNSAMPLE_STRIDE < self.frames_per_period <= PERIOD_SECONDS * FRAME_RATE_HZ:
            raise ConfigurationError(
                f"frames_per_period must be in ({2 * DOWNSAMPLE_STRIDE}, {int(PERIOD_SECONDS * FRAME_RATE_HZ)}]")

    @property
    def team_count(self) -> int:
        return self.league_size // self.team_size

    @property
    def max_agent_sigma(self) -> float:
        return self.noise_sigma * (1.0 + NOISE_SPREAD)

    @property
    def player_step_bound(self) -> float:
        return self.speed_max + 3 * self.max_agent_sigma

    @property
    def flight_step(self) -> float:
        """Farthest the ball travels in one 5 Hz step while in the air."""
        return self.pass_range / self.pass_steps


def load_league_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None,
                       seed: Optional[int] = None) -> SyntheticLeagueConfig:
    overrides = dict(overrides or {})
    if seed is not None:
        overrides['seed'] = str(seed)
    return load_dataclass_file(SyntheticLeagueConfig, path, overrides)


@dataclass(frozen=True)
class AgentProfile:
    agent_id: int
    team: int
    role: int
    archetype: int
    speed: float
    attraction: float
    noise_sigma: float
    offense_anchor: Tuple[float, float]
    defense_anchor: Tuple[float, float]


def archetype_of(agent_id: int, config: SyntheticLeagueConfig) -> int:
    return agent_id % config.archetypes


def build_profiles(config: SyntheticLeagueConfig) -> List[AgentProfile]:
    """Per-agent traits; they depend on the seed only, so they persist across games."""
    rng = np.random.default_rng([config.seed, 0])
    speeds = np.linspace(config.speed_min, config.speed_max, config.archetypes)
    attractions = np.linspace(config.attraction_min, config.attraction_max, config.archetypes)
    profiles = []
    for agent_id in range(config.league_size):
        role = agent_id % config.team_size
        archetype = archetype_of(agent_id, config)
        jitter = rng.uniform(-config.anchor_jitter, config.anchor_jitter, size=(2, 2))
        offense = np.clip(np.array(OFFENSE_SPOTS[role]) + jitter[0], 0, [COURT_LENGTH_FT, COURT_WIDTH_FT])
        defense = np.clip(np.array(DEFENSE_SPOTS[role]) + jitter[1], 0, [COURT_LENGTH_FT, COURT_WIDTH_FT])
        sigma = rng.uniform(config.noise_sigma * (1.0 - NOISE_SPREAD), config.max_agent_sigma)
        profiles.append(AgentProfile(
            agent_id=agent_id,
            team=agent_id // config.team_size,
            role=role,
            archetype=archetype,
            speed=float(speeds[archetype]),
            attraction=float(attractions[archetype]),
            noise_sigma=float(sigma),
            offense_anchor=(float(offense[0]), float(offense[1])),
            defense_anchor=(float(defense[0]), float(defense[1])),
        ))
    return profiles


def team_name(team: int) -> str:
    return f"T{team:02d}"


def pairing(game_index: int, team_count: int) -> Tuple[int, int]:
    home = game_index % team_count
    offset = 1 + (game_index // team_count) % (team_count - 1)
    return home, (home + offset) % team_count


class _GameSimulator:
    """Simulates one game at 5 Hz; `frames()` interpolates to 25 Hz."""

    def __init__(self, config: SyntheticLeagueConfig, profiles: List[AgentProfile], game_index: int):
        self.config = config
        self.rng = np.random.default_rng([config.seed, game_index + 1])
        self.game_id = f"syn{game_index:04d}"
        self.home, self.away = pairing(game_index, config.team_count)
        self.home_hoop_side = 'right' if self.rng.random() < 0.5 else 'left'
        self.agents = [p for p in profiles if p.team in (self.home, self.away)]
        self.is_home = np.array([p.team == self.home for p in self.agents])
        self.speed = np.array([p.speed for p in self.agents])
        self.attraction = np.array([p.attraction for p in self.agents])
        self.noise = np.array([p.noise_sigma for p in self.agents])
        self.offense_anchor = np.array([p.offense_anchor for p in self.agents])
        self.defense_anchor = np.array([p.defense_anchor for p in self.agents])

    def _home_attacks_right(self, period: int) -> bool:
        return (self.home_hoop_side == 'right') != (period >= 3)

    def _anchors(self, home_has_ball: bool, period: int) -> np.ndarray:
        on_offense = self.is_home == home_has_ball
        anchors = np.where(on_offense[:, np.newaxis], self.offense_anchor, self.defense_anchor)
        offense_attacks_right = self._home_attacks_right(period) == home_has_ball
        if not offense_attacks_right:
            anchors = anchors.copy()
            anchors[:, 0] = COURT_LENGTH_FT - anchors[:, 0]
        return anchors

    def _receiver(self, holder: int, positions: np.ndarray, turnover: bool) -> int:
        same_team = self.is_home == self.is_home[holder]
        candidates = np.flatnonzero(~same_team if turnover else same_team)
        candidates = candidates[candidates != holder]
        distances = np.linalg.norm(positions[candidates] - positions[holder], axis=1)
        if turnover:
            return int(candidates[np.argmin(distances)])
        in_range = candidates[distances <= self.config.pass_range]
        if in_range.size:
            return int(self.rng.choice(in_range))
        return int(candidates[np.argmin(distances)])

    def simulate_period(self, period: int, positions: np.ndarray,
                        holder: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        cfg = self.config
        n_steps = cfg.frames_per_period // DOWNSAMPLE_STRIDE + 1
        players = np.empty((n_steps, len(self.agents), 2))
        ball = np.empty((n_steps, 3))
        reach = cfg.flight_step
        flight = None  # (receiver, elapsed steps, planned steps)
        for step in range(n_steps):
            if step:
                home_has_ball = bool(self.is_home[holder])
                anchors = self._anchors(home_has_ball, period)
                ball_xy = ball[step - 1, :2]
                pull = anchors - positions + self.attraction[:, np.newaxis] * (ball_xy - positions)
                norm = np.linalg.norm(pull, axis=1, keepdims=True)
                direction = np.divide(pull, norm, out=np.zeros_like(pull), where=norm > 0)
                velocity = direction * self.speed[:, np.newaxis]
                if cfg.noise_sigma > 0:
                    velocity = velocity + self.rng.normal(size=velocity.shape) * self.noise[:, np.newaxis]
                positions = np.clip(positions + velocity, 0.0, [COURT_LENGTH_FT, COURT_WIDTH_FT])
            players[step] = positions

            if flight is not None:
                # The ball homes on the receiver and never moves more than `reach` per step
                receiver, elapsed, planned = flight
                elapsed += 1
                gap = positions[receiver] - ball[step - 1, :2]
                distance = float(np.linalg.norm(gap))
                if distance <= reach:
                    ball[step] = (positions[receiver, 0], positions[receiver, 1], HOLD_HEIGHT_FT)
                    holder, flight = receiver, None
                else:
                    xy = ball[step - 1, :2] + gap * (reach / distance)
                    s = min(elapsed / planned, 1.0)
                    ball[step] = (xy[0], xy[1], HOLD_HEIGHT_FT + cfg.pass_apex * 4.0 * s * (1.0 - s))
                    flight = (receiver, elapsed, planned)
                continue

            sigma = self.noise[holder]
            jitter = self.rng.uniform(-sigma, sigma) if sigma > 0 else 0.0
            ball[step] = (positions[holder, 0], positions[holder, 1], HOLD_HEIGHT_FT + jitter)
            draw = self.rng.random()
            if draw < cfg.pass_hazard + cfg.turnover_hazard:
                receiver = self._receiver(holder, positions, turnover=draw >= cfg.pass_hazard)
                distance = float(np.linalg.norm(positions[receiver] - positions[holder]))
                flight = (receiver, 0, max(1, math.ceil(distance / reach)))

        if flight is not None:
            holder = flight[0]
        return players, ball, positions, holder

    def frames(self) -> List[Frame]:
        cfg = self.config
        frames = []
        home_has_ball = bool(self.rng.random() < 0.5)
        positions = self._anchors(home_has_ball, 1).copy()
        for period in range(1, cfg.periods + 1):
            offense = np.flatnonzero(self.is_home == home_has_ball)
            holder = int(self.rng.choice(offense))
            players, ball, positions, holder = self.simulate_period(period, positions, holder)
            players_25, ball_25 = _upsample(players, ball, cfg.frames_per_period)
            players_25 = np.round(players_25, 2)
            ball_25 = np.round(ball_25, 2)
            ids = [p.agent_id for p in self.agents]
            for f in range(cfg.frames_per_period):
                entries = tuple(sorted(
                    (ids[i], float(players_25[f, i, 0]), float(players_25[f, i, 1])) for i in range(len(ids))))
                frames.append(Frame(
                    period=period,
                    game_clock=round(PERIOD_SECONDS - f / FRAME_RATE_HZ, 2),
                    ball=(float(ball_25[f, 0]), float(ball_25[f, 1]), float(ball_25[f, 2])),
                    players=entries,
                ))
            home_has_ball = not home_has_ball
        return frames

    def record(self) -> GameRecord:
        roster = tuple(
            PlayerInfo(p.agent_id, team_name(p.team), f"agent{p.agent_id}") for p in self.agents)
        return GameRecord(
            game_id=self.game_id,
            home_team=team_name(self.home),
            away_team=team_name(self.away),
            roster=roster,
            home_hoop_side=self.home_hoop_side,
            frames=tuple(self.frames()),
        )


def _upsample(players: np.ndarray, ball: np.ndarray, n_frames: int) -> Tuple[np.ndarray, np.ndarray]:
    """Linear interpolation from 5 Hz steps to 25 Hz frames."""
    t = np.arange(n_frames) / DOWNSAMPLE_STRIDE
    low = np.floor(t).astype(int)
    high = np.minimum(low + 1, players.shape[0] - 1)
    w = (t - low)
    p = players[low] * (1 - w)[:, None, None] + players[high] * w[:, None, None]
    b = ball[low] * (1 - w)[:, None] + ball[high] * w[:, None]
    return p, b


def generate_synthetic_league(config: SyntheticLeagueConfig) -> List[GameRecord]:
    config.validate()
    if config.games == 0:
        logger.warning("League config asks for 0 games, nothing to simulate")
        return []
    profiles = build_profiles(config)
    games = []
    for g in range(config.games):
        games.append(_GameSimulator(config, profiles, g).record())
        logger.debug(f"Simulated game {g + 1}/{config.games}")
    logger.info(f"Generated {len(games)} synthetic games for a league of {config.league_size} agents")
    return games


def write_league(games: List[GameRecord], directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for game in games:
        path = os.path.join(directory, f"{game.game_id}{Config.GAME_FILE_SUFFIX}")
        write_game(game, path)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} games to {directory}")
    return paths


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    league = generate_synthetic_league(SyntheticLeagueConfig(games=2, frames_per_period=250, periods=2))
    for game in league:
        print(f"{game.game_id}: {game.home_team} vs {game.away_team}, {game.frame_count} frames")
