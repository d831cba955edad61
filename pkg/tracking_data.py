#!/usr/bin/env python3
"""
Game tracking data: file ingestion and writing, training-sequence sampling,
court rotation, evaluation-set construction and game splits.
"""

import dataclasses
import glob
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from binning import BALL_GRID, PLAYER_GRID, BinGrid2D, BinGrid3D, bin2d_array, bin3d_array
from errors import DataError, SamplingError, TrackingParseError, UsageError

logger = logging.getLogger(__name__)

COURT_LENGTH_FT = 94.0
COURT_WIDTH_FT = 50.0
FRAME_RATE_HZ = 25
DOWNSAMPLE_STRIDE = 5
DEFAULT_STEPS = 20
PLAYERS_ON_COURT = 10
STEP_SECONDS = DOWNSAMPLE_STRIDE / FRAME_RATE_HZ
# No player covers this much ground in one 0.2 s step; larger jumps are tracking glitches
TELEPORT_LIMIT_FT = 15.0
MAX_SAMPLING_RETRIES = 200
HOOP_SIDES = ('left', 'right')


@dataclass(frozen=True)
class Frame:
    period: int
    game_clock: float
    ball: Tuple[float, float, float]
    # (agent_id, x, y), sorted by agent id: order within a frame carries no meaning
    players: Tuple[Tuple[int, float, float], ...]

    @property
    def player_ids(self) -> Tuple[int, ...]:
        return tuple(p[0] for p in self.players)

    def in_bounds(self) -> bool:
        bx, by, bz = self.ball
        if not (_on_court(bx, by) and bz >= 0):
            return False
        return all(_on_court(x, y) for _, x, y in self.players)


def _on_court(x: float, y: float) -> bool:
    return 0.0 <= x <= COURT_LENGTH_FT and 0.0 <= y <= COURT_WIDTH_FT


@dataclass(frozen=True)
class PlayerInfo:
    agent_id: int
    team: str
    name: str = ''


@dataclass(frozen=True, eq=False)
class GameRecord:
    game_id: str
    home_team: str
    away_team: str
    roster: Tuple[PlayerInfo, ...]
    home_hoop_side: str
    frames: Tuple[Frame, ...]
    dropped_frames: int = 0

    def __post_init__(self):
        if self.home_hoop_side not in HOOP_SIDES:
            raise DataError(f"game {self.game_id}: hoop side must be left or right, got {self.home_hoop_side!r}")
        n = len(self.frames)
        ids = np.array([f.player_ids for f in self.frames], dtype=np.int64).reshape(n, PLAYERS_ON_COURT)
        xy = np.array([[(x, y) for _, x, y in f.players] for f in self.frames],
                      dtype=np.float64).reshape(n, PLAYERS_ON_COURT, 2)
        ball = np.array([f.ball for f in self.frames], dtype=np.float64).reshape(n, 3)
        periods = np.array([f.period for f in self.frames], dtype=np.int64)
        clocks = np.array([f.game_clock for f in self.frames], dtype=np.float64)
        home_ids = [p.agent_id for p in self.roster if p.team == self.home_team]
        is_home = np.isin(ids, home_ids)
        second_half = (periods >= 3)[:, np.newaxis]
        home_attacks_right = (self.home_hoop_side == 'right') != second_half
        frontcourt = np.where(is_home, home_attacks_right, ~home_attacks_right).astype(np.int8)
        for name, value in (('ids', ids), ('player_xy', xy), ('ball_xyz', ball), ('periods', periods),
                            ('clocks', clocks), ('frontcourt', frontcourt)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def team_of(self, agent_id: int) -> str:
        for player in self.roster:
            if player.agent_id == agent_id:
                return player.team
        raise DataError(f"agent {agent_id} is not on the roster of game {self.game_id}")

    def attacks_right(self, team: str, period: int) -> bool:
        """Whether `team` shoots at the hoop at x = 94 during `period`; sides swap at halftime."""
        home_right = (self.home_hoop_side == 'right') != (period >= 3)
        return home_right if team == self.home_team else not home_right


# ---------------------------------------------------------------------------
# Tracking file format
# ---------------------------------------------------------------------------

def _parse_float(token: str, what: str, line_number: int, source: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise TrackingParseError(f"bad {what} {token!r}", line_number, source)


def _parse_int(token: str, what: str, line_number: int, source: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise TrackingParseError(f"bad {what} {token!r}", line_number, source)


def parse_game_lines(lines: Sequence[str], source: str = '<game>') -> GameRecord:
    header = None
    roster: Dict[int, PlayerInfo] = {}
    hoop_side = None
    frames: List[Frame] = []
    dropped = 0

    for line_number, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        kind = tokens[0]
        if header is None and kind != 'game':
            raise TrackingParseError("file must start with a 'game' header", line_number, source)

        if kind == 'game':
            if header is not None:
                raise TrackingParseError("second 'game' header", line_number, source)
            if len(tokens) != 4:
                raise TrackingParseError("header must be 'game <game-id> <home-team> <away-team>'", line_number, source)
            header = (tokens[1], tokens[2], tokens[3])
        elif kind == 'player':
            if len(tokens) < 3:
                raise TrackingParseError("roster line must be 'player <agent-id> <team> [name]'", line_number, source)
            agent_id = _parse_int(tokens[1], 'agent id', line_number, source)
            team = tokens[2]
            if team not in header[1:]:
                raise TrackingParseError(f"team {team!r} is neither home nor away", line_number, source)
            if agent_id in roster:
                raise TrackingParseError(f"agent {agent_id} listed twice", line_number, source)
            roster[agent_id] = PlayerInfo(agent_id, team, ' '.join(tokens[3:]))
        elif kind == 'hoops':
            if len(tokens) != 2 or tokens[1] not in HOOP_SIDES:
                raise TrackingParseError("hoop line must be 'hoops left|right'", line_number, source)
            hoop_side = tokens[1]
        elif kind == 'f':
            frame = _parse_frame(tokens, roster, line_number, source)
            if frame is None:
                dropped += 1
                continue
            if frames and (frame.period, -frame.game_clock) <= (frames[-1].period, -frames[-1].game_clock):
                logger.warning(f"{source}:{line_number}: frame out of order, dropped")
                dropped += 1
                continue
            frames.append(frame)
        else:
            raise TrackingParseError(f"unknown line type {kind!r}", line_number, source)

    if header is None:
        raise TrackingParseError("empty tracking file", None, source)
    if hoop_side is None:
        raise TrackingParseError("missing 'hoops' line", None, source)
    return GameRecord(
        game_id=header[0],
        home_team=header[1],
        away_team=header[2],
        roster=tuple(roster[k] for k in sorted(roster)),
        home_hoop_side=hoop_side,
        frames=tuple(frames),
        dropped_frames=dropped,
    )


def _parse_frame(tokens: List[str], roster: Dict[int, PlayerInfo], line_number: int,
                 source: str) -> Optional[Frame]:
    if len(tokens) < 6:
        raise TrackingParseError("frame line must be 'f <period> <clock> <bx> <by> <bz> <id,x,y>...'",
                                 line_number, source)
    period = _parse_int(tokens[1], 'period', line_number, source)
    clock = _parse_float(tokens[2], 'game clock', line_number, source)
    ball = tuple(_parse_float(t, 'ball coordinate', line_number, source) for t in tokens[3:6])
    players = []
    for triple in tokens[6:]:
        parts = triple.split(',')
        if len(parts) != 3:
            raise TrackingParseError(f"player entry {triple!r} is not 'id,x,y'", line_number, source)
        agent_id = _parse_int(parts[0], 'agent id', line_number, source)
        if agent_id not in roster:
            raise TrackingParseError(f"agent {agent_id} is not on the roster", line_number, source)
        players.append((agent_id,
                        _parse_float(parts[1], 'x', line_number, source),
                        _parse_float(parts[2], 'y', line_number, source)))
    if len(players) > PLAYERS_ON_COURT:
        raise TrackingParseError(f"{len(players)} players in one frame", line_number, source)
    if len({p[0] for p in players}) != len(players):
        raise TrackingParseError("agent listed twice in one frame", line_number, source)
    if len(players) < PLAYERS_ON_COURT:
        logger.warning(f"{source}:{line_number}: only {len(players)} players, frame dropped")
        return None
    frame = Frame(period, clock, ball, tuple(sorted(players)))
    if not frame.in_bounds():
        logger.warning(f"{source}:{line_number}: coordinates outside the court, frame dropped")
        return None
    return frame


def ingest_game(path: str) -> GameRecord:
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    game = parse_game_lines(lines, source=path)
    logger.debug(f"Ingested {game.game_id}: {game.frame_count} frames, {game.dropped_frames} dropped")
    return game


def _fmt(value: float) -> str:
    return repr(float(value))


def write_game(game: GameRecord, path: str):
    lines = [f"game {game.game_id} {game.home_team} {game.away_team}"]
    for player in game.roster:
        lines.append(f"player {player.agent_id} {player.team} {player.name}".rstrip())
    lines.append(f"hoops {game.home_hoop_side}")
    for frame in game.frames:
        players = ' '.join(f"{agent_id},{_fmt(x)},{_fmt(y)}" for agent_id, x, y in frame.players)
        bx, by, bz = frame.ball
        lines.append(f"f {frame.period} {_fmt(frame.game_clock)} {_fmt(bx)} {_fmt(by)} {_fmt(bz)} {players}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')


def load_games(directory: str, suffix: str = '.track') -> List[GameRecord]:
    paths = sorted(glob.glob(os.path.join(directory, f"*{suffix}")))
    if not paths:
        raise DataError(f"no {suffix} files in {directory}")
    games = [ingest_game(path) for path in paths]
    logger.info(f"Loaded {len(games)} games from {directory}")
    return sorted(games, key=lambda g: g.game_id)


# ---------------------------------------------------------------------------
# Play sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlaySequence:
    """
    T steps of P players plus the ball at 5 Hz. Positions are stored in the
    game's own orientation; `rotated` flips the view by 180 degrees so that
    rotating twice restores every field exactly.
    """
    game_id: str
    start_frame: int
    agent_ids: np.ndarray        # (P,)
    base_player_xy: np.ndarray   # (T+1, P, 2)
    base_ball_xyz: np.ndarray    # (T+1, 3)
    base_frontcourt: np.ndarray  # (T+1, P)
    rotated: bool = False
    player_grid: BinGrid2D = PLAYER_GRID
    ball_grid: BinGrid3D = BALL_GRID
    player_labels: np.ndarray = field(default=None)  # (T, P)
    ball_labels: np.ndarray = field(default=None)    # (T,)

    def __post_init__(self):
        if self.player_labels is None:
            d = self.player_displacements()
            object.__setattr__(self, 'player_labels', bin2d_array(self.player_grid, d[..., 0], d[..., 1]))
        if self.ball_labels is None:
            d = self.ball_displacements()
            object.__setattr__(self, 'ball_labels', bin3d_array(self.ball_grid, d[:, 0], d[:, 1], d[:, 2]))

    @property
    def steps(self) -> int:
        return self.base_player_xy.shape[0] - 1

    @property
    def n_players(self) -> int:
        return self.base_player_xy.shape[1]

    @property
    def sign(self) -> float:
        return -1.0 if self.rotated else 1.0

    @cached_property
    def player_xy(self) -> np.ndarray:
        if not self.rotated:
            return self.base_player_xy
        return np.array([COURT_LENGTH_FT, COURT_WIDTH_FT]) - self.base_player_xy

    @cached_property
    def ball_xyz(self) -> np.ndarray:
        if not self.rotated:
            return self.base_ball_xyz
        rotated = self.base_ball_xyz.copy()
        rotated[:, 0] = COURT_LENGTH_FT - rotated[:, 0]
        rotated[:, 1] = COURT_WIDTH_FT - rotated[:, 1]
        return rotated

    @property
    def frontcourt(self) -> np.ndarray:
        """Per-step frontcourt flags, (T, P)."""
        flags = self.base_frontcourt[:-1]
        return 1 - flags if self.rotated else flags

    def player_displacements(self) -> np.ndarray:
        return self.sign * np.diff(self.base_player_xy, axis=0)

    def ball_displacements(self) -> np.ndarray:
        d = np.diff(self.base_ball_xyz, axis=0)
        d[:, :2] *= self.sign
        return d

    @property
    def frame_span(self) -> Tuple[int, int]:
        return self.start_frame, self.start_frame + DOWNSAMPLE_STRIDE * self.steps

    def describe(self) -> str:
        suffix = ':r' if self.rotated else ''
        return f"{self.game_id}:{self.start_frame}{suffix}"

    def same_as(self, other: 'PlaySequence') -> bool:
        """Field-by-field exact equality."""
        arrays = ('agent_ids', 'base_player_xy', 'base_ball_xyz', 'base_frontcourt',
                  'player_labels', 'ball_labels', 'player_xy', 'ball_xyz', 'frontcourt')
        return (self.game_id == other.game_id and self.start_frame == other.start_frame
                and self.rotated == other.rotated
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def rotate_180(seq: PlaySequence) -> PlaySequence:
    return dataclasses.replace(seq, rotated=not seq.rotated, player_labels=None, ball_labels=None)


def select_players(seq: PlaySequence, slots: Sequence[int]) -> PlaySequence:
    slots = list(slots)
    return dataclasses.replace(
        seq,
        agent_ids=seq.agent_ids[slots],
        base_player_xy=seq.base_player_xy[:, slots],
        base_frontcourt=seq.base_frontcourt[:, slots],
        player_labels=seq.player_labels[:, slots],
    )


def with_agent_ids(seq: PlaySequence, agent_ids: Sequence[int]) -> PlaySequence:
    agent_ids = np.asarray(agent_ids, dtype=np.int64)
    if agent_ids.shape != seq.agent_ids.shape:
        raise UsageError(f"expected {seq.agent_ids.shape[0]} agent ids, got {agent_ids.shape[0]}")
    return dataclasses.replace(seq, agent_ids=agent_ids)


def truncate(seq: PlaySequence, steps: int) -> PlaySequence:
    if not 1 <= steps <= seq.steps:
        raise UsageError(f"cannot truncate a {seq.steps}-step sequence to {steps} steps")
    return dataclasses.replace(
        seq,
        base_player_xy=seq.base_player_xy[:steps + 1],
        base_ball_xyz=seq.base_ball_xyz[:steps + 1],
        base_frontcourt=seq.base_frontcourt[:steps + 1],
        player_labels=seq.player_labels[:steps],
        ball_labels=seq.ball_labels[:steps],
    )


def expand_single_player(sequences: Sequence[PlaySequence]) -> List[PlaySequence]:
    """Every player of every sequence as its own one-player sequence."""
    return [select_players(seq, [slot]) for seq in sequences for slot in range(seq.n_players)]


def window_indices(start: int, steps: int) -> np.ndarray:
    return start + DOWNSAMPLE_STRIDE * np.arange(steps + 1)


def window_problem(game: GameRecord, start: int, steps: int) -> Optional[str]:
    """Why the window starting at `start` cannot become a sequence, or None."""
    end = start + DOWNSAMPLE_STRIDE * steps
    if start < 0 or end >= game.frame_count:
        return 'window runs past the end of the game'
    if not np.all(game.periods[start:end + 1] == game.periods[start]):
        return 'window crosses a period boundary'
    if not np.all(game.ids[start:end + 1] == game.ids[start]):
        return 'substitution inside the window'
    idx = window_indices(start, steps)
    gaps = -np.diff(game.clocks[idx])
    if np.any(np.abs(gaps - STEP_SECONDS) > 0.5 / FRAME_RATE_HZ):
        return 'missing frames inside the window'
    jumps = np.abs(np.diff(game.player_xy[idx], axis=0))
    if np.any(jumps > TELEPORT_LIMIT_FT):
        return 'teleport inside the window'
    return None


def sequence_from_window(game: GameRecord, start: int, steps: int = DEFAULT_STEPS, rotated: bool = False,
                         player_grid: BinGrid2D = PLAYER_GRID, ball_grid: BinGrid3D = BALL_GRID) -> PlaySequence:
    idx = window_indices(start, steps)
    return PlaySequence(
        game_id=game.game_id,
        start_frame=int(start),
        agent_ids=game.ids[start].copy(),
        base_player_xy=game.player_xy[idx],
        base_ball_xyz=game.ball_xyz[idx],
        base_frontcourt=game.frontcourt[idx],
        rotated=rotated,
        player_grid=player_grid,
        ball_grid=ball_grid,
    )


def sample_training_sequence(games: Sequence[GameRecord], rng: np.random.Generator, steps: int = DEFAULT_STEPS,
                             rotate_probability: float = 0.5, player_grid: BinGrid2D = PLAYER_GRID,
                             ball_grid: BinGrid3D = BALL_GRID,
                             max_retries: int = MAX_SAMPLING_RETRIES) -> PlaySequence:
    """Random game, random start, stride-5 downsampling, optional 180 degree rotation."""
    if not games:
        raise UsageError("no games to sample from")
    span = DOWNSAMPLE_STRIDE * steps
    for attempt in range(max_retries):
        game = games[int(rng.integers(len(games)))]
        if game.frame_count <= span:
            continue
        start = int(rng.integers(0, game.frame_count - span))
        problem = window_problem(game, start, steps)
        if problem:
            logger.debug(f"Resampling {game.game_id}:{start}: {problem}")
            continue
        rotated = bool(rng.random() < rotate_probability)
        return sequence_from_window(game, start, steps, rotated, player_grid, ball_grid)
    raise SamplingError(f"no valid {steps}-step window after {max_retries} attempts")


def build_eval_set(games: Sequence[GameRecord], target: int, steps: int = DEFAULT_STEPS,
                   player_grid: BinGrid2D = PLAYER_GRID, ball_grid: BinGrid3D = BALL_GRID) -> List[PlaySequence]:
    """
    ceil(target / N) non-overlapping chunks per game; the first valid window of
    each chunk becomes one unrotated sequence.
    """
    if target < 1:
        raise UsageError(f"evaluation target must be positive, got {target}")
    if not games:
        return []
    chunks = math.ceil(target / len(games))
    window = DOWNSAMPLE_STRIDE * steps + 1
    sequences = []
    for game in games:
        n_chunks = chunks
        if game.frame_count // n_chunks < window:
            n_chunks = game.frame_count // window
            logger.warning(f"Game {game.game_id} is too short for {chunks} chunks, using {n_chunks}")
        if n_chunks == 0:
            continue
        chunk_length = game.frame_count // n_chunks
        for c in range(n_chunks):
            low = c * chunk_length
            for start in range(low, low + chunk_length - window + 1):
                if window_problem(game, start, steps) is None:
                    sequences.append(sequence_from_window(game, start, steps, False, player_grid, ball_grid))
                    break
            else:
                logger.warning(f"Game {game.game_id}: no valid window in chunk {c}")
    return sequences


def split_games(games: Sequence[GameRecord], seed: int, test_fraction: float = 0.05,
                val_fraction: float = 0.05) -> Tuple[List[GameRecord], List[GameRecord], List[GameRecord]]:
    """Test takes test_fraction of the games, validation val_fraction of the rest."""
    if len(games) < 3:
        raise DataError(f"need at least 3 games to split, got {len(games)}")
    ordered = sorted(games, key=lambda g: g.game_id)
    order = np.random.default_rng(seed).permutation(len(ordered))
    n_test = max(1, round(len(ordered) * test_fraction))
    n_val = max(1, round((len(ordered) - n_test) * val_fraction))
    test = [ordered[i] for i in order[:n_test]]
    val = [ordered[i] for i in order[n_test:n_test + n_val]]
    train = [ordered[i] for i in order[n_test + n_val:]]
    logger.info(f"Split {len(ordered)} games into {len(train)}/{len(val)}/{len(test)} train/val/test")
    return train, val, test
