import logging

import numpy as np
import pytest

from errors import DataError, SamplingError, TrackingParseError, UsageError
from tracking_data import (build_eval_set, expand_single_player, ingest_game, load_games, parse_game_lines,
                           rotate_180, sample_training_sequence, select_players, sequence_from_window,
                           split_games, truncate, window_indices, window_problem, with_agent_ids, write_game)

HEADER = [
    "game g0001 HOM AWY",
] + [f"player {i} {'HOM' if i < 5 else 'AWY'} p{i}" for i in range(10)] + ["hoops right"]


def frame_line(clock, players=None, ball=(47.0, 25.0, 3.0), period=1):
    players = players if players is not None else [(i, 10.0 + i, 20.0) for i in range(10)]
    entries = ' '.join(f"{i},{x},{y}" for i, x, y in players)
    return f"f {period} {clock} {ball[0]} {ball[1]} {ball[2]} {entries}"


class TestParsing:
    def test_minimal_two_frames(self):
        game = parse_game_lines(HEADER + [frame_line(720.0), frame_line(719.96)])
        assert game.frame_count == 2
        assert game.dropped_frames == 0
        assert game.home_team == 'HOM'
        assert game.player_xy.shape == (2, 10, 2)

    def test_out_of_bounds_frame_dropped_with_warning(self, caplog):
        players = [(i, 10.0 + i, 20.0) for i in range(9)] + [(9, 95.0, 20.0)]
        with caplog.at_level(logging.WARNING):
            game = parse_game_lines(HEADER + [frame_line(720.0), frame_line(719.96, players), frame_line(719.92)])
        assert game.frame_count == 2
        assert game.dropped_frames == 1
        assert 'outside the court' in caplog.text

    def test_short_frame_dropped(self):
        players = [(i, 10.0, 20.0) for i in range(9)]
        game = parse_game_lines(HEADER + [frame_line(720.0, players), frame_line(719.96)])
        assert game.frame_count == 1
        assert game.dropped_frames == 1

    def test_player_order_within_frame_is_irrelevant(self):
        players = [(i, 10.0 + i, 20.0 + i) for i in range(10)]
        ordered = parse_game_lines(HEADER + [frame_line(720.0, players)])
        shuffled = parse_game_lines(HEADER + [frame_line(720.0, players[::-1])])
        np.testing.assert_array_equal(ordered.ids, shuffled.ids)
        np.testing.assert_array_equal(ordered.player_xy, shuffled.player_xy)

    def test_unknown_line_type_reports_line_number(self):
        with pytest.raises(TrackingParseError) as info:
            parse_game_lines(HEADER + [frame_line(720.0), "z 1 2 3"])
        assert info.value.line_number == len(HEADER) + 2

    def test_malformed_player_entry(self):
        with pytest.raises(TrackingParseError, match='id,x,y'):
            parse_game_lines(HEADER + [frame_line(720.0) + " 3;4"])

    def test_unknown_agent(self):
        players = [(i, 10.0, 20.0) for i in range(9)] + [(77, 10.0, 20.0)]
        with pytest.raises(TrackingParseError, match='roster'):
            parse_game_lines(HEADER + [frame_line(720.0, players)])

    def test_missing_hoops_line(self):
        with pytest.raises(TrackingParseError, match='hoops'):
            parse_game_lines(HEADER[:-1] + [frame_line(720.0)])

    def test_out_of_order_frame_dropped(self):
        game = parse_game_lines(HEADER + [frame_line(720.0), frame_line(720.0), frame_line(719.96)])
        assert game.frame_count == 2
        assert game.dropped_frames == 1

    def test_write_then_ingest(self, tmp_path, moving_game):
        path = str(tmp_path / 'g.track')
        write_game(moving_game, path)
        again = ingest_game(path)
        assert again.game_id == moving_game.game_id
        assert again.roster == moving_game.roster
        np.testing.assert_array_equal(again.player_xy, moving_game.player_xy)
        np.testing.assert_array_equal(again.ball_xyz, moving_game.ball_xyz)
        np.testing.assert_array_equal(again.clocks, moving_game.clocks)

    def test_load_games_needs_files(self, tmp_path):
        with pytest.raises(DataError):
            load_games(str(tmp_path))


class TestFrontcourt:
    def test_sides_swap_at_halftime(self, game_factory):
        first = game_factory(home_hoop_side='right', period=1)
        third = game_factory(home_hoop_side='right', period=3)
        assert first.frontcourt[0].tolist() == [1] * 5 + [0] * 5
        assert third.frontcourt[0].tolist() == [0] * 5 + [1] * 5
        assert first.attacks_right('HOM', 2) and not first.attacks_right('HOM', 3)
        assert first.attacks_right('AWY', 4)

    def test_team_lookup(self, stationary_game):
        assert stationary_game.team_of(7) == 'AWY'
        with pytest.raises(DataError):
            stationary_game.team_of(42)


class TestSequences:
    def test_stationary_labels(self, stationary_game):
        seq = sequence_from_window(stationary_game, 0, 20)
        assert seq.player_labels.shape == (20, 10)
        assert np.all(seq.player_labels == 60)
        assert np.all(seq.ball_labels == 3429)

    def test_moving_agent_label(self, moving_game):
        seq = sequence_from_window(moving_game, 0, 20)
        assert np.all(seq.player_labels[:, 0] == 61)
        assert np.all(seq.player_labels[:, 1:] == 60)

    def test_rotation_is_an_involution(self, moving_game):
        seq = sequence_from_window(moving_game, 10, 20)
        assert rotate_180(rotate_180(seq)).same_as(seq)
        assert not rotate_180(seq).same_as(seq)

    def test_rotation_maps_court_and_labels(self, moving_game):
        rotated = rotate_180(sequence_from_window(moving_game, 0, 20))
        x, y = rotated.player_xy[0, 1]
        assert (x, y) == (94.0 - 17.0, 50.0 - 13.0)
        # +1 ft in x becomes -1 ft
        assert np.all(rotated.player_labels[:, 0] == 5 * 11 + 4)
        np.testing.assert_array_equal(rotated.frontcourt, 1 - sequence_from_window(moving_game, 0, 20).frontcourt)

    def test_court_center_is_fixed(self, game_factory):
        game = game_factory(player_xy=lambda f, slot: (47.0, 25.0))
        rotated = rotate_180(sequence_from_window(game, 0, 2))
        assert np.all(rotated.player_xy == [47.0, 25.0])
        assert np.all(rotated.ball_xyz[:, :2] == [47.0, 25.0])

    def test_ball_height_unchanged_by_rotation(self, random_sequence):
        np.testing.assert_array_equal(rotate_180(random_sequence).ball_xyz[:, 2], random_sequence.ball_xyz[:, 2])

    def test_window_frames(self, moving_game):
        seq = sequence_from_window(moving_game, 3, 20)
        idx = window_indices(3, 20)
        assert idx.tolist() == list(range(3, 104, 5))
        np.testing.assert_array_equal(seq.base_player_xy, moving_game.player_xy[idx])
        assert seq.frame_span == (3, 103)
        assert seq.describe() == 'g0002:3'

    def test_select_and_expand(self, random_sequence):
        single = select_players(random_sequence, [4])
        assert single.n_players == 1
        np.testing.assert_array_equal(single.player_labels[:, 0], random_sequence.player_labels[:, 4])
        assert len(expand_single_player([random_sequence] * 2)) == 20

    def test_agent_id_swap_keeps_labels(self, random_sequence):
        swapped = with_agent_ids(random_sequence, list(range(20, 30)))
        assert swapped.agent_ids.tolist() == list(range(20, 30))
        np.testing.assert_array_equal(swapped.player_labels, random_sequence.player_labels)
        with pytest.raises(UsageError):
            with_agent_ids(random_sequence, [1, 2])

    def test_truncate(self, random_sequence):
        short = truncate(random_sequence, 1)
        assert short.steps == 1
        np.testing.assert_array_equal(short.player_labels, random_sequence.player_labels[:1])
        with pytest.raises(UsageError):
            truncate(random_sequence, 9)


class TestWindowProblems:
    def test_clean_window(self, stationary_game):
        assert window_problem(stationary_game, 0, 20) is None

    def test_too_short(self, stationary_game):
        assert 'end' in window_problem(stationary_game, 30, 20)

    def test_substitution(self, game_factory):
        game = game_factory(n_frames=121)
        sub = game_factory(n_frames=121, ids=tuple(range(9)) + (10,))
        spliced = type(game)(game.game_id, game.home_team, game.away_team, game.roster + sub.roster[-1:],
                             game.home_hoop_side, game.frames[:60] + sub.frames[60:])
        assert window_problem(spliced, 0, 20) == 'substitution inside the window'

    def test_teleport(self, game_factory):
        game = game_factory(player_xy=lambda f, slot: (10.0 if f < 50 else 40.0, 20.0))
        assert window_problem(game, 0, 20) == 'teleport inside the window'

    def test_missing_frames(self, game_factory):
        game = game_factory(n_frames=140)
        gappy = type(game)(game.game_id, game.home_team, game.away_team, game.roster, game.home_hoop_side,
                           game.frames[:50] + game.frames[60:])
        assert window_problem(gappy, 0, 20) == 'missing frames inside the window'


class TestSampling:
    def test_same_seed_same_sequence(self, small_league):
        a = sample_training_sequence(small_league, np.random.default_rng(5), steps=20)
        b = sample_training_sequence(small_league, np.random.default_rng(5), steps=20)
        assert a.same_as(b)
        game = next(g for g in small_league if g.game_id == a.game_id)
        np.testing.assert_array_equal(a.base_player_xy, game.player_xy[window_indices(a.start_frame, 20)])

    def test_rotation_probability_extremes(self, small_league):
        rng = np.random.default_rng(0)
        assert not any(sample_training_sequence(small_league, rng, 5, 0.0).rotated for _ in range(10))
        assert all(sample_training_sequence(small_league, rng, 5, 1.0).rotated for _ in range(10))

    def test_gives_up_after_retries(self, game_factory):
        with pytest.raises(SamplingError):
            sample_training_sequence([game_factory(n_frames=50)], np.random.default_rng(0), steps=20,
                                     max_retries=5)


class TestEvalSet:
    def test_one_game_four_sequences(self, game_factory):
        sequences = build_eval_set([game_factory(n_frames=420)], target=4, steps=20)
        assert len(sequences) == 4
        spans = sorted(seq.frame_span for seq in sequences)
        assert all(prev[1] < nxt[0] for prev, nxt in zip(spans, spans[1:]))
        assert not any(seq.rotated for seq in sequences)

    def test_chunks_per_game(self, game_factory):
        games = [game_factory(f"g{i:04d}", n_frames=360) for i in range(32)]
        sequences = build_eval_set(games, target=1000, steps=2)
        assert len(sequences) == 32 * 32

    def test_short_game_yields_fewer_chunks(self, game_factory, caplog):
        with caplog.at_level(logging.WARNING):
            sequences = build_eval_set([game_factory(n_frames=250)], target=4, steps=20)
        assert len(sequences) == 2
        assert 'too short' in caplog.text

    def test_same_input_same_set(self, small_league):
        a = build_eval_set(small_league, target=8, steps=10)
        b = build_eval_set(small_league, target=8, steps=10)
        assert len(a) == len(b) > 0
        assert all(x.same_as(y) for x, y in zip(a, b))


class TestSplits:
    def test_disjoint_and_complete(self, game_factory):
        games = [game_factory(f"g{i:04d}", n_frames=2) for i in range(40)]
        train, val, test = split_games(games, seed=7)
        ids = [g.game_id for g in train + val + test]
        assert sorted(ids) == sorted(g.game_id for g in games)
        assert len(set(ids)) == 40
        assert len(test) == 2 and len(val) == 2

    def test_seed_determinism(self, game_factory):
        games = [game_factory(f"g{i:04d}", n_frames=2) for i in range(10)]
        first = [[g.game_id for g in part] for part in split_games(games, seed=1)]
        second = [[g.game_id for g in part] for part in split_games(games[::-1], seed=1)]
        assert first == second

    def test_too_few_games(self, game_factory):
        with pytest.raises(DataError):
            split_games([game_factory(n_frames=2)] * 2, seed=0)
