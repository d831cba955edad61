import numpy as np
import pytest

from errors import EntityIndexError, UsageError
from masking import build_causal_entity_mask, build_custom_mask, group_predicate, index_of


def brute_force(T, K, predicate):
    side = T * K
    allowed = np.zeros((side, side), dtype=bool)
    for t1 in range(T):
        for k1 in range(K):
            for t2 in range(T):
                for k2 in range(K):
                    if t2 <= t1 and (predicate(t1, k1, t2, k2) or (t1, k1) == (t2, k2)):
                        allowed[t1 * K + k1, t2 * K + k2] = True
    return allowed


class TestCausalMask:
    def test_single_step_is_fully_allowed(self):
        mask = build_causal_entity_mask(1, 3)
        assert mask.allowed.shape == (3, 3)
        assert mask.allowed.all()

    def test_two_steps_two_entities(self):
        expected = np.array([[1, 1, 0, 0],
                             [1, 1, 0, 0],
                             [1, 1, 1, 1],
                             [1, 1, 1, 1]], dtype=bool)
        np.testing.assert_array_equal(build_causal_entity_mask(2, 2).allowed, expected)

    def test_entries_against_four_index_oracle(self):
        mask = build_causal_entity_mask(3, 4)
        assert not mask.allows(0, 2, 2, 0)
        assert mask.allows(2, 3, 2, 1)
        for T in range(1, 5):
            for K in range(1, 5):
                np.testing.assert_array_equal(build_causal_entity_mask(T, K).allowed,
                                              brute_force(T, K, lambda *_: True))

    def test_tensor_view_matches_flat_layout(self):
        mask = build_causal_entity_mask(3, 2)
        view = mask.as_tensor()
        assert view.shape == (3, 2, 3, 2)
        assert view[2, 1, 0, 0] and not view[0, 1, 2, 0]

    def test_zero_counts_rejected(self):
        with pytest.raises(UsageError):
            build_causal_entity_mask(0, 3)
        with pytest.raises(UsageError):
            build_causal_entity_mask(2, 0)

    def test_mask_is_read_only(self):
        with pytest.raises(ValueError):
            build_causal_entity_mask(2, 2).allowed[0, 3] = True

    def test_text_dump(self):
        assert build_causal_entity_mask(2, 1).to_text() == "10\n11\n"


class TestIndexOf:
    @pytest.mark.parametrize('t,k,K,expected', [(0, 0, 5, 0), (2, 3, 4, 11), (1, 0, 11, 11)])
    def test_examples(self, t, k, K, expected):
        assert index_of(t, k, K) == expected

    def test_out_of_range(self):
        with pytest.raises(EntityIndexError):
            index_of(0, 4, 4)
        with pytest.raises(EntityIndexError):
            index_of(3, 0, 4, T=3)


class TestCustomMask:
    def test_always_true_equals_causal(self):
        assert build_custom_mask(lambda *_: True, 4, 3) == build_causal_entity_mask(4, 3)

    def test_own_history_only(self):
        mask = build_custom_mask(lambda t1, k1, t2, k2: k1 == k2, 3, 2)
        np.testing.assert_array_equal(mask.allowed, brute_force(3, 2, lambda t1, k1, t2, k2: k1 == k2))
        assert mask.allows(2, 1, 0, 1)
        assert not mask.allows(2, 1, 2, 0)

    def test_two_cliques(self):
        groups = [[0, 0, 1, 1]] * 3
        predicate = group_predicate(groups)
        np.testing.assert_array_equal(build_custom_mask(predicate, 3, 4).allowed, brute_force(3, 4, predicate))

    def test_future_stays_denied_and_self_stays_visible(self):
        mask = build_custom_mask(lambda *_: False, 2, 2)
        np.testing.assert_array_equal(mask.allowed, np.eye(4, dtype=bool))

    def test_evolving_groups(self):
        # entity 1 joins entity 0's group at step 1
        predicate = group_predicate([[0, 1, 1], [0, 0, 1]])
        mask = build_custom_mask(predicate, 2, 3)
        assert not mask.allows(0, 0, 0, 1)
        assert mask.allows(1, 0, 0, 1)
        assert not mask.allows(1, 0, 1, 2)
