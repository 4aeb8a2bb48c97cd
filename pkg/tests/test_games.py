import json

import numpy as np
import pytest

from prefgame.games import (
    GameGenSpec,
    GameValidationError,
    PreferenceGame,
    duality_gap,
    game_value,
    is_interior,
    kl_divergence,
    make_game,
    point_mass,
    uniform_policy,
    validate_game,
    validate_policy,
    win_rate_vector,
)

TWO_GAME = [[0.5, 0.8], [0.2, 0.5]]


def rps():
    return make_game(GameGenSpec(kind="cycle", n=3, seed=0, params={"margin": 0.5}))


def random_game(n, seed):
    return make_game(GameGenSpec(kind="random_skew", n=n, seed=seed))


def random_policy(n, rng):
    return rng.dirichlet(np.ones(n))


class TestValidateGame:
    def test_accepts_valid_matrix(self):
        game = validate_game(TWO_GAME)
        assert game.n == 2
        np.testing.assert_allclose(game.p, TWO_GAME)

    def test_rejects_broken_skew_complement(self):
        with pytest.raises(GameValidationError, match=r"p\[0\]\[1\] \+ p\[1\]\[0\]"):
            validate_game([[0.5, 0.8], [0.3, 0.5]])

    def test_rejects_bad_diagonal(self):
        with pytest.raises(GameValidationError, match="diagonal"):
            validate_game([[0.4, 0.8], [0.2, 0.5]])

    def test_rejects_out_of_range(self):
        with pytest.raises(GameValidationError, match=r"p\[0\]\[1\]"):
            validate_game([[0.5, 1.3], [-0.3, 0.5]])

    def test_rejects_non_square_and_tiny(self):
        with pytest.raises(GameValidationError, match="square"):
            validate_game([[0.5, 0.5]])
        with pytest.raises(GameValidationError, match="n=1"):
            validate_game([[0.5]])


class TestPolicies:
    def test_validate_policy_checks_simplex(self):
        validate_policy([0.25, 0.75])
        with pytest.raises(ValueError, match="sums"):
            validate_policy([0.3, 0.3])
        with pytest.raises(ValueError, match=">= 0"):
            validate_policy([1.2, -0.2])
        with pytest.raises(ValueError, match="2 entries"):
            validate_policy([0.5, 0.5], n=3)

    def test_interiority_cutoff(self):
        assert is_interior(uniform_policy(4))
        assert not is_interior(point_mass(3, 1))


class TestWinRateVector:
    def test_matrix_vector_example(self):
        # oracle: direct arithmetic, 0.5*0.5 + 0.8*0.5 and 0.2*0.5 + 0.5*0.5
        r = win_rate_vector(validate_game(TWO_GAME), [0.5, 0.5])
        np.testing.assert_allclose(r, [0.65, 0.35], atol=1e-15)

    def test_cycle_uniform_is_flat(self):
        r = win_rate_vector(rps(), uniform_policy(3))
        np.testing.assert_allclose(r, [0.5, 0.5, 0.5], atol=1e-15)

    def test_point_mass_reads_column(self):
        r = win_rate_vector(validate_game(TWO_GAME), point_mass(2, 1))
        np.testing.assert_allclose(r, [0.8, 0.5], atol=1e-15)

    def test_linearity(self):
        rng = np.random.default_rng(11)
        game = random_game(6, 4)
        for _ in range(25):
            mu, nu = random_policy(6, rng), random_policy(6, rng)
            alpha = rng.random()
            mixed = alpha * mu + (1 - alpha) * nu
            np.testing.assert_allclose(
                win_rate_vector(game, mixed),
                alpha * win_rate_vector(game, mu) + (1 - alpha) * win_rate_vector(game, nu),
                atol=1e-12,
            )

    def test_stability_inequality(self):
        # |r(mu)_i - r(nu)_i| <= |mu - nu|_1 on random pairs
        rng = np.random.default_rng(12)
        for seed in range(10):
            game = random_game(5, 100 + seed)
            mu, nu = random_policy(5, rng), random_policy(5, rng)
            diff = win_rate_vector(game, mu) - win_rate_vector(game, nu)
            assert np.abs(diff).max() <= np.abs(mu - nu).sum() + 1e-12


class TestGameValue:
    def test_self_play_value_is_half(self):
        rng = np.random.default_rng(21)
        for seed in range(10):
            game = random_game(4, seed)
            pi = random_policy(4, rng)
            assert game_value(game, pi, pi) == pytest.approx(0.5, abs=1e-12)

    def test_single_entry(self):
        game = validate_game(TWO_GAME)
        assert game_value(game, point_mass(2, 0), point_mass(2, 1)) == pytest.approx(0.8)

    def test_uniform_vs_point(self):
        game = validate_game(TWO_GAME)
        assert game_value(game, uniform_policy(2), point_mass(2, 1)) == pytest.approx(0.65)

    def test_complementarity(self):
        rng = np.random.default_rng(22)
        for seed in range(10):
            game = random_game(5, 50 + seed)
            a, b = random_policy(5, rng), random_policy(5, rng)
            assert game_value(game, a, b) + game_value(game, b, a) == pytest.approx(1.0, abs=1e-12)


class TestDualityGap:
    def test_rps_uniform_is_nash(self):
        assert duality_gap(rps(), uniform_policy(3)) == pytest.approx(0.0, abs=1e-15)

    def test_dominant_vertex_is_nash(self):
        assert duality_gap(validate_game(TWO_GAME), point_mass(2, 0)) == pytest.approx(0.0)

    def test_dominated_vertex(self):
        assert duality_gap(validate_game(TWO_GAME), point_mass(2, 1)) == pytest.approx(0.6)

    def test_matches_brute_force_over_vertices(self):
        # linear objectives attain extrema at vertices, so enumerate them
        rng = np.random.default_rng(31)
        for n in (2, 3, 4, 5, 6):
            game = random_game(n, 200 + n)
            pi = random_policy(n, rng)
            best_max = max(game_value(game, point_mass(n, i), pi) for i in range(n))
            best_min = min(game_value(game, pi, point_mass(n, j)) for j in range(n))
            assert duality_gap(game, pi) == pytest.approx(best_max - best_min, abs=1e-12)
            assert duality_gap(game, pi) >= -1e-15

    def test_closed_form_identity(self):
        rng = np.random.default_rng(32)
        for seed in range(20):
            game = random_game(7, 300 + seed)
            pi = random_policy(7, rng)
            r = win_rate_vector(game, pi)
            assert duality_gap(game, pi) == pytest.approx(2 * r.max() - 1, abs=1e-12)


class TestMakeGame:
    def test_bradley_terry_equal_rewards_all_ties(self):
        spec = GameGenSpec(kind="bradley_terry", n=2, seed=0, params={"rewards": [0.0, 0.0]})
        np.testing.assert_allclose(make_game(spec).p, 0.5)

    def test_cycle_margin_half_is_rock_paper_scissors(self):
        game = rps()
        expected = np.array([[0.5, 1.0, 0.0], [0.0, 0.5, 1.0], [1.0, 0.0, 0.5]])
        np.testing.assert_allclose(game.p, expected)

    def test_random_skew_deterministic(self):
        spec = GameGenSpec(kind="random_skew", n=5, seed=7)
        np.testing.assert_array_equal(make_game(spec).p, make_game(spec).p)

    def test_random_skew_seeds_differ(self):
        a = make_game(GameGenSpec(kind="random_skew", n=5, seed=7))
        b = make_game(GameGenSpec(kind="random_skew", n=5, seed=8))
        assert np.abs(a.p - b.p).max() > 1e-3

    def test_bradley_terry_uses_logistic_differences(self):
        rewards = [0.0, 1.0, -0.5]
        game = make_game(GameGenSpec(kind="bradley_terry", n=3, seed=0,
                                     params={"rewards": rewards}))
        for i in range(3):
            for j in range(3):
                expected = 1.0 / (1.0 + np.exp(-(rewards[i] - rewards[j])))
                assert game.p[i, j] == pytest.approx(expected, abs=1e-12)

    def test_cycle_margin_bounds(self):
        with pytest.raises(ValueError, match="margin"):
            make_game(GameGenSpec(kind="cycle", n=3, seed=0, params={"margin": 0.7}))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            GameGenSpec(kind="round_robin", n=3, seed=0)


class TestKLDivergence:
    def test_identical_uniforms(self):
        assert kl_divergence(uniform_policy(4), uniform_policy(4)) == 0.0

    def test_point_mass_vs_uniform_is_log_n(self):
        for n in (2, 5, 17):
            assert kl_divergence(point_mass(n, 0), uniform_policy(n)) == pytest.approx(np.log(n))

    def test_two_point_example(self):
        # frozen: 0.7*log(7/3) + 0.3*log(3/7)
        val = kl_divergence([0.7, 0.3], [0.3, 0.7])
        assert val == pytest.approx(0.3389191441548814, abs=1e-14)

    def test_undefined_when_q_misses_support(self):
        with pytest.raises(ValueError, match="undefined"):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_zero_p_entries_ignored(self):
        assert kl_divergence([0.0, 1.0], [0.0, 1.0]) == 0.0

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            p, q = random_policy(6, rng), random_policy(6, rng)
            assert kl_divergence(p, q) >= 0.0


class TestSerialization:
    def test_game_json_round_trip(self):
        game = random_game(4, 99)
        again = PreferenceGame.from_json(game.to_json())
        np.testing.assert_array_equal(game.p, again.p)
        payload = json.loads(game.to_json())
        assert payload["n"] == 4 and len(payload["p"]) == 4

    def test_genspec_round_trip_keeps_seed(self):
        spec = GameGenSpec(kind="bradley_terry", n=3, seed=123456789,
                           params={"rewards": [0.0, 1.0, 2.0]})
        again = GameGenSpec.from_json(spec.to_json())
        assert again == spec
        assert json.loads(spec.to_json())["seed"] == 123456789
