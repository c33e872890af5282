import numpy as np
import pytest

from rqf.env import (
    SIDE_SIGNS,
    EnvConfig,
    EpisodeOverError,
    MalfunctionSpec,
    MalfunctionWrapper,
    PlanarAnt,
    wrap_malfunction,
)

QUIET = EnvConfig(obs_noise=0.0)
ALL_ONE = np.ones((4, 2))


def fresh(config=QUIET, seed=0):
    env = PlanarAnt(config)
    obs = env.reset(np.random.default_rng(seed))
    return env, obs


class TestReset:
    def test_noise_free_observation(self):
        _, obs = fresh()
        np.testing.assert_array_equal(obs[0], [0, 0, 0, 0, 0, 1])
        assert obs.shape == (4, 6)

    def test_right_legs_negative_side(self):
        _, obs = fresh()
        np.testing.assert_array_equal(obs[:, 5], [1, 1, -1, -1])

    def test_seeded(self):
        _, a = fresh(EnvConfig(), seed=5)
        _, b = fresh(EnvConfig(), seed=5)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a[:, :2]).max() <= 0.01 and a[:, :2].any()


class TestStep:
    def test_full_push(self):
        env, _ = fresh()
        obs, r, done, info = env.step(ALL_ONE)
        assert r == 0.01 + 2.0 - 0.04
        assert info["dx"] == pytest.approx(0.2) and info["dy"] == 0.0
        assert not done and not info["flipped"]
        np.testing.assert_allclose(obs[0], [0.2, 0.0, 1, 1, 4, 1])

    def test_no_support_flips(self):
        env, _ = fresh()
        _, r, done, info = env.step(np.zeros((4, 2)))
        assert r == -100.0 and done and info["flipped"]

    def test_malfunction_example(self):
        env, _ = fresh()
        wrapped = wrap_malfunction(env, MalfunctionSpec(episode=0, agent=1), current_episode=0)
        _, r, _, info = wrapped.step(ALL_ONE)
        assert info["dx"] == pytest.approx(0.15)
        assert info["dy"] == pytest.approx(-0.05)
        assert r == pytest.approx(1.48, abs=1e-15)

    def test_imbalance_flips(self):
        env, _ = fresh()
        a = np.array([[0, 1], [0, 1], [0, -1], [0, -1.0]])  # left legs only: imbalance 2
        _, r, done, info = env.step(a)
        assert info["flipped"] and done
        assert r == pytest.approx(-100 - 0.005 * 4)

    def test_clamps_input(self):
        env, _ = fresh()
        _, r, _, _ = env.step(5 * ALL_ONE)
        assert r == 0.01 + 2.0 - 0.04

    def test_step_after_done(self):
        env, _ = fresh()
        env.step(np.zeros((4, 2)))
        with pytest.raises(EpisodeOverError):
            env.step(ALL_ONE)

    def test_episode_length_cap(self):
        env, _ = fresh()
        steps = 0
        done = False
        while not done:
            _, _, done, _ = env.step(ALL_ONE)
            steps += 1
        assert steps == 100
        np.testing.assert_allclose(env.position, [20.0, 0.0])

    def test_shape_checked(self):
        env, _ = fresh()
        with pytest.raises(ValueError):
            env.step(np.ones((3, 2)))

    def test_reward_decomposition_random(self):
        rng = np.random.default_rng(0)
        env = PlanarAnt(EnvConfig())
        env.reset(rng)
        checked = 0
        for _ in range(100_000):
            a = rng.uniform(-1, 1, (4, 2))
            _, r, done, info = env.step(a)
            if not info["flipped"]:
                assert r - 0.01 - info["dx"] / 0.1 + 0.005 * float((a * a).sum()) == pytest.approx(0, abs=1e-12)
                assert r == 0.01 + info["dx"] / 0.1 - 0.005 * float((a * a).sum())
                checked += 1
            if done:
                env.reset(rng)
        assert checked > 10_000

    def test_symmetric_actions_no_drift(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            env, _ = fresh()
            a = np.tile(rng.uniform(-1, 1, 2), (4, 1))
            _, _, _, info = env.step(a)
            assert info["dy"] == 0.0

    def test_deterministic_trace(self):
        def run():
            env = PlanarAnt(EnvConfig())
            rng = np.random.default_rng(3)
            env.reset(rng)
            acts = np.random.default_rng(4)
            out = []
            done = False
            while not done:
                obs, r, done, _ = env.step(np.clip(0.7 + acts.normal(0, 0.3, (4, 2)), -1, 1))
                out.append((obs.tobytes(), r))
            return out

        assert run() == run()


class TestMalfunction:
    def test_before_trigger(self):
        env = PlanarAnt(QUIET)
        assert wrap_malfunction(env, MalfunctionSpec(episode=10, agent=0), 9) is env

    def test_after_trigger_zero_contribution(self):
        env = PlanarAnt(QUIET)
        wrapped = wrap_malfunction(env, MalfunctionSpec(episode=10, agent=2), 12)
        assert isinstance(wrapped, MalfunctionWrapper)
        wrapped.reset(np.random.default_rng(0))
        a = np.array([[1, 1], [1, 1], [1, 1], [0.3, 0.8]])
        _, r, _, info = wrapped.step(a)
        np.testing.assert_array_equal(info["effective_action"][2], [0, 0])
        expected_ctrl = 0.005 * (2 + 2 + 0.09 + 0.64)
        assert r == pytest.approx(0.01 + 0.05 * (2 + 0.24) / 0.1 - expected_ctrl)

    @pytest.mark.parametrize("leg", [0, 1])
    def test_frozen_left_leg_drifts_right(self, leg):
        env = PlanarAnt(QUIET)
        wrapped = wrap_malfunction(env, MalfunctionSpec(episode=0, agent=leg), 0)
        wrapped.reset(np.random.default_rng(0))
        _, _, _, info = wrapped.step(ALL_ONE)
        assert info["dy"] <= 0 and SIDE_SIGNS[leg] == 1

    def test_rewrap_does_not_nest(self):
        env = PlanarAnt(QUIET)
        spec = MalfunctionSpec(episode=0, agent=1)
        w1 = wrap_malfunction(env, spec, 0)
        w2 = wrap_malfunction(w1, spec, 1)
        assert w2.env is env

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            MalfunctionSpec(episode=0, agent=4)
        with pytest.raises(ValueError):
            MalfunctionSpec(episode=-1)
