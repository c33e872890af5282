"""Planar ant: a cheap, deterministic four-leg surrogate for multi-agent locomotion.

Each leg is one agent with a two-component action in [-1, 1]. The second
component engages the leg with the ground, the first pushes. Engaged legs
move the body; legs on the left (+1) and right (-1) steer in opposite
directions. Too little support, or too much left/right imbalance, flips the
body and ends the episode with a large penalty.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

N_LEGS = 4
ACTION_DIM = 2
OBS_DIM = 6
# front-left, back-left, back-right, front-right
SIDE_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])


class EpisodeOverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    thrust_gain: float = 0.05
    dt: float = 0.1
    ctrl_cost_weight: float = 0.005
    support_min: float = 0.2
    imbalance_max: float = 1.5
    stable_reward: float = 0.01
    flip_penalty: float = 100.0
    max_steps: int = 100
    obs_noise: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class MalfunctionSpec:
    """Freeze ``agent``'s leg (effective action (0, 0)) from ``episode`` onward."""

    episode: int
    agent: int = 1
    mode: str = "freeze"

    def __post_init__(self):
        if self.episode < 0:
            raise ValueError("malfunction episode must be >= 0")
        if not 0 <= self.agent < N_LEGS:
            raise ValueError(f"malfunction agent must be in 0..{N_LEGS - 1}, got {self.agent}")
        if self.mode != "freeze":
            raise ValueError(f"unsupported malfunction mode {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class PlanarAnt:
    n_agents = N_LEGS
    action_dim = ACTION_DIM
    obs_dim = OBS_DIM

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self._rng = None
        self.position = np.zeros(2)
        self.prev_action = np.zeros((N_LEGS, ACTION_DIM))
        self.prev_delta = np.zeros(2)
        self.prev_support = 0.0
        self.step_index = 0
        self.flipped = False
        self.done = True

    def _observe(self) -> np.ndarray:
        obs = np.empty((N_LEGS, OBS_DIM))
        delta = np.broadcast_to(self.prev_delta, (N_LEGS, 2))
        noise = self.config.obs_noise
        if noise > 0:
            delta = delta + self._rng.uniform(-noise, noise, size=(N_LEGS, 2))
        obs[:, 0:2] = delta
        obs[:, 2:4] = self.prev_action
        obs[:, 4] = self.prev_support
        obs[:, 5] = SIDE_SIGNS
        return obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        """Start an episode at the origin; ``rng`` drives observation noise for the episode."""
        self._rng = rng
        self.position = np.zeros(2)
        self.prev_action = np.zeros((N_LEGS, ACTION_DIM))
        self.prev_delta = np.zeros(2)
        self.prev_support = 0.0
        self.step_index = 0
        self.flipped = False
        self.done = False
        return self._observe()

    def step(self, joint_action) -> tuple[np.ndarray, float, bool, dict]:
        if self.done:
            raise EpisodeOverError("step() called on a finished episode; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(joint_action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (N_LEGS, ACTION_DIM):
            raise ValueError(f"joint action must have shape {(N_LEGS, ACTION_DIM)}, got {a.shape}")

        engage = np.maximum(0.0, a[:, 1])
        thrust = engage * a[:, 0]
        dx = cfg.thrust_gain * thrust.sum()
        dy = cfg.thrust_gain * (SIDE_SIGNS * thrust).sum()
        support = engage.sum()
        imbalance = (SIDE_SIGNS * engage).sum()
        ctrl = cfg.ctrl_cost_weight * float((a * a).sum())

        self.position = self.position + (dx, dy)
        self.step_index += 1
        self.flipped = bool(support < cfg.support_min or abs(imbalance) > cfg.imbalance_max)
        if self.flipped:
            reward = -cfg.flip_penalty - ctrl
            self.done = True
        else:
            reward = cfg.stable_reward + dx / cfg.dt - ctrl
            self.done = self.step_index >= cfg.max_steps

        self.prev_action = a
        self.prev_delta = np.array([dx, dy])
        self.prev_support = support
        info = {
            "dx": dx,
            "dy": dy,
            "position": self.position.copy(),
            "flipped": self.flipped,
            "effective_action": a,
        }
        return self._observe(), float(reward), self.done, info


class MalfunctionWrapper:
    """Replaces the frozen agent's commanded action with (0, 0) before stepping."""

    def __init__(self, env: PlanarAnt, spec: MalfunctionSpec):
        self.env = env
        self.spec = spec

    def __getattr__(self, name):
        return getattr(self.env, name)

    def reset(self, rng):
        return self.env.reset(rng)

    def step(self, joint_action):
        a = np.array(joint_action, dtype=np.float64)
        a[self.spec.agent] = 0.0
        return self.env.step(a)


def wrap_malfunction(env, spec: MalfunctionSpec | None, current_episode: int):
    """Return ``env`` itself before the trigger episode, a freezing wrapper from it onward."""
    base = env.env if isinstance(env, MalfunctionWrapper) else env
    if spec is None or current_episode < spec.episode:
        return base
    return MalfunctionWrapper(base, spec)
