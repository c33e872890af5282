"""One agent's Q-functional: coefficients from a network, values from the basis."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .basis import BasisSpec, feature_matrix, features
from .funcnet import NetworkParams, forward


@dataclass(frozen=True)
class ExplorationConfig:
    """Linear epsilon-greedy schedule plus constant Gaussian action noise.

    ``epsilon_decay_steps=None`` means "20% of the configured training steps",
    resolved by the trainer.
    """

    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None
    gaussian_std: float = 0.1
    action_low: float = -1.0
    action_high: float = 1.0
    candidates_m: int = 128

    def __post_init__(self):
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.gaussian_std < 0:
            raise ValueError("gaussian_std must be >= 0")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be < action_high")
        if self.candidates_m < 1:
            raise ValueError("candidates_m must be >= 1")
        if self.epsilon_decay_steps is not None and self.epsilon_decay_steps < 0:
            raise ValueError("epsilon_decay_steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def epsilon_at(cfg: ExplorationConfig, step: int) -> float:
    decay = cfg.epsilon_decay_steps or 0
    if step >= decay:
        return cfg.epsilon_end
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * step / decay


def evaluate_actions(coeffs, spec: BasisSpec, actions) -> np.ndarray:
    """Q-values of ``m`` actions from one coefficient vector, as ``C_s @ V_s``."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (spec.num_terms,):
        raise ValueError(f"expected {spec.num_terms} coefficients, got shape {c.shape}")
    return c @ feature_matrix(spec, actions)


def batch_evaluate(coeffs: np.ndarray, spec: BasisSpec, actions: np.ndarray) -> np.ndarray:
    """Per-sample candidate values.

    coeffs (b, T) with actions (b, m, d) -> (b, m).
    """
    return np.einsum("bt,bmt->bm", coeffs, features(spec, actions))


def sample_candidates(rng: np.random.Generator, shape, cfg: ExplorationConfig) -> np.ndarray:
    return rng.uniform(cfg.action_low, cfg.action_high, size=shape)


def best_action(
    net: NetworkParams,
    spec: BasisSpec,
    state,
    m: int,
    rng: np.random.Generator,
    action_low: float = -1.0,
    action_high: float = 1.0,
) -> tuple[np.ndarray, float]:
    """Argmax over ``m`` uniform candidate actions; ties go to the lowest index."""
    candidates = rng.uniform(action_low, action_high, size=(m, spec.action_dim))
    q = evaluate_actions(forward(net, state), spec, candidates)
    k = int(np.argmax(q))
    return candidates[k], float(q[k])


def explore_action(
    net: NetworkParams,
    spec: BasisSpec,
    state,
    cfg: ExplorationConfig,
    global_step: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform action with probability epsilon, else greedy plus Gaussian noise, clamped."""
    if rng.random() < epsilon_at(cfg, global_step):
        action = rng.uniform(cfg.action_low, cfg.action_high, size=spec.action_dim)
    else:
        action, _ = best_action(
            net, spec, state, cfg.candidates_m, rng, cfg.action_low, cfg.action_high
        )
        if cfg.gaussian_std > 0:
            action = action + rng.normal(0.0, cfg.gaussian_std, size=spec.action_dim)
    return np.clip(action, cfg.action_low, cfg.action_high)
