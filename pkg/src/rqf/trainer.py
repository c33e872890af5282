"""Training loop for Relational Q-Functionals (RQF) and Independent Q-Functionals (IQF)."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import seeding
from .basis import BasisSpec, features
from .env import EnvConfig, MalfunctionSpec, PlanarAnt, wrap_malfunction
from .funcnet import (
    AdamState,
    NetworkParams,
    adam_step,
    backward,
    forward,
    forward_with_cache,
    init_network,
    save_checkpoint,
    soft_update,
)
from .metrics import EpisodeTrace, EvalSummary, export_traces_csv, fmt, summarize
from .qfunctional import ExplorationConfig, batch_evaluate, best_action, explore_action
from .relational import RelationalGraph, load_graph, malfunction_adjust
from .replay import Batch, InsufficientDataError, ReplayBuffer, Transition

log = logging.getLogger(__name__)

MODES = ("rqf", "iqf")
CURVE_HEADER = ["episode", "train_reward_ma", "eval_mean_reward", "eval_stable_frac", "loss"]


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class TrainConfig:
    """Run configuration. Defaults are the full-scale values; see ``desk_scale``."""

    mode: str = "rqf"
    episodes: int = 60_000
    max_steps: int = 100
    gamma: float = 0.99
    lr: float = 1e-4
    batch_b: int = 512
    update_every: int = 10
    tau: float = 0.01
    target_update: str = "update"
    replay_capacity: int = 500_000
    basis_order: int = 2
    hidden: tuple[int, ...] = (256, 256, 256)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    graph_pre: str | None = None
    graph_post: str | None = None
    malfunction: MalfunctionSpec | None = None
    eval_every: int = 100
    eval_episodes: int = 100
    trace_episodes: int = 10
    ma_window: int = 100
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("mode", self.mode in MODES, f"must be one of {MODES}"),
            ("episodes", self.episodes >= 0, "must be >= 0"),
            ("max_steps", self.max_steps >= 1, "must be >= 1"),
            ("gamma", 0.0 <= self.gamma < 1.0, "must lie in [0, 1)"),
            ("lr", self.lr >= 0, "must be >= 0"),
            ("batch_b", 1 <= self.batch_b <= self.replay_capacity, "must be in 1..replay_capacity"),
            ("update_every", self.update_every >= 1, "must be >= 1"),
            ("tau", 0.0 <= self.tau <= 1.0, "must lie in [0, 1]"),
            ("target_update", self.target_update in ("update", "step"), "must be 'update' or 'step'"),
            ("basis_order", self.basis_order >= 1, "must be >= 1"),
            ("hidden", all(h >= 1 for h in self.hidden), "layer sizes must be >= 1"),
            ("eval_every", self.eval_every >= 1, "must be >= 1"),
            ("eval_episodes", self.eval_episodes >= 1, "must be >= 1"),
            ("ma_window", self.ma_window >= 1, "must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)

    @property
    def spec(self) -> BasisSpec:
        return BasisSpec(self.basis_order, PlanarAnt.action_dim)

    @property
    def env_config(self) -> EnvConfig:
        return replace(self.env, max_steps=self.max_steps)

    @property
    def resolved_exploration(self) -> ExplorationConfig:
        if self.exploration.epsilon_decay_steps is not None:
            return self.exploration
        return replace(
            self.exploration, epsilon_decay_steps=int(0.2 * self.episodes * self.max_steps)
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["env"].pop("max_steps")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Build from a JSON-style dict; unknown keys raise ``ConfigError``."""
        data = dict(data)
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown key")
        sub = {
            "exploration": (ExplorationConfig, {f.name for f in fields(ExplorationConfig)}),
            "env": (EnvConfig, EnvConfig.keys() - {"max_steps"}),
            "malfunction": (MalfunctionSpec, {f.name for f in fields(MalfunctionSpec)}),
        }
        for key, (typ, allowed) in sub.items():
            block = data.get(key)
            if block is None:
                continue
            if not isinstance(block, dict):
                raise ConfigError(key, "must be an object")
            for k in block:
                if k not in allowed:
                    raise ConfigError(f"{key}.{k}", "unknown key")
            try:
                data[key] = typ(**block)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from exc
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """Scaled-down setting that trains on one laptop core in minutes."""
        base = dict(
            episodes=2000,
            gamma=0.9,
            batch_b=64,
            hidden=(64, 64),
            replay_capacity=50_000,
            eval_every=100,
            eval_episodes=20,
            exploration=ExplorationConfig(epsilon_decay_steps=10_000),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class Team:
    """Mutable per-agent slots: prediction nets, target nets, optimizer states."""

    preds: list[NetworkParams]
    targets: list[NetworkParams]
    opt: list[AdamState]

    @classmethod
    def create(cls, n_agents: int, obs_dim: int, hidden, spec: BasisSpec, rng) -> "Team":
        preds = [init_network(obs_dim, hidden, spec.num_terms, rng) for _ in range(n_agents)]
        return cls(preds, list(preds), [AdamState.zeros_like(p) for p in preds])

    def soft_update(self, tau: float) -> None:
        self.targets = [soft_update(t, p, tau) for t, p in zip(self.targets, self.preds)]


def update_step(
    batch: Batch,
    team: Team,
    graph: RelationalGraph | None,
    spec: BasisSpec,
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One network update on a sampled batch. ``graph=None`` selects IQF.

    RQF minimises the mean squared TD error of the mixed team value; IQF
    minimises each agent's own TD error and returns the summed loss. Target
    maxima use ``candidates_m`` fresh uniform actions per agent per sample,
    drawn agent by agent from ``rng``.
    """
    b = len(batch)
    n = len(team.preds)
    expl = config.exploration
    m = expl.candidates_m

    q_pred = np.empty((b, n))
    caches, feats = [], []
    q_best = np.empty((b, n))
    for j in range(n):
        coeffs, acts = forward_with_cache(team.preds[j], batch.obs[:, j])
        v = features(spec, batch.action[:, j])
        q_pred[:, j] = np.einsum("bt,bt->b", coeffs, v)
        caches.append(acts)
        feats.append(v)
        cands = rng.uniform(expl.action_low, expl.action_high, size=(b, m, spec.action_dim))
        q_next = batch_evaluate(forward(team.targets[j], batch.next_obs[:, j]), spec, cands)
        q_best[:, j] = q_next.max(axis=1)

    bootstrap = config.gamma * (1.0 - batch.done)
    if graph is not None:
        if graph.n_agents != n:
            raise ValueError(f"graph has {graph.n_agents} agents, team has {n}")
        w = graph.column_sums
        y = batch.reward + bootstrap * (q_best @ w)
        td = y - q_pred @ w
        loss = float(np.mean(td**2))
        dq = (-2.0 / b) * td[:, None] * w[None, :]
    else:
        y = batch.reward[:, None] + bootstrap[:, None] * q_best
        td = y - q_pred
        loss = float(np.sum(np.mean(td**2, axis=0)))
        dq = (-2.0 / b) * td

    for j in range(n):
        if graph is not None and w[j] == 0.0:
            # detached from the loss: no optimizer step, so parameters stay put
            continue
        grads = backward(team.preds[j], caches[j], dq[:, j : j + 1] * feats[j])
        team.preds[j], team.opt[j] = adam_step(team.preds[j], team.opt[j], grads, config.lr)
    return loss


def greedy_joint_action(preds, spec, obs, m, rng, low=-1.0, high=1.0) -> np.ndarray:
    return np.stack(
        [best_action(p, spec, obs[j], m, rng, low, high)[0] for j, p in enumerate(preds)]
    )


def evaluate_greedy(
    preds: list[NetworkParams],
    env,
    episodes: int,
    rng: np.random.Generator,
    spec: BasisSpec,
    exploration: ExplorationConfig | None = None,
) -> EvalSummary:
    """Run ``episodes`` episodes with no exploration and summarise them."""
    expl = exploration or ExplorationConfig()
    traces = []
    for ep in range(episodes):
        obs = env.reset(rng)
        positions = [env.position.copy()]
        rewards, actions = [], []
        done = False
        info = {"flipped": False}
        while not done:
            a = greedy_joint_action(
                preds, spec, obs, expl.candidates_m, rng, expl.action_low, expl.action_high
            )
            obs, r, done, info = env.step(a)
            positions.append(info["position"])
            rewards.append(r)
            actions.append(a)
        traces.append(
            EpisodeTrace(ep, np.array(positions), np.array(rewards), np.array(actions), info["flipped"])
        )
    return summarize(traces)


@dataclass
class RunArtifacts:
    config: TrainConfig
    team: Team
    curve: list[dict]
    evals: list[tuple[int, EvalSummary]]
    report: dict
    initial_preds: list[NetworkParams]
    files: dict[str, Path] = field(default_factory=dict)


def resolve_graphs(config: TrainConfig, n_agents: int) -> tuple[RelationalGraph | None, RelationalGraph | None]:
    """Pre- and post-malfunction graphs; both None in IQF mode."""
    if config.mode == "iqf":
        return None, None
    pre = load_graph(config.graph_pre) if config.graph_pre else RelationalGraph.identity(n_agents)
    if pre.n_agents != n_agents:
        raise ConfigError("graph_pre", f"graph has {pre.n_agents} agents, env has {n_agents}")
    if config.graph_post:
        post = load_graph(config.graph_post)
        if post.n_agents != n_agents:
            raise ConfigError("graph_post", f"graph has {post.n_agents} agents, env has {n_agents}")
    elif config.malfunction is not None:
        post = malfunction_adjust(pre, config.malfunction.agent)
    else:
        post = pre
    return pre, post


def _curve_row(episode, train_ma, summary: EvalSummary | None, loss) -> dict:
    return {
        "episode": episode,
        "train_reward_ma": train_ma,
        "eval_mean_reward": None if summary is None else summary.mean_reward,
        "eval_stable_frac": None if summary is None else summary.stable_fraction,
        "loss": loss,
    }


def write_curve_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for r in rows:
            w.writerow(
                [r["episode"]] + ["" if r[k] is None else fmt(r[k]) for k in CURVE_HEADER[1:]]
            )


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected curve header {reader.fieldnames}")
        return [
            {
                "episode": int(r["episode"]),
                **{k: (float(r[k]) if r[k] != "" else None) for k in CURVE_HEADER[1:]},
            }
            for r in reader
        ]


def train(config: TrainConfig, out_dir=None) -> RunArtifacts:
    """Run the full training loop; write artifacts under ``out_dir`` when given."""
    spec = config.spec
    expl = config.resolved_exploration
    n, obs_dim = PlanarAnt.n_agents, PlanarAnt.obs_dim
    graph_pre, graph_post = resolve_graphs(config, n)
    graph = graph_pre

    init_rng = seeding.stream(config.seed, "init")
    env_rng = seeding.stream(config.seed, "env")
    explore_rng = seeding.stream(config.seed, "explore")
    sample_rng = seeding.stream(config.seed, "sample")
    eval_rng = seeding.stream(config.seed, "eval")

    team = Team.create(n, obs_dim, config.hidden, spec, init_rng)
    initial_preds = list(team.preds)
    buffer = ReplayBuffer(config.replay_capacity, n, obs_dim, spec.action_dim)
    base_env = PlanarAnt(config.env_config)
    env = base_env
    malf = config.malfunction

    files: dict[str, Path] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["checkpoint_initial"] = out / "checkpoint_initial.rqf"
        save_checkpoint(files["checkpoint_initial"], team.preds)

    train_rewards: list[float] = []
    curve: list[dict] = []
    evals: list[tuple[int, EvalSummary]] = []
    before: EvalSummary | None = None
    before_preds: list[NetworkParams] | None = None
    global_step = 0

    for ep in range(config.episodes):
        if malf is not None and ep == malf.episode:
            if evals:
                before = evals[-1][1]
            before_preds = list(team.preds)
            env = wrap_malfunction(base_env, malf, ep)
            graph = graph_post
            log.info("episode %d: malfunction on agent %d", ep, malf.agent)

        obs = env.reset(env_rng)
        ep_reward = 0.0
        losses = []
        done = False
        while not done:
            action = np.stack(
                [
                    explore_action(team.preds[j], spec, obs[j], expl, global_step, explore_rng)
                    for j in range(n)
                ]
            )
            next_obs, reward, done, _ = env.step(action)
            buffer.push(Transition(obs, action, reward, next_obs, done))
            obs = next_obs
            ep_reward += reward
            global_step += 1
            if global_step % config.update_every == 0 and len(buffer) >= config.batch_b:
                batch = buffer.sample(config.batch_b, sample_rng)
                losses.append(update_step(batch, team, graph, spec, config, sample_rng))
                if config.target_update == "update":
                    team.soft_update(config.tau)
            if config.target_update == "step":
                team.soft_update(config.tau)

        train_rewards.append(ep_reward)
        train_ma = float(np.mean(train_rewards[-config.ma_window :]))
        summary = None
        if (ep + 1) % config.eval_every == 0:
            eval_env = wrap_malfunction(PlanarAnt(config.env_config), malf, ep)
            summary = evaluate_greedy(team.preds, eval_env, config.eval_episodes, eval_rng, spec, expl)
            evals.append((ep, summary))
            log.info(
                "episode %d: train MA %.2f, eval %.2f, stable %.2f",
                ep + 1, train_ma, summary.mean_reward, summary.stable_fraction,
            )
        curve.append(
            _curve_row(ep, train_ma, summary, float(np.mean(losses)) if losses else None)
        )

    after = None
    if malf is not None and config.episodes > malf.episode:
        after = evals[-1][1] if evals and evals[-1][0] >= malf.episode else None
    elif evals:
        before = evals[-1][1]
        before_preds = list(team.preds)

    report = {
        "mode": config.mode,
        "seed": config.seed,
        "episodes": config.episodes,
        "malfunction": None if malf is None else malf.to_dict(),
        "before": None if before is None else before.to_dict(),
        "after": None if after is None else after.to_dict(),
        "final_train_reward_ma": curve[-1]["train_reward_ma"] if curve else None,
    }

    if out_dir is not None:
        files["curve"] = out / "curve.csv"
        write_curve_csv(curve, files["curve"])
        files["checkpoint_final"] = out / "checkpoint_final.rqf"
        save_checkpoint(files["checkpoint_final"], team.preds)
        if malf is not None and before_preds is not None:
            files["checkpoint_before"] = out / "checkpoint_before.rqf"
            save_checkpoint(files["checkpoint_before"], before_preds)
        for phase, s in (("before", before), ("after", after)):
            if s is not None:
                files[f"trajectories_{phase}"] = out / f"trajectories_{phase}.csv"
                export_traces_csv(s.traces[: config.trace_episodes], files[f"trajectories_{phase}"])
        files["report"] = out / "report.json"
        files["report"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    return RunArtifacts(config, team, curve, evals, report, initial_preds, files)
