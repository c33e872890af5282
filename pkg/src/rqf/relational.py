"""Relational graphs over agents and the team action-value mixer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


def validate(weights) -> str | None:
    """Return a description of the first violated invariant, or None if valid."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
        return f"weights must be a non-empty square matrix, got shape {w.shape}"
    for i, j in np.ndindex(*w.shape):
        v = w[i, j]
        if not np.isfinite(v):
            return f"non-finite weight at ({i},{j})"
        if v < 0.0 or v > 1.0:
            return f"weight {v} at ({i},{j}) outside [0, 1]"
    return None


@dataclass(frozen=True, eq=False)
class RelationalGraph:
    """Dense weight matrix; ``weights[i, j]`` is the interest agent i places in agent j."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        problem = validate(w)
        if problem:
            raise GraphError(problem)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @property
    def column_sums(self) -> np.ndarray:
        """Total weight each agent's value receives; the gradient of team_q."""
        return self.weights.sum(axis=0)

    def __eq__(self, other):
        return isinstance(other, RelationalGraph) and np.array_equal(self.weights, other.weights)

    @classmethod
    def identity(cls, n: int) -> "RelationalGraph":
        return cls(np.eye(n))

    @classmethod
    def uniform(cls, n: int, weight: float) -> "RelationalGraph":
        return cls(np.full((n, n), weight))

    def to_dict(self) -> dict:
        return {"n_agents": self.n_agents, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RelationalGraph":
        if set(data) != {"n_agents", "weights"}:
            raise GraphError(f"graph must have exactly keys n_agents, weights; got {sorted(data)}")
        graph = cls(np.asarray(data["weights"], dtype=np.float64))
        if graph.n_agents != data["n_agents"]:
            raise GraphError(
                f"n_agents={data['n_agents']} but weights are {graph.n_agents}x{graph.n_agents}"
            )
        return graph


def load_graph(path) -> RelationalGraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise GraphError(f"{path}: graph file must hold a JSON object")
    return RelationalGraph.from_dict(data)


def save_graph(graph: RelationalGraph, path) -> None:
    Path(path).write_text(json.dumps(graph.to_dict(), indent=2) + "\n")


def team_q(graph: RelationalGraph, per_agent_q) -> np.ndarray | float:
    """Sum over edges of ``w_ij * Q_j``.

    ``per_agent_q`` may carry leading batch axes; the last axis indexes agents.
    """
    q = np.asarray(per_agent_q, dtype=np.float64)
    if q.shape[-1:] != (graph.n_agents,):
        raise ValueError(f"expected {graph.n_agents} agent values, got shape {q.shape}")
    out = q @ graph.column_sums
    return float(out) if out.ndim == 0 else out


def malfunction_adjust(graph: RelationalGraph, failed_agent: int) -> RelationalGraph:
    """Copy of ``graph`` in which nobody attributes significance to ``failed_agent``."""
    if not 0 <= failed_agent < graph.n_agents:
        raise IndexError(f"agent index {failed_agent} out of range for {graph.n_agents} agents")
    w = graph.weights.copy()
    w[:, failed_agent] = 0.0
    return RelationalGraph(w)
