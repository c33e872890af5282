import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rqf.relational import (
    GraphError,
    RelationalGraph,
    load_graph,
    malfunction_adjust,
    save_graph,
    team_q,
    validate,
)

Q = np.array([1.0, 2.0, 3.0, 4.0])
weights4 = arrays(np.float64, (4, 4), elements=st.floats(0, 1))
values4 = arrays(np.float64, 4, elements=st.floats(-1e3, 1e3))


class TestTeamQ:
    def test_identity_is_sum(self):
        assert team_q(RelationalGraph.identity(4), Q) == 10.0

    def test_single_edge(self):
        w = np.zeros((4, 4))
        w[0, 1] = 0.5  # w_12 in 1-based indexing
        assert team_q(RelationalGraph(w), Q) == 1.0

    def test_uniform_complete(self):
        assert team_q(RelationalGraph.uniform(4, 0.25), Q) == 10.0

    def test_matches_double_sum(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(0, 1, (4, 4))
        expected = sum(w[i, j] * Q[j] for i in range(4) for j in range(4))
        assert team_q(RelationalGraph(w), Q) == pytest.approx(expected, rel=1e-14)

    def test_batched(self):
        g = RelationalGraph(np.random.default_rng(1).uniform(0, 1, (3, 3)))
        qs = np.random.default_rng(2).normal(size=(7, 3))
        np.testing.assert_allclose(team_q(g, qs), [team_q(g, q) for q in qs])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            team_q(RelationalGraph.identity(4), [1.0, 2.0])

    @given(weights4, values4, values4, st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, w, q1, q2, a, b):
        g = RelationalGraph(w)
        lhs = team_q(g, a * q1 + b * q2)
        rhs = a * team_q(g, q1) + b * team_q(g, q2)
        assert lhs == pytest.approx(rhs, abs=1e-8 * (1 + abs(rhs)))

    @given(values4)
    def test_identity_equals_sum(self, q):
        assert team_q(RelationalGraph.identity(4), q) == pytest.approx(q.sum(), abs=1e-9)

    @given(weights4)
    def test_gradient_is_column_sum(self, w):
        g = RelationalGraph(w)
        h = 1e-3
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd = (team_q(g, Q + e) - team_q(g, Q - e)) / (2 * h)
            assert fd == pytest.approx(w[:, j].sum(), abs=1e-9)


class TestMalfunctionAdjust:
    def test_identity_drops_agent(self):
        g = malfunction_adjust(RelationalGraph.identity(4), 2)
        q = Q.copy()
        base = team_q(g, q)
        q[2] = 1e6
        assert team_q(g, q) == base
        assert g.column_sums[2] == 0.0

    def test_idempotent(self):
        g = malfunction_adjust(RelationalGraph.identity(4), 1)
        assert malfunction_adjust(g, 1) == g

    def test_uniform_drop(self):
        g = RelationalGraph.uniform(4, 0.25)
        q = np.array([5.0, 1.0, 1.0, 1.0])
        assert team_q(g, q) - team_q(malfunction_adjust(g, 0), q) == 5.0

    def test_other_entries_untouched(self):
        w = np.random.default_rng(3).uniform(0, 1, (4, 4))
        adj = malfunction_adjust(RelationalGraph(w), 3).weights
        np.testing.assert_array_equal(adj[:, :3], w[:, :3])
        assert not adj[:, 3].any()

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            malfunction_adjust(RelationalGraph.identity(4), 4)

    @given(weights4, st.integers(0, 3), values4, st.floats(-1e3, 1e3))
    def test_invariant_to_failed_value(self, w, k, q, new):
        g = malfunction_adjust(RelationalGraph(w), k)
        q2 = q.copy()
        q2[k] = new
        assert team_q(g, q2) == team_q(g, q)


class TestValidate:
    def test_over_one(self):
        w = np.eye(4)
        w[0, 1] = 1.2
        assert "(0,1)" in validate(w)

    def test_negative(self):
        w = np.eye(4)
        w[2, 3] = -0.1
        msg = validate(w)
        assert "(2,3)" in msg and "outside" in msg

    def test_ok(self):
        assert validate(np.eye(4)) is None

    def test_non_finite_and_shape(self):
        w = np.eye(3)
        w[1, 1] = np.nan
        assert "non-finite" in validate(w)
        assert "square" in validate(np.ones((2, 3)))

    def test_constructor_rejects(self):
        with pytest.raises(GraphError):
            RelationalGraph(np.full((2, 2), 2.0))

    def test_immutable(self):
        g = RelationalGraph.identity(2)
        with pytest.raises(ValueError):
            g.weights[0, 0] = 0.0


class TestGraphFile:
    def test_round_trip(self, tmp_path):
        g = RelationalGraph(np.random.default_rng(4).uniform(0, 1, (4, 4)))
        save_graph(g, tmp_path / "g.json")
        assert load_graph(tmp_path / "g.json") == g
        data = json.loads((tmp_path / "g.json").read_text())
        assert data["n_agents"] == 4 and len(data["weights"]) == 4

    def test_rejects_mismatched_count(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"n_agents": 3, "weights": np.eye(4).tolist()}))
        with pytest.raises(GraphError, match="n_agents"):
            load_graph(p)

    def test_rejects_extra_keys(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"n_agents": 1, "weights": [[1.0]], "name": "x"}))
        with pytest.raises(GraphError):
            load_graph(p)
