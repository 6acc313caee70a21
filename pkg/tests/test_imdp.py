"""Interval-MDP inner optimization and robust value iteration.

The ordering method for the inner problem is checked against scipy linprog
on random feasible interval rows; value iteration is checked against a
literal Jacobi iteration whose inner step is an LP solve per state-action.
"""

from dataclasses import dataclass

import numpy as np
import pytest
from scipy.optimize import linprog

from nndm_synth.geometry import HyperRect
from nndm_synth.imdp import (
    Imdp,
    _row_extreme,
    evaluate_strategy_upper,
    extreme_distribution,
    extreme_expectation,
    robust_value_iteration,
)
from nndm_synth.transitions import TransitionBoundRow


def lp_extreme(vals, lo, up, maximize):
    c = -np.asarray(vals, float) if maximize else np.asarray(vals, float)
    res = linprog(c, A_eq=np.ones((1, len(vals))), b_eq=[1.0],
                  bounds=np.column_stack([lo, up]), method="highs")
    assert res.status == 0
    return -res.fun if maximize else res.fun


def random_bounds(rng, k):
    p = rng.dirichlet(np.ones(k))
    lo = np.clip(p - rng.uniform(0, 0.4, k), 0.0, 1.0)
    up = np.clip(p + rng.uniform(0, 0.4, k), 0.0, 1.0)
    return lo, up


class TestExtremeDistribution:
    def test_hand_case_minimize(self):
        gamma = extreme_distribution(
            np.array([0.1, 0.2, 0.3]), np.array([0.5, 0.6, 0.7]),
            np.array([1.0, 2.0, 3.0]))
        assert np.allclose(gamma, [0.5, 0.2, 0.3], atol=1e-15)

    def test_hand_case_maximize(self):
        gamma = extreme_distribution(
            np.array([0.1, 0.2, 0.3]), np.array([0.5, 0.6, 0.7]),
            np.array([1.0, 2.0, 3.0]), maximize=True)
        assert np.allclose(gamma, [0.1, 0.2, 0.7], atol=1e-15)

    def test_value_ties_resolve_to_lower_index(self):
        lo, up = np.zeros(3), np.ones(3)
        g_min = extreme_distribution(lo, up, np.array([1.0, 1.0, 0.0]))
        assert np.array_equal(g_min, [0.0, 0.0, 1.0])
        g_max = extreme_distribution(lo, up, np.array([1.0, 1.0, 0.0]), maximize=True)
        assert np.array_equal(g_max, [1.0, 0.0, 0.0])

    def test_zero_budget_returns_lower(self):
        lo = np.array([0.4, 0.6])
        gamma = extreme_distribution(lo, np.array([0.9, 0.9]), np.array([0.0, 1.0]))
        assert np.array_equal(gamma, lo)

    def test_output_always_feasible(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            k = int(rng.integers(2, 9))
            lo, up = random_bounds(rng, k)
            vals = rng.normal(0, 1, k)
            for maximize in (False, True):
                g = extreme_distribution(lo, up, vals, maximize)
                assert np.all(g >= lo - 1e-12) and np.all(g <= up + 1e-12)
                assert g.sum() == pytest.approx(1.0, abs=1e-12)

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="matching shapes"):
            extreme_distribution(np.zeros(2), np.ones(3), np.ones(3))
        with pytest.raises(ValueError, match="lower <= upper"):
            extreme_distribution(np.array([0.5]), np.array([0.2]), np.array([1.0]))
        with pytest.raises(ValueError, match="feasible"):
            extreme_distribution(np.array([0.6, 0.6]), np.array([0.7, 0.7]), np.zeros(2))
        with pytest.raises(ValueError, match="feasible"):
            extreme_distribution(np.array([0.1, 0.1]), np.array([0.3, 0.3]), np.zeros(2))


class TestExtremeExpectation:
    def test_matches_linprog(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            k = int(rng.integers(2, 10))
            lo, up = random_bounds(rng, k)
            vals = rng.normal(0, 2, k)
            for maximize in (False, True):
                got = extreme_expectation(lo, up, vals, maximize)
                want = lp_extreme(vals, lo, up, maximize)
                assert got == pytest.approx(want, abs=1e-8)

    def test_row_extreme_equals_public(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            k = int(rng.integers(2, 8))
            lo, up = random_bounds(rng, k)
            vals = rng.normal(0, 1, k)
            for maximize in (False, True):
                fast = _row_extreme(vals, lo, up, float(lo.sum()), maximize)
                ref = extreme_expectation(lo, up, vals, maximize)
                assert fast == pytest.approx(ref, abs=1e-13)


@dataclass
class FakeProduct:
    accepting: np.ndarray
    sink: np.ndarray
    rows: dict
    num_actions: int

    @property
    def num_states(self) -> int:
        return len(self.accepting)

    def row(self, s, a):
        return self.rows[(s, a)]


def tiny_chain(extra_action=False):
    # state 0 live, 1 accepting, 2 sink
    accepting = np.array([False, True, False])
    sink = np.array([False, False, True])
    rows = {
        (0, 0): (np.array([1, 2]), np.array([0.3, 0.2]), np.array([0.7, 0.6])),
    }
    n_actions = 1
    if extra_action:
        rows[(0, 1)] = (np.array([1, 2]), np.array([0.5, 0.1]), np.array([0.8, 0.5]))
        n_actions = 2
    return FakeProduct(accepting, sink, rows, n_actions)


def random_product(seed, n_live=10, n_actions=2, degenerate=False):
    """Random interval MDP whose rows always send mass toward a frozen state,
    so iteration contracts quickly."""
    rng = np.random.default_rng(seed)
    n = n_live + 2
    accepting = np.zeros(n, bool)
    accepting[n_live] = True
    sink = np.zeros(n, bool)
    sink[n_live + 1] = True
    rows = {}
    for s in range(n_live):
        for a in range(n_actions):
            k = int(rng.integers(3, 6))
            others = rng.choice(n_live, size=k - 1, replace=False)
            frozen = n_live + int(rng.integers(0, 2))
            targets = np.sort(np.r_[others, frozen]).astype(np.int64)
            p = 0.4 * (targets == frozen) + 0.6 * rng.dirichlet(np.ones(k))
            if degenerate:
                lo = up = p
            else:
                lo = p * rng.uniform(0.5, 1.0, k)
                up = p + (1.0 - p) * rng.uniform(0.0, 0.5, k)
            rows[(s, a)] = (targets, lo, up)
    return FakeProduct(accepting, sink, rows, n_actions)


def jacobi_lp_values(product, strategy=None, sweeps=600, tol=1e-12):
    """Literal reference iteration: each inner step is an LP. Pessimistic
    maximin without a strategy; optimistic evaluation with one."""
    frozen = product.accepting | product.sink
    V = product.accepting.astype(float)
    for _ in range(sweeps):
        new = V.copy()
        for s in range(product.num_states):
            if frozen[s]:
                continue
            if strategy is None:
                new[s] = max(
                    lp_extreme(V[t], lo, up, maximize=False)
                    for t, lo, up in (product.row(s, a) for a in range(product.num_actions))
                )
            else:
                t, lo, up = product.row(s, int(strategy[s]))
                new[s] = lp_extreme(V[t], lo, up, maximize=True)
        moved = float(np.max(np.abs(new - V)))
        V = new
        if moved < tol:
            break
    return V


class TestValueIteration:
    def test_hand_chain_pessimistic(self):
        res = robust_value_iteration(tiny_chain(), tol=1e-12)
        assert res.converged
        assert res.values[0] == pytest.approx(0.4, abs=1e-12)
        assert res.values[1] == 1.0 and res.values[2] == 0.0

    def test_hand_chain_optimistic(self):
        prod = tiny_chain()
        res = evaluate_strategy_upper(prod, np.zeros(3, dtype=np.int64), tol=1e-12)
        assert res.values[0] == pytest.approx(0.7, abs=1e-12)

    def test_strategy_picks_better_action(self):
        res = robust_value_iteration(tiny_chain(extra_action=True), tol=1e-12)
        assert res.values[0] == pytest.approx(0.5, abs=1e-12)
        assert res.strategy[0] == 1

    def test_action_tie_prefers_lowest_index(self):
        prod = tiny_chain()
        prod.rows[(0, 1)] = prod.rows[(0, 0)]
        prod.num_actions = 2
        res = robust_value_iteration(prod, tol=1e-12)
        assert res.strategy[0] == 0

    def test_frozen_states_never_move(self):
        res = robust_value_iteration(tiny_chain(), tol=1e-12)
        assert res.values[1] == 1.0
        assert res.values[2] == 0.0

    def test_matches_lp_oracle(self):
        for seed in (3, 11, 29):
            prod = random_product(seed)
            got = robust_value_iteration(prod, tol=1e-10, max_sweeps=5000)
            assert got.converged
            want = jacobi_lp_values(prod)
            assert np.max(np.abs(got.values - want)) < 1e-6

    def test_strategy_evaluation_matches_lp_oracle(self):
        prod = random_product(7)
        res = robust_value_iteration(prod, tol=1e-10)
        upper = evaluate_strategy_upper(prod, res.strategy, tol=1e-10)
        want = jacobi_lp_values(prod, strategy=res.strategy)
        assert np.max(np.abs(upper.values - want)) < 1e-6

    def test_lower_never_exceeds_upper(self):
        for seed in (2, 5):
            prod = random_product(seed)
            res = robust_value_iteration(prod, tol=1e-10)
            upper = evaluate_strategy_upper(prod, res.strategy, tol=1e-10)
            assert np.all(res.values <= upper.values + 1e-9)

    def test_degenerate_intervals_reduce_to_plain_mdp(self):
        prod = random_product(13, degenerate=True)
        got = robust_value_iteration(prod, tol=1e-10)
        # plain value iteration: the only feasible distribution is p itself
        frozen = prod.accepting | prod.sink
        V = prod.accepting.astype(float)
        for _ in range(2000):
            new = V.copy()
            for s in range(prod.num_states):
                if frozen[s]:
                    continue
                new[s] = max(
                    float(lo @ V[t])
                    for t, lo, _ in (prod.row(s, a) for a in range(prod.num_actions))
                )
            moved = float(np.max(np.abs(new - V)))
            V = new
            if moved < 1e-13:
                break
        assert np.max(np.abs(got.values - V)) < 2e-6

    def test_deterministic_across_runs(self):
        prod = random_product(19)
        a = robust_value_iteration(prod, tol=1e-8)
        b = robust_value_iteration(prod, tol=1e-8)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.strategy, b.strategy)
        assert a.sweeps == b.sweeps


def _mk_row(targets, lower, upper, ul=0.0, uu=0.0):
    return TransitionBoundRow(
        source=0, action="a0",
        targets=np.asarray(targets, dtype=np.int64),
        lower=np.asarray(lower, float), upper=np.asarray(upper, float),
        unsafe_lower=ul, unsafe_upper=uu,
        hull=HyperRect([0.0, 0.0], [1.0, 1.0]),
    )


class TestImdpValidate:
    labels = [frozenset(), frozenset({"goal"})]

    def _imdp(self, row):
        return Imdp(actions=("a0",), labels=self.labels, rows={(0, 0): row}, num_cells=2)

    def test_valid_row_passes(self):
        self._imdp(_mk_row([0, 1], [0.2, 0.3], [0.6, 0.7], uu=0.1)).validate()

    def test_label_count_mismatch(self):
        bad = Imdp(actions=("a0",), labels=[frozenset()], rows={}, num_cells=2)
        with pytest.raises(ValueError, match="label"):
            bad.validate()

    def test_probability_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            self._imdp(_mk_row([0, 1], [-0.1, 0.3], [0.6, 1.0])).validate()

    def test_lower_exceeds_upper(self):
        with pytest.raises(ValueError, match="exceeds"):
            self._imdp(_mk_row([0, 1], [0.7, 0.3], [0.6, 1.0])).validate()

    def test_infeasible_sums(self):
        with pytest.raises(ValueError, match="infeasible"):
            self._imdp(_mk_row([0, 1], [0.6, 0.6], [0.7, 0.7])).validate()
        with pytest.raises(ValueError, match="infeasible"):
            self._imdp(_mk_row([0, 1], [0.1, 0.1], [0.3, 0.3])).validate()
