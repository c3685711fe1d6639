import numpy as np
import pytest
from scipy.optimize import brentq, minimize_scalar
from hypothesis import example, given, settings
from hypothesis import strategies as st

from straintopo import mma
from straintopo.mma import MinMaxProblem, MmaState, OptimizerError, kkt_report, mma_update


def _quadratic(x):
    return MinMaxProblem(x, [np.sum((x - 0.3) ** 2)], [2 * (x - 0.3)])


def test_quadratic_converges():
    x = np.full(10, 0.6)
    state = MmaState(10)
    hit = None
    for k in range(60):
        x = mma_update(_quadratic(x), state)
        if hit is None and np.max(np.abs(x - 0.3)) < 1e-4:
            hit = k + 1
    assert hit is not None and hit <= 60
    assert kkt_report(_quadratic(np.full(10, 0.3))).measure < 1e-6


def test_minmax_toy():
    x = np.array([0.95])
    state = MmaState(1)
    for _ in range(60):
        x = mma_update(MinMaxProblem(x, [x[0], 1 - x[0]], [[1.0], [-1.0]]), state)
    assert abs(x[0] - 0.5) < 1e-3


def test_active_volume_constraint():
    """Maximise the sum of x under a mean-volume bound: the bound must end active."""
    n = 30
    x = np.full(n, 0.1)
    state = MmaState(n)
    for _ in range(80):
        p = MinMaxProblem(x, [1.0 - np.mean(x)], [-np.ones(n) / n], [np.mean(x) / 0.4 - 1.0], [np.ones(n) / n / 0.4])
        x = mma_update(p, state)
    assert abs(np.mean(x) - 0.4) < 1e-3
    rep = kkt_report(p, state)
    assert rep.max_violation < 1e-3


def _toy(x, c):
    n = x.size
    return MinMaxProblem(x, [np.sum((x - c[0]) ** 2), np.sum((x - c[1]) ** 4)],
                         [2 * (x - c[0]), 4 * (x - c[1]) ** 3], [np.mean(x) - 0.5], [np.ones(n) / n])


def _toy_start(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-0.5, 1.5, (2, n))
    return c, rng.uniform(0, 1, n)


# degenerate subproblems on which the interior point iteration alone stalls
@example(1, 357, 0.25)
@example(1, 387, 0.25)
@example(2, 6, 0.1)
@example(5, 161, 0.25)
@given(st.integers(1, 12), st.integers(0, 10_000), st.floats(0.02, 0.3))
@settings(max_examples=40, deadline=None)
def test_steps_respect_bounds_and_move(n, seed, move):
    c, x = _toy_start(n, seed)
    state = MmaState(n, move=move)
    for _ in range(8):
        p = _toy(x, c)
        xn = mma_update(p, state)
        assert np.all(xn >= 0.0) and np.all(xn <= 1.0)
        assert np.max(np.abs(xn - x)) <= move + 1e-12
        assert np.all(state.low < x) and np.all(x < state.upp)
        assert state.subproblem_residual < 1e-9
        x = xn


def test_stalled_subproblem_matches_direct_solution(monkeypatch):
    """Seventh step of a 1-D toy whose subproblem the interior point alone leaves at 2e-6."""
    captured = {}
    solve = mma._subsolv

    def spy(*args):
        captured["args"] = args
        out = solve(*args)
        captured["x"] = out["x"]
        return out

    monkeypatch.setattr(mma, "_subsolv", spy)
    c, x = _toy_start(1, 357)
    state = MmaState(1, move=0.25)
    for _ in range(8):
        x = mma_update(_toy(x, c), state)
    assert state.subproblem_residual < 1e-9

    # the same subproblem solved independently: min max(g1, g2) + regularization
    # over [alfa, beta] restricted to g3 <= b3 (an interval, g3 convex)
    m, n, _, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, cc, d = captured["args"]

    def g(t):
        return P[:, 0] / (upp[0] - t) + Q[:, 0] / (t - low[0]) - b

    def obj(t):
        return p0[0] / (upp[0] - t) + q0[0] / (t - low[0]) + max(0.0, g(t)[0], g(t)[1])

    lo, hi = alfa[0], beta[0]
    grid = np.linspace(lo, hi, 2001)
    ok = np.array([g(t)[2] <= 0 for t in grid])
    assert ok.any()
    if not ok[0]:
        lo = brentq(lambda t: g(t)[2], grid[np.argmax(ok) - 1], grid[np.argmax(ok)], xtol=1e-15)
    if not ok[-1]:
        last = len(ok) - 1 - np.argmax(ok[::-1])
        hi = brentq(lambda t: g(t)[2], grid[last], grid[last + 1], xtol=1e-15)
    ref = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}).x
    assert abs(captured["x"][0] - ref) < 1e-6


def test_zero_gradients_give_zero_measure():
    p = MinMaxProblem(np.full(4, 0.5), [1.0], [np.zeros(4)])
    assert kkt_report(p).measure == 0.0


def test_invalid_inputs():
    with pytest.raises(OptimizerError):
        MinMaxProblem(np.zeros(3), [np.nan], [np.zeros(3)])
    with pytest.raises(OptimizerError):
        MinMaxProblem(np.zeros(3), [1.0], [np.zeros(2)])
    with pytest.raises(OptimizerError):
        MinMaxProblem(np.zeros(3), [], np.zeros((0, 3)))
    with pytest.raises(OptimizerError):
        MmaState(3, move=0.0)
    with pytest.raises(OptimizerError):
        mma_update(_quadratic(np.zeros(3)), MmaState(4))
