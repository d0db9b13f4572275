import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airdp import power as pa
from airdp.errors import PreconditionError
from airdp.privacy import PrivacyLedger, dp_satisfied, step_loss_noma, step_loss_oma

import oracles


def oma(h=1.0, gamma=1.0, G=1.0, D=1.0, P=1.0, n0=1.0, mu=0.5, L=1.0, R=1.0, d=1):
    return pa.PaInputsOma(np.atleast_1d(np.asarray(h, float)), gamma, G, D, P, n0, mu, L, R, d)


def random_oma(rng, T=None, binding_bias=True):
    T = T or int(rng.integers(1, 4))
    h = rng.uniform(0.3, 2.0, T)
    gamma = rng.uniform(0.5, 3.0, T)
    G = rng.uniform(0.5, 3.0, T)
    D = float(rng.integers(10, 300))
    P = float(10 ** rng.uniform(1, 5))
    inp = pa.PaInputsOma(h, gamma, G, D, P, 1.0, rng.uniform(0.05, 0.9), 1.0, 1.0, 10)
    lhs = pa.free_privacy_threshold_oma(inp)
    # budget between 5% and 150% of the full-power loss mixes both regimes
    inp.budget = lhs * (rng.uniform(0.05, 1.5) if binding_bias else rng.uniform(1.01, 3))
    return inp


def random_noma(rng, T=None, K=None):
    T = T or int(rng.integers(1, 4))
    K = K or int(rng.integers(1, 4))
    inp = pa.PaInputsNoma(rng.uniform(0.3, 2.0, (T, K)), rng.uniform(0.5, 3.0, T),
                          rng.uniform(0.5, 3.0, (T, K)), rng.integers(10, 300, K).astype(float),
                          float(10 ** rng.uniform(1, 5)), 1.0, rng.uniform(0.05, 0.9), 1.0, 1.0, 10)
    inp.budget = pa.free_privacy_threshold_noma(inp) * rng.uniform(0.05, 1.5)
    return inp


# -- free-privacy threshold ---------------------------------------------------

def test_threshold_plug_in():
    assert pa.free_privacy_threshold_oma(oma()) == pytest.approx(2.0)


def test_threshold_linear_in_power():
    a = pa.free_privacy_threshold_oma(oma(h=[1.0, 0.5], P=3.0))
    b = pa.free_privacy_threshold_oma(oma(h=[1.0, 0.5], P=6.0))
    assert b == pytest.approx(2 * a)


def test_noma_threshold_identical_devices_equals_oma():
    single = oma(h=[0.8, 1.1], gamma=[1.0, 2.0], G=1.5, D=20.0, P=5.0)
    noma = pa.PaInputsNoma(np.tile([[0.8], [1.1]], (1, 3)), [1.0, 2.0], 1.5, [20.0] * 3, 5.0, 1.0, 0.5, 1.0, 1.0)
    assert pa.free_privacy_threshold_noma(noma) == pytest.approx(pa.free_privacy_threshold_oma(single))


# -- offline solvers: hand examples ------------------------------------------

def test_single_step_free_regime():
    inp = oma(R=3.0)
    s = pa.solve_offline_oma(inp)
    assert not s.binding and s.scale[0] == 1.0
    ok, slack = dp_satisfied(pa.privacy_total_oma(inp, s.scale), 3.0)
    assert ok and slack == pytest.approx(1.0)


def test_single_step_binding():
    s = pa.solve_offline_oma(oma(R=1.0))
    assert s.binding
    # 2 alpha^2 = 1
    assert s.scale[0] == pytest.approx(1 / math.sqrt(2), rel=1e-12)


def test_nonpositive_budget_is_silent():
    s = pa.solve_offline_oma(oma(h=[1.0, 1.0], R=0.0))
    assert s.silent and np.all(s.scale == 0)
    assert pa.online_step_oma(0.0, [1.0], 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0) == 0.0


def test_degenerate_contraction_rejected():
    with pytest.raises(PreconditionError):
        pa.solve_offline_oma(oma(h=[1.0, 1.0], mu=1.0, R=0.5))


# -- offline solvers: properties -----------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_constraint_sum_decreasing(seed):
    rng = np.random.default_rng(seed)
    inp = random_oma(rng, T=4)
    cap = inp.gain_cap() / inp.n0
    zeta = 10 ** rng.uniform(-6, 6)
    a = pa.constraint_sum(zeta, inp.gamma, cap, inp.q)
    b = pa.constraint_sum(2 * zeta, inp.gamma, cap, inp.q)
    assert b <= a
    if np.any(inp.q ** (-np.arange(1, 5) / 2) / (math.sqrt(2 * zeta) * inp.gamma) < cap):
        assert b < a


@pytest.mark.parametrize("seed", range(40))
def test_binding_schedules_meet_budget_with_equality(seed):
    rng = np.random.default_rng(seed)
    inp = random_oma(rng, T=5)
    s = pa.solve_offline_oma(inp)
    total = pa.privacy_total_oma(inp, s.scale)
    if s.binding:
        assert abs(total - inp.budget) <= 1e-6 * inp.budget
    else:
        assert total < inp.budget
    noma = random_noma(rng, T=5)
    s = pa.solve_offline_noma(noma)
    total = pa.privacy_total_noma(noma, s.scale)
    if s.binding:
        assert abs(total - noma.budget) <= 1e-6 * noma.budget


@pytest.mark.parametrize("seed", range(40))
def test_power_feasible(seed):
    rng = np.random.default_rng(100 + seed)
    inp = random_oma(rng, T=6)
    for solver in (pa.solve_offline_oma, pa.static_oma, pa.no_dp_oma):
        assert np.all(pa.transmit_power_oma(inp, solver(inp).scale) <= inp.P + 1e-9)
    noma = random_noma(rng, T=6)
    for solver in (pa.solve_offline_noma, pa.static_noma, pa.no_dp_noma):
        assert np.all(pa.transmit_power_noma(noma, solver(noma).scale) <= noma.P + 1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_free_regime_bitwise_equals_no_dp(seed):
    rng = np.random.default_rng(200 + seed)
    inp = random_oma(rng, T=4, binding_bias=False)
    s = pa.solve_offline_oma(inp)
    assert not s.binding
    assert np.array_equal(s.scale, pa.no_dp_oma(inp).scale)
    noma = random_noma(rng, T=4)
    noma.budget = pa.free_privacy_threshold_noma(noma) * 1.5
    assert np.array_equal(pa.solve_offline_noma(noma).scale, pa.no_dp_noma(noma).scale)


def test_scale_increases_over_time_without_cap():
    inp = oma(h=np.ones(6), gamma=1.0, G=1.0, D=1.0, P=1e9, mu=0.2, R=0.5)
    s = pa.solve_offline_oma(inp)
    assert s.binding and np.all(np.diff(s.scale) > 0)


def test_optimal_beats_static():
    rng = np.random.default_rng(7)
    for _ in range(30):
        inp = random_oma(rng, T=5)
        opt = pa.objective_oma(inp, pa.solve_offline_oma(inp).scale)
        assert opt <= pa.objective_oma(inp, pa.static_oma(inp).scale) * (1 + 1e-12)
        noma = random_noma(rng, T=5)
        opt = pa.objective_noma(noma, pa.solve_offline_noma(noma).scale)
        assert opt <= pa.objective_noma(noma, pa.static_noma(noma).scale) * (1 + 1e-12)


def test_noma_identical_devices_matches_oma():
    h = np.array([0.9, 1.2, 0.7])
    single = oma(h=h, gamma=[1.0, 1.5, 2.0], G=2.0, D=50.0, P=1e4, mu=0.3, R=0.8)
    noma = pa.PaInputsNoma(np.tile(h[:, None], (1, 4)), [1.0, 1.5, 2.0], 2.0, [50.0] * 4, 1e4, 1.0, 0.3, 1.0, 0.8)
    a = pa.solve_offline_oma(single).scale
    c = pa.solve_offline_noma(noma).scale
    assert np.allclose(c, a * h, rtol=1e-10)


def test_noma_cap_set_by_largest_device():
    noma = pa.PaInputsNoma(np.ones((2, 3)), 1.0, 1.0, [10.0, 10.0, 1e4], 100.0, 1.0, 0.5, 1.0, 1e12)
    assert np.allclose(pa.solve_offline_noma(noma).scale, math.sqrt(100.0) / 1e4)


# -- static baseline ------------------------------------------------------------

def test_static_single_step_matches_optimal():
    for R in (0.3, 1.0, 5.0):
        inp = oma(h=[1.3], gamma=2.0, G=1.0, D=3.0, P=2.0, R=R)
        assert pa.static_oma(inp).scale[0] == pytest.approx(pa.solve_offline_oma(inp).scale[0], rel=1e-12)


def test_static_large_budget_is_full_power():
    inp = oma(h=[1.0, 0.5, 2.0], R=1e12)
    assert np.array_equal(pa.static_oma(inp).scale, pa.no_dp_oma(inp).scale)


def test_static_per_step_share():
    inp = oma(h=[1.0, 0.5, 2.0], gamma=3.0, P=1e9, R=2.0)
    s = pa.static_oma(inp)
    losses = step_loss_oma(inp.h, s.scale, inp.gamma, 0.0, inp.n0)
    assert np.allclose(losses, 2.0 / 3)


# -- KKT ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(25))
def test_kkt_residuals_vanish(seed):
    rng = np.random.default_rng(300 + seed)
    inp = random_oma(rng, T=3)
    s = pa.solve_offline_oma(inp)
    assert pa.kkt_residuals_oma(inp, s)["max"] <= 1e-6
    w = inp.q ** -np.arange(1, inp.T + 1.0)
    ref = oracles.kkt_oma(w, inp.gamma, inp.h, inp.D * inp.G, inp.P, inp.n0, inp.d, inp.budget, s.scale, s.zeta)
    assert max(ref.values()) <= 1e-6
    noma = random_noma(rng, T=3)
    s = pa.solve_offline_noma(noma)
    assert pa.kkt_residuals_noma(noma, s)["max"] <= 1e-6
    w = noma.q ** -np.arange(1, noma.T + 1.0)
    ref = oracles.kkt_noma(w, noma.gamma, noma.P, noma.n0, noma.budget, s.scale, s.zeta,
                           noma.full_power_scale())
    assert max(ref.values()) <= 1e-6


def test_kkt_detects_suboptimal_schedule():
    rng = np.random.default_rng(5)
    while True:
        inp = random_oma(rng, T=3)
        s = pa.solve_offline_oma(inp)
        if s.binding and np.all(s.scale < inp.full_power_scale() * (1 - 1e-6)):
            break
    static = pa.static_oma(inp)
    static.zeta = s.zeta
    assert pa.kkt_residuals_oma(inp, static)["max"] > 1e-3


# -- predictors ---------------------------------------------------------------

def test_bound_predictors():
    assert np.all(pa.predict_bounds_oma(0.0, 0.0, 0.0, 10, 20.0, 1, 3) == 20.0)
    assert np.allclose(pa.predict_bounds_oma(10.0, 2.0, 0.5, 10, 20.0, 2, 4), 1.0)
    assert np.allclose(pa.predict_bounds_noma(20.0, 2.0, 10, 20.0, 3, 2), 1.0)
    assert np.all(pa.predict_bounds_noma(5.0, 1.0, 10, 7.0, 1, 2) == 7.0)
    # a silent previous step keeps the previous estimate
    assert pa.predict_bounds_oma(3.0, 1.0, 0.0, 10, 20.0, 3, 1, previous=4.5)[0] == 4.5
    assert pa.predict_bounds_noma(3.0, 0.0, 10, 20.0, 3, 1, previous=4.5)[0] == 4.5


def test_bound_predictor_exact_without_noise():
    rng = np.random.default_rng(0)
    grad = rng.standard_normal(5)
    h, alpha, D = 1.7, 0.03, 40.0
    y = h * alpha * D * grad
    assert pa.predict_bounds_oma(np.linalg.norm(y), h, alpha, D, 1.0, 2, 1)[0] == pytest.approx(np.linalg.norm(grad))


# -- online schemes -------------------------------------------------------------

def replay_online_oma(inp):
    ledger = PrivacyLedger(inp.budget)
    out = []
    for t in range(inp.T):
        a = pa.online_step_oma(ledger.residual(), inp.h[t:], inp.G[t:], inp.gamma[t:], inp.D, inp.P,
                               inp.n0, inp.mu, inp.L)
        ledger.charge(step_loss_oma(inp.h[t], a, inp.gamma[t], 0.0, inp.n0))
        out.append(a)
    return np.array(out), ledger


def replay_online_noma(inp):
    ledger = PrivacyLedger(inp.budget)
    out = []
    for t in range(inp.T):
        c = pa.online_step_noma(ledger.residual(), inp.h[t:], inp.G[t:], inp.gamma[t:], inp.D, inp.P,
                                inp.n0, inp.mu, inp.L)
        ledger.charge(step_loss_noma(c, inp.gamma[t], np.zeros(inp.K), inp.n0))
        out.append(c)
    return np.array(out), ledger


@pytest.mark.parametrize("seed", range(20))
def test_perfect_prediction_reproduces_offline(seed):
    rng = np.random.default_rng(400 + seed)
    inp = random_oma(rng, T=6)
    inp.G = np.full(inp.T, inp.G[0])
    online, _ = replay_online_oma(inp)
    assert np.allclose(online, pa.solve_offline_oma(inp).scale, rtol=1e-8, atol=0)
    noma = random_noma(rng, T=6, K=3)
    noma.G = np.tile(noma.G[:1], (noma.T, 1))
    online, _ = replay_online_noma(noma)
    assert np.allclose(online, pa.solve_offline_noma(noma).scale, rtol=1e-8, atol=0)


def test_online_budget_safe_under_bad_predictions():
    rng = np.random.default_rng(9)
    for _ in range(100):
        true = random_oma(rng, T=5)
        ledger = PrivacyLedger(true.budget)
        for t in range(true.T):
            h_hat = np.concatenate([[true.h[t]], rng.uniform(0.1, 3.0, true.T - t - 1)])
            a = pa.online_step_oma(ledger.residual(), h_hat, rng.uniform(0.2, 5.0), true.gamma[t],
                                   true.D, true.P, true.n0, true.mu, true.L)
            ledger.charge(step_loss_oma(true.h[t], a, true.gamma[t], 0.0, true.n0))
        assert ledger.loss[0] <= true.budget * (1 + 1e-12)


# -- independent optimizers ------------------------------------------------------

@pytest.mark.parametrize("seed", range(15))
def test_objective_matches_grid_solve(seed):
    rng = np.random.default_rng(500 + seed)
    inp = random_oma(rng, T=int(rng.integers(1, 4)))
    w = inp.q ** -np.arange(1, inp.T + 1.0)
    lb = np.array([oracles.min_noise_oma(h, inp.D * G, inp.P, inp.n0, inp.d) for h, G in zip(inp.h, inp.G)])
    ref, _ = oracles.grid_allocation(w, inp.gamma, lb, inp.budget, rounds=30, points=21)
    assert pa.objective_oma(inp, pa.solve_offline_oma(inp).scale) == pytest.approx(ref, rel=1e-6)
    noma = random_noma(rng, T=int(rng.integers(1, 4)))
    w = noma.q ** -np.arange(1, noma.T + 1.0)
    lb = np.array([oracles.min_noise_noma(h, noma.D * G, noma.P, noma.n0) for h, G in zip(noma.h, noma.G)])
    ref, _ = oracles.grid_allocation(w, noma.gamma, lb, noma.budget, rounds=30, points=21)
    assert pa.objective_noma(noma, pa.solve_offline_noma(noma).scale) == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_objective_matches_conic_solver(seed):
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(600 + seed)
    inp = random_oma(rng, T=4)
    w = inp.q ** -np.arange(1, inp.T + 1.0)
    ref, _ = oracles.cvx_oma(w, inp.gamma, inp.h, inp.D * inp.G, inp.P, inp.n0, inp.d, inp.budget)
    assert pa.objective_oma(inp, pa.solve_offline_oma(inp).scale) == pytest.approx(ref, rel=1e-5)
