import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airdp.errors import BudgetExceededError, PreconditionError
from airdp.privacy import (DpTarget, PrivacyLedger, accumulate_noma, accumulate_oma, dp_satisfied,
                           epsilon_for_budget, r_dp, sensitivity_bound_noma, sensitivity_bound_oma,
                           step_loss_noma, step_loss_oma)

from oracles import r_dp_mp


@pytest.mark.parametrize("eps,delta", [(20, 0.01), (5, 0.01), (1, 1e-5), (1000, 0.1), (0.01, 0.5)])
def test_r_dp_matches_high_precision(eps, delta):
    assert r_dp(DpTarget(eps, delta)) == pytest.approx(r_dp_mp(eps, delta), rel=1e-12)


def test_r_dp_default_value():
    # derived with mpmath: (sqrt(20 + c^2) - c)^2, c = C^-1(100)
    assert r_dp(DpTarget(20, 0.01)) == pytest.approx(8.942438200393237, rel=1e-13)


@given(st.floats(1e-3, 1e4), st.floats(1e-8, 0.9))
@settings(max_examples=100, deadline=None)
def test_epsilon_for_budget_inverts(eps, delta):
    assert epsilon_for_budget(r_dp(DpTarget(eps, delta)), delta) == pytest.approx(eps, rel=1e-9)


def test_r_dp_monotone():
    vals = [r_dp(DpTarget(e, 0.01)) for e in (1, 2, 5, 10, 50)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_target_validation():
    for eps, delta in ((0, 0.1), (-1, 0.1), (1, 0), (1, 1)):
        with pytest.raises(PreconditionError):
            DpTarget(eps, delta)


def test_step_losses():
    assert step_loss_oma(2.0, 0.5, 3.0, 0.0, 1.0) == pytest.approx(18.0)
    # artificial noise adds (h alpha sigma)^2 to the denominator
    assert step_loss_oma(1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert step_loss_noma(2.0, 1.0, [0.0, 0.0], 4.0) == pytest.approx(2.0)
    assert step_loss_noma(1.0, 1.0, [1.0, 1.0], 2.0) == pytest.approx(0.5)
    assert sensitivity_bound_oma(2, 0.5, 3) == 6.0
    assert sensitivity_bound_noma(2, 3) == 12.0


def test_step_loss_is_squared_sensitivity_over_noise():
    h, a, g, s, n0 = 1.3, 0.7, 2.1, 0.4, 0.9
    delta = sensitivity_bound_oma(h, a, g)
    m2 = n0 + (h * a * s) ** 2
    assert step_loss_oma(h, a, g, s, n0) == pytest.approx(delta ** 2 / (2 * m2))


def test_ledger_enforces_budget():
    led = PrivacyLedger(1.0, 2)
    led.charge([0.5, 0.25])
    assert led.residual(0) == pytest.approx(0.5)
    with pytest.raises(BudgetExceededError):
        led.charge([0.6, 0.0])
    assert np.allclose(led.loss, [0.5, 0.25])
    led.charge([0.5, 0.0])
    assert led.residual(0) == 0.0
    with pytest.raises(PreconditionError):
        led.charge([-1, 0])


def test_ledger_record_only_mode():
    led = PrivacyLedger(1.0, enforce=False)
    led.charge(5.0)
    assert led.loss[0] == 5.0 and led.residual() == 0.0


def test_accumulators_match_ledger_bitwise():
    rng = np.random.default_rng(0)
    h, a, s = rng.random((3, 4)), rng.random((3, 4)), rng.random((3, 4))
    g = rng.random(3)
    led = PrivacyLedger(1e9, 4)
    for t in range(3):
        led.charge(step_loss_oma(h[t], a[t], g[t], s[t], 0.7))
    assert np.array_equal(accumulate_oma(h, a, g, s, 0.7), led.loss)
    c = rng.random(5)
    gam = rng.random(5)
    sig = rng.random((5, 2))
    led = PrivacyLedger(1e9)
    for t in range(5):
        led.charge(step_loss_noma(c[t], gam[t], sig[t], 0.3))
    assert accumulate_noma(c, gam, sig, 0.3) == led.loss[0]


def test_dp_satisfied():
    ok, slack = dp_satisfied([0.5, 0.9], 1.0)
    assert ok and slack == pytest.approx(0.1)
    assert not dp_satisfied([1.1], 1.0)[0]
    assert dp_satisfied([1.0 + 1e-12], 1.0)[0]
