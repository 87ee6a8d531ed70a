"""Penalty tests: frozen worked examples, a finite-difference head oracle,
differentiability, and objective structure."""

import numpy as np
import pytest

from invarcast import autodiff as ad
from invarcast import invariance as inv
from invarcast.exceptions import ConfigError, ContractError, DimensionError


def _fd_head_penalty(h, t, eps=1e-6):
    """Independent oracle: finite-difference the risk in an explicit head.

    risk(w) = mean((w * h - t)^2) over the batch; the penalty is the squared
    norm of that risk's gradient at w = all ones, probed entry by entry with
    central differences.
    """
    h = np.asarray(h, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    d, k = h.shape[1], h.shape[2]

    def risk(w):
        return float(((w[None, :, :] * h - t) ** 2).mean())

    total = 0.0
    for i in range(d):
        for j in range(k):
            w_plus = np.ones((d, k))
            w_minus = np.ones((d, k))
            w_plus[i, j] += eps
            w_minus[i, j] -= eps
            g = (risk(w_plus) - risk(w_minus)) / (2.0 * eps)
            total += g * g
    return total


def test_frozen_worked_example_single_window():
    # B=1, d=1, k=1, H=2, T=1: risk gradient in the head is 4, penalty 16.
    h = ad.Tensor(np.array([[[2.0]]]))
    pen = inv.irm_penalty_mse(h, np.array([[[1.0]]]))
    assert float(pen.data) == pytest.approx(16.0, rel=1e-12)
    risk = inv.mse_risk(h, np.array([[[1.0]]]))
    assert float(risk.data) == pytest.approx(1.0, rel=1e-12)


def test_frozen_worked_example_batch_of_two():
    # H = [1, 3], T = [1, 1]: g = (2/2) * (0*1 + 2*3) = 6, penalty 36.
    h = ad.Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1))
    t = np.ones((2, 1, 1))
    assert float(inv.irm_penalty_mse(h, t).data) == pytest.approx(36.0, rel=1e-12)
    assert float(inv.mse_risk(h, t).data) == pytest.approx(2.0, rel=1e-12)


def test_penalty_matches_finite_difference_head_probe_on_random_batches():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 9))
        h = rng.uniform(-2, 2, (b, 3, 2))
        t = rng.uniform(-2, 2, (b, 3, 2))
        got = float(inv.irm_penalty_mse(ad.Tensor(h), t).data)
        want = _fd_head_penalty(h, t)
        denom = max(abs(want), 1e-9)
        worst = max(worst, abs(got - want) / denom)
    assert worst < 1e-6, f"max rel error {worst:.3g}"


def test_penalty_is_zero_for_perfectly_calibrated_logits():
    # If H == T exactly, the head gradient vanishes identically.
    rng = np.random.default_rng(1)
    t = rng.uniform(-2, 2, (5, 2, 2))
    assert float(inv.irm_penalty_mse(ad.Tensor(t.copy()), t).data) == 0.0


def test_penalty_is_differentiable_wrt_logits():
    rng = np.random.default_rng(2)
    t = rng.uniform(-1, 1, (4, 2, 3))

    def fn(tape, ps):
        return inv.irm_penalty_mse(ps[0], t)

    report = ad.finite_diff_check(fn, [rng.uniform(-1, 1, (4, 2, 3))], tol=1e-5)
    assert report.passed, f"max rel error {report.max_rel_error:.3g}"


def test_penalty_gradient_matches_hand_derivative_scalar_case():
    # B=d=k=1: penalty(h) = (2 h (h - t))^2; d/dh = 8 h (h - t) (2h - t).
    tval, hval = 1.0, 2.0
    tape = ad.GradientTape()
    h = ad.Tensor(np.array([[[hval]]]), tape)
    grads = ad.backward(inv.irm_penalty_mse(h, np.array([[[tval]]])), tape)
    expected = 8.0 * hval * (hval - tval) * (2.0 * hval - tval)
    assert grads[h].item() == pytest.approx(expected, rel=1e-12)


def test_identical_environment_batches_have_identical_penalties():
    rng = np.random.default_rng(3)
    h = rng.uniform(-2, 2, (6, 3, 1))
    t = h - rng.uniform(-0.5, 0.5, (6, 3, 1))
    p1 = float(inv.irm_penalty_mse(ad.Tensor(h.copy()), t.copy()).data)
    p2 = float(inv.irm_penalty_mse(ad.Tensor(h.copy()), t.copy()).data)
    assert p1 == p2


def test_objective_sums_risks_and_penalties_over_environments():
    rng = np.random.default_rng(4)
    batches = []
    risks, pens = [], []
    for _ in range(3):
        h = ad.Tensor(rng.uniform(-2, 2, (4, 2, 1)))
        t = rng.uniform(-2, 2, (4, 2, 1))
        batches.append((h, t))
        risks.append(float(inv.mse_risk(h, t).data))
        pens.append(float(inv.irm_penalty_mse(h, t).data))
    lam = 7.5
    got = float(inv.irm_objective(batches, lam).data)
    assert got == pytest.approx(sum(risks) + lam * sum(pens), rel=1e-12)


def test_objective_with_zero_lambda_equals_pooled_risk_exactly():
    rng = np.random.default_rng(5)
    batches = [(ad.Tensor(rng.uniform(-2, 2, (4, 2, 1))), rng.uniform(-2, 2, (4, 2, 1)))
               for _ in range(2)]
    got = float(inv.irm_objective(batches, 0.0).data)
    want = sum(float(inv.mse_risk(h, t).data) for h, t in batches)
    assert got == want


def test_objective_zero_lambda_gradients_match_pure_risk_bitwise():
    rng = np.random.default_rng(6)
    hval = rng.uniform(-2, 2, (4, 2, 1))
    t = rng.uniform(-2, 2, (4, 2, 1))

    tape_a = ad.GradientTape()
    ha = ad.Tensor(hval, tape_a)
    ga = ad.backward(inv.irm_objective([(ha, t)], 0.0), tape_a)[ha]

    tape_b = ad.GradientTape()
    hb = ad.Tensor(hval, tape_b)
    gb = ad.backward(inv.mse_risk(hb, t), tape_b)[hb]
    np.testing.assert_array_equal(ga, gb)


def test_apply_head_is_identity_valued_and_frozen():
    head = inv.InvariantHead(input_dim=3, horizon=2)
    np.testing.assert_array_equal(head.w_inv, np.ones((3, 2)))
    with pytest.raises(ValueError):
        head.w_inv[0, 0] = 2.0

    tape = ad.GradientTape()
    logits = ad.Tensor(np.arange(6.0).reshape(1, 3, 2), tape)
    out = inv.apply_head(logits)
    np.testing.assert_array_equal(out.data, logits.data)
    grads = ad.backward(ad.sum_all(out), tape)
    np.testing.assert_array_equal(grads[logits], np.ones((1, 3, 2)))


def test_lambda_schedule_steps_at_warmup():
    sched = inv.LambdaSchedule(lambda_pre=1.0, lambda_main=1e4, warmup_epochs=10)
    assert sched.value(0) == 1.0
    assert sched.value(9) == 1.0
    assert sched.value(10) == 1e4
    assert sched.value(100) == 1e4
    with pytest.raises(ContractError):
        sched.value(-1)


def test_validation_errors():
    with pytest.raises(ConfigError):
        inv.LambdaSchedule(lambda_pre=-1.0)
    with pytest.raises(ConfigError):
        inv.LambdaSchedule(warmup_epochs=-2)
    with pytest.raises(ContractError):
        inv.irm_objective([], 1.0)
    h = ad.Tensor(np.ones((2, 1, 1)))
    with pytest.raises(ConfigError):
        inv.irm_objective([(h, np.ones((2, 1, 1)))], -1.0)
    with pytest.raises(DimensionError):
        inv.irm_penalty_mse(ad.Tensor(np.ones((2, 2))), np.ones((2, 2)))
    with pytest.raises(DimensionError):
        inv.irm_penalty_mse(h, np.ones((2, 1, 2)))
    with pytest.raises(ConfigError):
        inv.InvariantHead(input_dim=0, horizon=1)
    with pytest.raises(DimensionError):
        inv.apply_head(ad.Tensor(np.ones(4)))
