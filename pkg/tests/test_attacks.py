import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advcoreset import attacks, model
from advcoreset.attacks import AttackConfig
from advcoreset.errors import DegenerateProblemError, DimensionError


def linear_binary_model(w, b):
    """Two-logit net equivalent to the binary logistic margin w.x + b."""
    w = np.asarray(w, dtype=np.float64)
    weights = np.column_stack([np.zeros_like(w), w])
    biases = np.array([0.0, float(b)])
    return model.ModelParams(weights=[weights], biases=[biases], activation="identity")


def hard_labels(y_pm1):
    """+1 -> class 1, -1 -> class 0, matching linear_binary_model's logits."""
    return ((np.asarray(y_pm1) + 1) // 2).astype(np.int64)


def test_project_linf_clamp():
    out = attacks.project(np.array([[0.3, -0.05]]), "linf", 0.1)
    assert np.allclose(out, [[0.1, -0.05]])


def test_project_l2_rescales_to_radius():
    delta = np.array([[0.12, 0.16]])  # norm 0.2
    out = attacks.project(delta, "l2", 0.1)
    assert np.linalg.norm(out) == pytest.approx(0.1, abs=1e-12)
    assert np.allclose(out / np.linalg.norm(out), delta / np.linalg.norm(delta))


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["linf", "l2"]),
       st.floats(1e-6, 2.0))
@settings(max_examples=60, deadline=None)
def test_project_feasible_and_identity_inside_ball(seed, norm, eps):
    delta = np.random.default_rng(seed).normal(size=(5, 3))
    once = attacks.project(delta, norm, eps)
    if norm == "linf":
        assert np.abs(once).max() <= eps + 1e-9
        assert np.array_equal(attacks.project(once, norm, eps), once)
    else:
        assert np.linalg.norm(once, axis=1).max(initial=0.0) <= eps * (1 + 1e-12)
        # re-projection moves a boundary point by at most one rescale ulp
        assert np.allclose(attacks.project(once, norm, eps), once, rtol=1e-12, atol=0)
    inside = attacks.project(delta, norm, eps * 0.5)
    assert np.array_equal(attacks.project(inside, norm, eps), inside)


def test_fgsm_closed_form():
    # input gradient of the loss has signs [+, -] at x = 0 for this model
    p = linear_binary_model([-1.0, 1.0], 0.0)
    cfg = AttackConfig(norm="linf", epsilon=0.1, step_size=0.1, iterations=1,
                       restarts=1, random_init=False)
    adv = attacks.pgd_attack(p, np.array([[0.0, 0.0]]), np.array([1]), cfg)
    assert np.allclose(adv.x_adv, [[0.1, -0.1]])


def test_epsilon_zero_returns_clean_point():
    p = linear_binary_model([1.0, -2.0], 0.3)
    x = np.array([[0.5, -0.25], [1.0, 2.0]])
    cfg = AttackConfig(norm="linf", epsilon=0.0, step_size=0.1, iterations=5,
                       random_init=True)
    adv = attacks.pgd_attack(p, x, np.array([0, 1]), cfg)
    assert np.array_equal(adv.x_adv, x)


def test_zero_gradient_returns_clean_point():
    p = model.ModelParams.zeros([2, 2])
    x = np.array([[0.4, -0.7]])
    cfg = AttackConfig(norm="l2", epsilon=0.2, step_size=0.1, iterations=4)
    adv = attacks.pgd_attack(p, x, np.array([0]), cfg)
    assert np.array_equal(adv.x_adv, x)


def test_closed_form_adversary_examples():
    out = attacks.closed_form_linear_adversary(
        np.array([1.0, -0.5]), 0.0, np.array([0.0, 0.0]), 1, 0.1, "linf")
    assert np.allclose(out, [-0.1, 0.1])
    out = attacks.closed_form_linear_adversary(
        np.array([3.0, 4.0]), 0.0, np.array([0.0, 0.0]), -1, 1.0, "l2")
    assert np.allclose(out, [0.6, 0.8])


def test_closed_form_adversary_degenerate_weight():
    with pytest.raises(DegenerateProblemError):
        attacks.closed_form_linear_adversary(
            np.array([1.0, 0.0]), 0.0, np.zeros(2), 1, 0.1, "linf")


def grid_ball_points(center, eps, norm, steps=101):
    """Dense grid over the 2-d ball around center (independent oracle)."""
    offs = np.linspace(-eps, eps, steps)
    gx, gy = np.meshgrid(offs, offs)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if norm == "l2":
        pts = pts[np.linalg.norm(pts, axis=1) <= eps + 1e-12]
    return center + pts


@pytest.mark.parametrize("norm", ["linf", "l2"])
def test_closed_form_adversary_beats_grid(norm):
    rng = np.random.default_rng(7)
    for _ in range(5):
        w = rng.uniform(0.3, 1.5, size=2) * rng.choice([-1.0, 1.0], size=2)
        b = float(rng.normal())
        x = rng.normal(size=2)
        y = float(rng.choice([-1.0, 1.0]))
        eps = 0.3
        x_adv = attacks.closed_form_linear_adversary(w, b, x, y, eps, norm)
        best = attacks.logistic_loss(w, b, x_adv, y)
        pts = grid_ball_points(x, eps, norm)
        losses = attacks.logistic_loss(w, b, pts, y)
        assert best >= losses.max() - 1e-12


@pytest.mark.parametrize("norm", ["linf", "l2"])
def test_pgd_matches_closed_form_on_linear_models(norm):
    rng = np.random.default_rng(13)
    for _ in range(10):
        w = rng.uniform(0.3, 1.5, size=3) * rng.choice([-1.0, 1.0], size=3)
        b = float(rng.normal() * 0.3)
        x = rng.normal(size=(1, 3))
        y_pm = float(rng.choice([-1.0, 1.0]))
        eps = 0.25
        p = linear_binary_model(w, b)
        cfg = AttackConfig(norm=norm, epsilon=eps, step_size=eps / 4.0,
                           iterations=10, restarts=1, random_init=False)
        adv = attacks.pgd_attack(p, x, hard_labels([y_pm]), cfg)
        oracle_x = attacks.closed_form_linear_adversary(w, b, x[0], y_pm, eps, norm)
        oracle_loss = attacks.logistic_loss(w, b, oracle_x, y_pm)
        assert adv.losses[0] <= oracle_loss + 1e-12
        assert adv.losses[0] >= oracle_loss - 1e-6
        if norm == "linf":
            assert np.abs(adv.x_adv - x).max() <= eps + 1e-9
        else:
            assert np.linalg.norm(adv.x_adv - x) <= eps + 1e-9


def test_best_iterate_never_below_clean_loss():
    rng = np.random.default_rng(3)
    p = model.ModelParams.random([4, 6, 3], seed=3)
    x = rng.normal(size=(8, 4))
    y = rng.integers(0, 3, size=8)
    cfg = AttackConfig(norm="linf", epsilon=0.2, step_size=0.08, iterations=6,
                       restarts=2, random_init=True, seed=5)
    adv = attacks.pgd_attack(p, x, y, cfg, sample_ids=np.arange(8))
    _, cache = model.forward_loss(p, x, y)
    clean = model.per_sample_losses(cache, y)
    assert np.all(adv.losses >= clean - 1e-15)


def test_restart_dominance_and_determinism():
    rng = np.random.default_rng(4)
    p = model.ModelParams.random([3, 5, 2], seed=8)
    x = rng.normal(size=(6, 3))
    y = rng.integers(0, 2, size=6)
    base = dict(norm="l2", epsilon=0.3, step_size=0.1, iterations=4,
                random_init=True, seed=11)
    one = attacks.pgd_attack(p, x, y, AttackConfig(restarts=1, **base))
    three = attacks.pgd_attack(p, x, y, AttackConfig(restarts=3, **base))
    assert np.all(three.losses >= one.losses - 1e-15)
    again = attacks.pgd_attack(p, x, y, AttackConfig(restarts=3, **base))
    assert np.array_equal(three.x_adv, again.x_adv)
    assert np.array_equal(three.losses, again.losses)


def test_per_sample_streams_are_batch_independent():
    # the same sample id draws the same init regardless of batch packing
    p = model.ModelParams.random([3, 4, 2], seed=1)
    x = np.random.default_rng(0).normal(size=(4, 3))
    y = np.array([0, 1, 0, 1])
    cfg = AttackConfig(norm="linf", epsilon=0.2, step_size=0.05, iterations=3,
                       random_init=True, seed=21)
    whole = attacks.pgd_attack(p, x, y, cfg, sample_ids=np.array([10, 11, 12, 13]))
    part = attacks.pgd_attack(p, x[2:], y[2:], cfg, sample_ids=np.array([12, 13]))
    assert np.array_equal(whole.x_adv[2:], part.x_adv)


def test_trades_inner_max_constant_classifier():
    p = model.ModelParams.zeros([2, 3])
    x = np.array([[0.2, -0.4], [1.0, 0.5]])
    cfg = AttackConfig(norm="linf", epsilon=0.3, step_size=0.1, iterations=5)
    adv = attacks.trades_inner_max(p, x, cfg)
    assert np.array_equal(adv.x_adv, x)
    assert np.allclose(adv.losses, np.log(3.0), atol=1e-12)


def test_trades_lambda_does_not_change_maximizer():
    # the attack itself never sees lambda; identical outputs by construction,
    # and the inner value dominates the clean value (best-iterate contract)
    p = model.ModelParams.random([2, 4, 3], seed=6)
    x = np.random.default_rng(5).normal(size=(5, 2))
    cfg = AttackConfig(norm="l2", epsilon=0.4, step_size=0.15, iterations=8)
    adv1 = attacks.trades_inner_max(p, x, cfg)
    adv2 = attacks.trades_inner_max(p, x, cfg)
    assert np.array_equal(adv1.x_adv, adv2.x_adv)
    cache = model.forward(p, x)
    clean_value = -(cache.probs * cache.log_probs).sum(axis=1)
    assert np.all(adv1.losses >= clean_value - 1e-15)


def test_trades_inner_value_beats_grid_on_small_model():
    p = model.ModelParams.random([2, 3, 2], seed=14)
    x = np.array([[0.3, -0.6]])
    eps = 0.25
    cfg = AttackConfig(norm="linf", epsilon=eps, step_size=eps / 5.0,
                       iterations=25, restarts=3, random_init=True, seed=2)
    adv = attacks.trades_inner_max(p, x, cfg)
    clean_cache = model.forward(p, x)
    pts = grid_ball_points(x[0], eps, "linf", steps=81)
    pt_cache = model.forward(p, pts)
    values = -(clean_cache.probs[0] * pt_cache.log_probs).sum(axis=1)
    # PGD with restarts should come within a modest gap of the grid optimum
    assert adv.losses[0] >= values.max() - 1e-3


def test_config_validation():
    with pytest.raises(DimensionError):
        AttackConfig(norm="l1")
    with pytest.raises(DimensionError):
        AttackConfig(epsilon=-0.1)
    with pytest.raises(DimensionError):
        AttackConfig(step_size=0.0)
    with pytest.raises(DimensionError):
        AttackConfig(restarts=0)
