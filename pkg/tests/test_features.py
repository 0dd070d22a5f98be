import numpy as np
import pytest

from advcoreset import features, model
from advcoreset.attacks import AttackConfig
from advcoreset.errors import DimensionError, NumericError
from advcoreset.features import GradientFeatures, ObjectiveKind
from advcoreset.model import Dataset


def small_data(seed=0, n=12, d=4, k=3):
    rng = np.random.default_rng(seed)
    return Dataset(features=rng.normal(size=(n, d)), labels=rng.integers(0, k, size=n), k=k)


ATTACK = AttackConfig(norm="linf", epsilon=0.2, step_size=0.08, iterations=5)


def test_epsilon_zero_equals_vanilla():
    data = small_data(1)
    p = model.ModelParams.random([4, 6, 3], seed=1)
    eps0 = AttackConfig(norm="linf", epsilon=0.0, step_size=0.1, iterations=3)
    adv = features.adv_grad_features(p, data, ObjectiveKind("adversarial-ce"), eps0)
    van = features.adv_grad_features(p, data, ObjectiveKind("vanilla"), eps0)
    assert np.array_equal(adv.rows, van.rows)


def test_adversarial_rows_average_to_full_gradient_on_attacked_batch():
    data = small_data(2)
    p = model.ModelParams.random([4, 6, 3], seed=2)
    from advcoreset import attacks

    adv_batch = attacks.pgd_attack(p, data.features, data.labels, ATTACK,
                                   sample_ids=np.arange(data.n))
    rows = model.per_sample_last_layer_grad(p, adv_batch.x_adv, data.labels)
    _, cache = model.forward_loss(p, adv_batch.x_adv, data.labels)
    g = model.backward_grads(p, cache, data.labels)
    full = np.concatenate([g.weights[-1].ravel(), g.biases[-1]])
    assert np.abs(rows.mean(axis=0) - full).max() < 1e-10


def test_trades_zero_weights_second_third_terms_vanish():
    data = small_data(3)
    p = model.ModelParams.zeros([4, 3])
    rows = features.adv_grad_features(p, data, ObjectiveKind("trades", 2.0), ATTACK)
    van = features.adv_grad_features(p, data, ObjectiveKind("vanilla"), ATTACK)
    assert np.allclose(rows.rows, van.rows, atol=1e-12)


def trades_value_last_layer(p, x, y, x_adv, lam):
    """Scalar TRADES objective with x_adv held fixed (for finite differences)."""
    clean = model.forward(p, x)
    adv = model.forward(p, x_adv)
    ce_clean = model.per_sample_losses(clean, y)
    robust = -(clean.probs * adv.log_probs).sum(axis=1)
    return ce_clean + robust / lam


def test_trades_rows_match_finite_differences():
    lam = 2.5
    for seed in range(6):
        data = small_data(seed + 10, n=5, d=3, k=3)
        p = model.ModelParams.random([3, 4, 3], seed=seed)
        from advcoreset import attacks

        x_adv = attacks.trades_inner_max(p, data.features, ATTACK).x_adv
        rows = features._trades_rows(p, data, ObjectiveKind("trades", lam), ATTACK)
        # finite differences over last-layer parameters with x_adv frozen
        step = 1e-6
        work = p.copy()
        h, k = work.weights[-1].shape
        for i in range(data.n):
            fd = np.empty((h + 1) * k)
            col = 0
            for arr in (work.weights[-1], work.biases[-1]):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + step
                    up = trades_value_last_layer(work, data.features[i:i + 1],
                                                 data.labels[i:i + 1], x_adv[i:i + 1], lam)[0]
                    arr[idx] = orig - step
                    dn = trades_value_last_layer(work, data.features[i:i + 1],
                                                 data.labels[i:i + 1], x_adv[i:i + 1], lam)[0]
                    arr[idx] = orig
                    fd[col] = (up - dn) / (2 * step)
                    col += 1
            assert model.max_rel_error(rows[i], fd) < 1e-4


def test_trades_frozen_pair_terms_match_robust_term_gradient():
    # term2 + term3 must equal the finite-difference gradient of
    # CE(f(x_adv), f(x))/lambda alone (x_adv fixed)
    lam = 3.0
    data = small_data(42, n=4, d=3, k=3)
    p = model.ModelParams.random([3, 5, 3], seed=7)
    from advcoreset import attacks

    x_adv = attacks.trades_inner_max(p, data.features, ATTACK).x_adv
    total = features._trades_rows(p, data, ObjectiveKind("trades", lam), ATTACK)
    vanilla = model.per_sample_last_layer_grad(p, data.features, data.labels)
    pair = total - vanilla

    step = 1e-6
    work = p.copy()
    h, k = work.weights[-1].shape
    for i in range(data.n):
        fd = np.empty((h + 1) * k)
        col = 0
        for arr in (work.weights[-1], work.biases[-1]):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]

                def robust_term():
                    clean = model.forward(work, data.features[i:i + 1])
                    adv = model.forward(work, x_adv[i:i + 1])
                    return float(-(clean.probs * adv.log_probs).sum() / lam)

                arr[idx] = orig + step
                up = robust_term()
                arr[idx] = orig - step
                dn = robust_term()
                arr[idx] = orig
                fd[col] = (up - dn) / (2 * step)
                col += 1
        assert model.max_rel_error(pair[i], fd) < 1e-4


def test_nan_row_reports_sample():
    feats = GradientFeatures(rows=np.ones((3, 2)))
    feats.rows[1, 0] = np.nan
    with pytest.raises(NumericError, match="sample 1"):
        features._check_rows_finite(feats.rows)


def test_batch_aggregate_identity_at_b1():
    feats = GradientFeatures(rows=np.random.default_rng(0).normal(size=(7, 3)))
    out = features.batch_aggregate(feats, 1, shuffle_seed=5)
    perm = np.concatenate(out.index_map)
    assert sorted(perm.tolist()) == list(range(7))
    assert np.array_equal(out.rows, feats.rows[perm])


def test_batch_aggregate_ceiling_partition():
    feats = GradientFeatures(rows=np.ones((10, 2)))
    out = features.batch_aggregate(feats, 3, shuffle_seed=0)
    assert [len(ix) for ix in out.index_map] == [3, 3, 3, 1]
    assert out.unit_kind == "batch"


def test_batch_aggregate_conserves_row_sum():
    rng = np.random.default_rng(3)
    feats = GradientFeatures(rows=rng.normal(size=(23, 5)))
    out = features.batch_aggregate(feats, 4, shuffle_seed=9)
    assert np.abs(out.rows.sum(axis=0) - feats.rows.sum(axis=0)).max() < 1e-10
    covered = np.sort(np.concatenate(out.index_map))
    assert np.array_equal(covered, np.arange(23))


def test_feature_file_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    feats = GradientFeatures(rows=rng.normal(size=(6, 4)))
    batched = features.batch_aggregate(feats, 2, shuffle_seed=1)
    path = tmp_path / "grads.acsf"
    features.save_features(path, batched)
    loaded = features.load_features(path)
    assert np.array_equal(loaded.rows, batched.rows)
    assert loaded.unit_kind == "batch"
    assert all(np.array_equal(a, b) for a, b in zip(loaded.index_map, batched.index_map))


def test_objective_kind_validation():
    with pytest.raises(DimensionError):
        ObjectiveKind("nonsense")
    with pytest.raises(DimensionError):
        ObjectiveKind("trades", trades_lambda=0.0)


def test_batch_index_map_must_partition():
    rows = np.ones((2, 3))
    with pytest.raises(DimensionError):
        GradientFeatures(rows=rows, unit_kind="batch",
                         index_map=[np.array([0, 1]), np.array([1])])
