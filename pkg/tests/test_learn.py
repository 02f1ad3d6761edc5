import dataclasses

import numpy as np
import pytest

from mobgp.data import RegionDataset, default_synth_spec, synth_gen
from mobgp.errors import InputError, TrainingError
from mobgp.learn import (
    Adam,
    Layout,
    TrainConfig,
    _loss_grad,
    _make_batch,
    _rollout_adjoint,
    evaluate_test,
    init_params,
    loss,
    loss_gradient,
    pack,
    predict_deaths,
    rolling7,
    targets,
    train,
    unpack,
)
from mobgp.params import ParamSet


@pytest.fixture(scope="module")
def synth():
    spec = default_synth_spec(regions=3, days=40, K=2)
    data, truth = synth_gen(spec, 3)
    return spec, data, truth


def test_rolling_mean_is_trailing():
    x = np.arange(1.0, 11.0)
    r = rolling7(x)
    np.testing.assert_allclose(r[:3], [1.0, 1.5, 2.0])
    assert r[6] == pytest.approx(4.0) and r[9] == pytest.approx(7.0)
    with pytest.raises(InputError):
        rolling7([])


def test_targets_clean_corrections():
    ds = RegionDataset("1", 1000.0, [f"d{i}" for i in range(8)], np.ones((8, 1)), [0, 1, 3, 2, 4, 4, 5, 6])
    t = targets(ds)
    assert np.all(np.diff(t) >= 0)
    assert t[3] == pytest.approx((0 + 1 + 3 + 3) / 4)


def test_generator_params_have_zero_loss(synth):
    spec, data, _ = synth
    assert loss(spec.true_params, data, 30) < 1e-28


def test_pack_unpack_round_trip(synth):
    spec, data, _ = synth
    lay = Layout([d.region_id for d in data], 2)
    z = pack(spec.true_params, lay)
    back = unpack(z, lay, data[0].categories)
    np.testing.assert_allclose(pack(back, lay), z, rtol=1e-12, atol=1e-12)
    assert len(lay.names()) == lay.size


def test_gradient_matches_finite_differences(synth, rng):
    _, data, _ = synth
    lay = Layout([d.region_id for d in data], 2)
    batch = _make_batch(lay, data, range(3), 30)
    worst = 0.0
    for trial in range(10):
        z = pack(init_params(data, np.random.default_rng(trial)), lay)
        f0, g, _ = _loss_grad(z, lay, batch)
        for j in rng.choice(lay.size, 8, replace=False):
            h = 1e-6 * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            fd = (_loss_grad(zp, lay, batch, False)[0] - _loss_grad(zm, lay, batch, False)[0]) / (2 * h)
            worst = max(worst, abs(fd - g[j]) / max(abs(fd), abs(g[j]), 1e-6 * f0))
    assert worst <= 1e-5


def test_compiled_kernel_matches_python(synth):
    _, data, _ = synth
    lay = Layout([d.region_id for d in data], 2)
    batch = _make_batch(lay, data, range(3), 30)
    z = pack(init_params(data, np.random.default_rng(0)), lay)
    fast = _loss_grad(z, lay, batch)
    import mobgp.learn as learn

    orig = learn._rollout_adjoint
    try:
        learn._rollout_adjoint = _rollout_adjoint.py_func
        slow = _loss_grad(z, lay, batch)
    finally:
        learn._rollout_adjoint = orig
    assert fast[0] == pytest.approx(slow[0], rel=1e-12)
    np.testing.assert_allclose(fast[1], slow[1], rtol=1e-10, atol=1e-30)


def test_public_gradient_names(synth):
    spec, data, _ = synth
    g, names = loss_gradient(spec.true_params, data, 30)
    assert len(g) == len(names) and np.allclose(g, 0.0, atol=1e-20)


def test_loss_invariances(synth):
    spec, data, _ = synth
    params = init_params(data, np.random.default_rng(1))
    base = loss(params, data, 30)
    assert loss(params, list(reversed(data)), 30) == pytest.approx(base, rel=1e-12)
    # scale populations, observations and predictions by one factor per region
    lam = 3.0
    scaled_data = [dataclasses.replace(d, population=lam * d.population, deaths_raw=lam * d.deaths_raw) for d in data]
    per = {}
    for rid, rp in params.per_region.items():
        init = rp.init.to_json()
        for k in ("E0", "I0", "A0", "H0", "R0", "D0", "S0"):
            init[k] = lam * init[k]
        mm = dataclasses.replace(rp.mobility_map, theta=np.asarray(rp.mobility_map.theta) / lam, b=rp.mobility_map.b / lam)
        per[rid] = type(rp)(mm, type(rp.init).from_json(init))
    assert loss(ParamSet(params.global_params, per), scaled_data, 30) == pytest.approx(base, rel=1e-9)


def test_multitask_sharing(synth):
    _, data, _ = synth
    lay = Layout([d.region_id for d in data], 2)
    z = pack(init_params(data, np.random.default_rng(2)), lay)
    _, g1, _ = _loss_grad(z, lay, _make_batch(lay, data, range(3), 30))
    bumped = list(data)
    bumped[1] = dataclasses.replace(data[1], deaths_raw=data[1].deaths_raw * 1.1)
    _, g2, _ = _loss_grad(z, lay, _make_batch(lay, bumped, range(3), 30))
    assert not np.allclose(g1[:7], g2[:7], rtol=1e-3, atol=0)
    np.testing.assert_array_equal(g1[lay.region_slice(0)], g2[lay.region_slice(0)])
    assert not np.allclose(g1[lay.region_slice(1)], g2[lay.region_slice(1)], rtol=1e-3, atol=0)


def test_adam_first_step_has_learning_rate_size():
    opt = Adam(3, lr=0.1)
    z = opt.step(np.zeros(3), np.array([2.0, -5.0, 1e-3]))
    np.testing.assert_allclose(z, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_zero_epochs_returns_initialisation(synth):
    _, data, _ = synth
    cfg = TrainConfig(epochs=0, trials=1, train_days=25, test_days=10)
    best, report = train(data, cfg)
    init = init_params(data, np.random.default_rng([cfg.rng_seed, 0]), cfg.global_ranges, cfg.learn_S0)
    lay = Layout([d.region_id for d in data], 2)
    np.testing.assert_allclose(pack(best, lay), pack(init, lay), rtol=1e-12, atol=1e-12)
    assert report.best_trial == 0


def test_training_is_deterministic(synth):
    _, data, _ = synth
    cfg = TrainConfig(epochs=200, trials=2, train_days=25, test_days=10, log_every=50)
    a = train(data, cfg)
    b = train(data, cfg)
    assert a[1].to_csv() == b[1].to_csv()
    assert a[0].to_json() == b[0].to_json()
    assert a[1].to_csv().splitlines()[0] == "trial,epoch,train_loss,test_loss"


def test_training_improves_and_beats_constant_baseline(synth):
    _, data, _ = synth
    cfg = TrainConfig(epochs=20000, trials=3, train_days=25, test_days=10, log_every=1000)
    best, report = train(data, cfg)
    tr = next(t for t in report.trials if t.trial == report.best_trial)
    assert tr.history[-1][1] < tr.history[0][1]
    fitted = evaluate_test(best, data, 25, 10)
    for d in data:
        X = targets(d)
        const = float(np.mean(((X[26:36] - X[25]) / d.population) ** 2))
        assert fitted[d.region_id] < const


def test_all_trials_failing_raises(synth, monkeypatch):
    _, data, _ = synth
    import mobgp.learn as learn

    def broken(*a, **k):
        f, g, D = orig(*a, **k)
        return f, None if g is None else np.full_like(g, np.nan), D

    orig = learn._loss_grad
    monkeypatch.setattr(learn, "_loss_grad", broken)
    with pytest.raises(TrainingError):
        train(data, TrainConfig(epochs=3, trials=2, train_days=25, test_days=10))


def test_short_data_rejected(synth):
    _, data, _ = synth
    with pytest.raises(InputError):
        train(data, TrainConfig(train_days=35, test_days=10))


def test_evaluate_test_window(synth):
    spec, data, _ = synth
    with pytest.raises(InputError):
        evaluate_test(spec.true_params, data, 30, 0)
    scores = evaluate_test(spec.true_params, data, 25, 10)
    assert max(scores.values()) < 1e-28


def test_fixed_population_mode(synth):
    _, data, _ = synth
    best, _ = train(data, TrainConfig(epochs=20, trials=1, train_days=25, test_days=10, learn_S0=False))
    for d in data:
        assert best.region(d.region_id).init.S0 == d.population


def test_prediction_reproduces_generator(synth):
    spec, data, truth = synth
    for d in data:
        np.testing.assert_allclose(predict_deaths(spec.true_params, d, 39), truth[d.region_id], rtol=1e-12)


def test_config_round_trip_and_unknown_keys():
    cfg = TrainConfig(epochs=5)
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(InputError):
        TrainConfig.from_json({"epoch": 5})
