"""Inverse map: sampling contracts, weighted minibatches and GAN training behaviour."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import quadratic_task
from mins.data import CategoricalSpace, ContinuousSpace, Dataset, DatasetError
from mins.diffcore import Graph
from mins.invmap import (GanConfig, GanTrainer, HeadMismatchError, InverseMap, Standardizer, load_inverse_map,
                         sample, save_inverse_map, train_inverse_map, weighted_minibatch)
from mins.oracles import SequenceTask
from mins.reweight import training_weights

SMALL = dict(hidden=(64, 64), lr_g=1e-3, lr_d=1e-3)


def _untrained(space, **kw):
    cfg = GanConfig(hidden=(16,), **kw)
    return InverseMap(space, cfg, Standardizer.fit(np.array([0.0, 1.0, 2.0])))


# -- sampling ----------------------------------------------------------------


def test_sample_zero_is_empty():
    inv = _untrained(ContinuousSpace((0.0, 0.0), (1.0, 2.0)))
    assert sample(inv, 1.0, n=0).shape == (0, 2)


def test_sample_is_deterministic():
    inv = _untrained(ContinuousSpace((0.0,), (1.0,)))
    a = sample(inv, 1.0, n=10, rng=np.random.default_rng(4))
    b = sample(inv, 1.0, n=10, rng=np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)


@given(st.floats(-1e6, 1e6), st.integers(0, 2 ** 31))
def test_continuous_samples_respect_bounds(y, seed):
    space = ContinuousSpace((-5.0, 0.0, 3.0), (10.0, 15.0, 3.5))
    inv = _untrained(space)
    x = sample(inv, y, n=20, rng=np.random.default_rng(seed))
    assert space.contains(x).all()


def test_categorical_samples_are_valid_and_relaxed_on_simplex():
    space = CategoricalSpace(5, 3)
    inv = _untrained(space)
    x, relaxed = inv.sample_with_relaxed(0.5, n=30, rng=np.random.default_rng(0))
    assert space.contains(x).all()
    r = relaxed.reshape(30, 5, 3)
    np.testing.assert_allclose(r.sum(-1), 1.0)
    np.testing.assert_array_equal(r.argmax(-1), x)


def test_sample_errors():
    inv = _untrained(ContinuousSpace((0.0,), (1.0,)))
    with pytest.raises(ValueError):
        sample(inv, np.nan, n=2)
    with pytest.raises(HeadMismatchError):
        sample(inv, 0.0, c=np.zeros(2), n=2)
    with pytest.raises(HeadMismatchError):
        sample(inv, 0.0, n=2, space=CategoricalSpace(2, 2))


# -- weighted minibatches ----------------------------------------------------


def test_single_positive_weight_fills_batch():
    w = np.zeros(7)
    w[4] = 0.3
    assert (weighted_minibatch(w, 50, np.random.default_rng(0)) == 4).all()


def test_uniform_weight_frequencies():
    n = 100_000
    idx = weighted_minibatch(np.ones(10), n, np.random.default_rng(1))
    freq = np.bincount(idx, minlength=10) / n
    assert np.all(np.abs(freq - 0.1) < 3 * np.sqrt(0.1 * 0.9 / n))


def test_two_to_one_weight_frequencies():
    n = 30_000
    idx = weighted_minibatch([2.0, 1.0], n, np.random.default_rng(2))
    f = np.mean(idx == 0)
    assert abs(f - 2 / 3) < 3 * np.sqrt(2 / 9 / n)


def test_identity_weights_match_uniform_sampler():
    for n in (1, 7, 1000):
        a = weighted_minibatch(np.ones(n), 64, np.random.default_rng(9))
        b = np.floor(np.random.default_rng(9).random(64) * n).astype(int)
        np.testing.assert_array_equal(a, b)


def test_minibatch_errors():
    with pytest.raises(ValueError):
        weighted_minibatch(np.zeros(3), 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        weighted_minibatch([1.0, -1.0], 4, np.random.default_rng(0))


# -- adversarial loss --------------------------------------------------------


def test_constant_half_discriminator_gives_zero_generator_gradient():
    d = quadratic_task(50, 0)
    trainer = GanTrainer.create(d, GanConfig(hidden=(16, 16)))
    disc = trainer.discriminator
    last = sorted(k for k in disc.params if k.endswith(".W"))[-1]
    disc.params[last] = np.zeros_like(disc.params[last])
    disc.params[last[:-1] + "b"] = np.zeros_like(disc.params[last[:-1] + "b"])
    inv = trainer.inverse_map
    rng = np.random.default_rng(0)
    g = Graph()
    cond = g.const(inv.y_std.encode(d.y[:8]))
    fake = inv.build(g, g.const(rng.normal(size=(8, inv.d_z))), cond)
    logit = disc.build(g, fake, cond, frozen=True)
    np.testing.assert_allclose(1 / (1 + np.exp(-logit.value)), 0.5)
    grads = g.backward(g.mean(g.softplus(g.neg(logit))))
    for name in inv.params:
        np.testing.assert_array_equal(grads.get(name, 0.0), 0.0)


# -- training ----------------------------------------------------------------


def test_identity_weights_equal_unweighted_training():
    d = quadratic_task(100, 1)
    cfg = GanConfig(hidden=(8,), steps=5)
    a = train_inverse_map(d, None, cfg)
    b = train_inverse_map(d, np.ones(len(d)), cfg)
    for k in a.inverse_map.params:
        np.testing.assert_array_equal(a.inverse_map.params[k], b.inverse_map.params[k])


def test_training_is_deterministic_and_finite():
    d = quadratic_task(200, 2)
    cfg = GanConfig(hidden=(16,), steps=30, seed=5)
    a, b = train_inverse_map(d, None, cfg), train_inverse_map(d, None, cfg)
    assert [r.g_loss for r in a.trace] == [r.g_loss for r in b.trace]
    assert all(np.isfinite([r.d_loss, r.g_loss]).all() for r in a.trace)
    assert len(a.trace) == 30


def test_empty_and_mismatched_training_errors():
    with pytest.raises(DatasetError):
        train_inverse_map(Dataset(ContinuousSpace((0.0,), (1.0,)), np.zeros((0, 1)), []), None, GanConfig(steps=1))
    d = quadratic_task(20, 0)
    with pytest.raises(ValueError):
        train_inverse_map(d, np.ones(3), GanConfig(hidden=(4,), steps=1))
    trainer = GanTrainer.create(d, GanConfig(hidden=(4,)))
    other = Dataset(ContinuousSpace((0.0,), (2.0,)), [[1.0]], [0.0])
    with pytest.raises(HeadMismatchError):
        trainer.train(other, steps=1)


def test_config_validation():
    with pytest.raises(ValueError):
        GanConfig(lr_g=0.0)
    with pytest.raises(ValueError):
        GanConfig(hidden=(0,))
    assert GanConfig().noise_level(CategoricalSpace(2, 2)) == 0.1
    assert GanConfig().noise_level(ContinuousSpace((0.0,), (1.0,))) == 0.0


def test_save_load_round_trip(tmp_path):
    d = quadratic_task(100, 0)
    r = train_inverse_map(d, None, GanConfig(hidden=(8,), steps=3))
    save_inverse_map(tmp_path / "inv", r.inverse_map, r.discriminator)
    inv, disc = load_inverse_map(tmp_path / "inv")
    assert disc is not None
    a = sample(r.inverse_map, -0.3, n=5, rng=np.random.default_rng(0))
    b = sample(inv, -0.3, n=5, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    assert inv.y_std == r.inverse_map.y_std


def test_quadratic_inverse_conditions_on_y():
    d = quadratic_task(2000, 0)
    r = train_inverse_map(d, None, GanConfig(steps=3000, batch_size=128, seed=0, **SMALL))
    x = sample(r.inverse_map, -0.25, n=500, rng=np.random.default_rng(1))
    assert np.mean(np.abs(np.abs(x[:, 0]) - 0.5)) < 0.1


def test_categorical_head_recovers_unique_maximizer():
    pwm = np.zeros((3, 4))
    pwm[:, 2] = 1.0
    task = SequenceTask(pwm, (0, 1), np.zeros((4, 4)))
    all_seqs = task.index_to_sequence(np.arange(64))
    scores = task.evaluate(all_seqs)
    assert np.flatnonzero(scores == scores.max()).tolist() == [int("222", 4)]
    X = task.space.sample_uniform(1000, np.random.default_rng(0))
    d = Dataset(task.space, X, task.evaluate(X))
    r = train_inverse_map(d, training_weights(d), GanConfig(steps=2000, seed=0, **SMALL))
    x, relaxed = r.inverse_map.sample_with_relaxed(d.y.max(), n=100, rng=np.random.default_rng(2))
    hard = relaxed.reshape(100, 3, 4).argmax(-1)
    assert np.mean((hard == 2).all(axis=1)) >= 0.8


def test_disjoint_regions_follow_the_condition():
    space = ContinuousSpace((-1.0,), (1.0,))
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(1000, 1))
    d = Dataset(space, X, np.sign(X[:, 0]))
    r = train_inverse_map(d, None, GanConfig(steps=800, seed=0, **SMALL))
    assert (sample(r.inverse_map, 1.0, n=500, rng=np.random.default_rng(3)) > 0).mean() >= 0.9
    assert (sample(r.inverse_map, -1.0, n=500, rng=np.random.default_rng(3)) < 0).mean() >= 0.9
