"""Benchmark functions and synthetic tasks: frozen values, optima, purity."""

import itertools

import numpy as np
import pytest

from mins.oracles import (BRANIN_MINIMIZERS, HARTMANN6_MINIMIZER, ContextualBanditTask, ManifoldTask,
                          OracleError, SequenceTask, branin, get_oracle, hartmann6, make_branin,
                          make_hartmann6)

# Reference values produced by a separate scalar script (plain floats, no numpy).
HARTMANN6_AT_HALF = -0.5053149917022333
HARTMANN6_AT_PUBLISHED = -3.322368011391339
BRANIN_AT_ORIGIN = 55.602112642270264

# Whether each all-same-symbol sequence scores strictly below the optimum,
# seeds 0..4 of the L=3, A=4 task (brute force over 64 sequences).
ALL_SAME_BELOW = {
    0: [True, True, False, True],
    1: [True, True, True, True],
    2: [True, True, True, True],
    3: [True, True, True, True],
    4: [True, True, True, True],
}


# -- Branin / Hartmann -------------------------------------------------------


def test_branin_minimizers_agree():
    vals = [float(branin(np.array(x))) for x in BRANIN_MINIMIZERS]
    for v in vals:
        assert v == pytest.approx(0.397887, abs=1e-5)


def test_branin_origin():
    assert float(branin(np.zeros(2))) == pytest.approx(BRANIN_AT_ORIGIN, abs=1e-9)


def test_hartmann6_frozen_values():
    assert float(hartmann6(np.full(6, 0.5))) == pytest.approx(HARTMANN6_AT_HALF, abs=1e-12)
    assert float(hartmann6(np.array(HARTMANN6_MINIMIZER))) == pytest.approx(HARTMANN6_AT_PUBLISHED, abs=1e-12)
    assert float(hartmann6(np.array(HARTMANN6_MINIMIZER))) == pytest.approx(-3.32237, abs=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_hartmann6_minimizer_beats_random_points(seed):
    pts = np.random.default_rng(seed).uniform(size=(10_000, 6))
    assert hartmann6(np.array(HARTMANN6_MINIMIZER)) <= hartmann6(pts).min()


def test_out_of_bounds_rejected():
    with pytest.raises(OracleError):
        branin(np.array([11.0, 0.0]))
    with pytest.raises(OracleError):
        hartmann6(np.full(6, 1.1))
    with pytest.raises(OracleError):
        hartmann6(np.zeros(5))


def test_minimization_benchmarks_are_negated():
    o = make_branin()
    x = np.array([[1.0, 2.0]])
    assert o.evaluate(x)[0] == -branin(x)[0]
    assert o.raw(x)[0] == branin(x)[0]
    assert o.f_star == pytest.approx(-0.397887, abs=1e-5)


def test_known_optimum_witnesses_verify():
    make_branin().verify_optimum(1e-9)
    h = make_hartmann6()
    h.verify_optimum(1e-9)
    assert h.f_star == pytest.approx(3.32237, abs=1e-4)
    assert h.f_star >= -HARTMANN6_AT_PUBLISHED


# -- manifold task -----------------------------------------------------------


def test_manifold_on_and_off():
    task = ManifoldTask(seed=0)
    rng = np.random.default_rng(0)
    U = rng.uniform(-1, 1, size=(20, task.k))
    on = task.manifold_distance(task.embed(U))
    assert on.max() < 1e-3
    off = task.manifold_distance(np.clip(task.embed(U) + rng.normal(0.0, 0.5, size=(20, task.D)),
                                         task.space.lo, task.space.hi))
    assert off.min() > 10 * max(on.max(), 1e-4)


def test_manifold_known_optimum():
    task = ManifoldTask(seed=3)
    np.testing.assert_allclose(task.x_star, task.embed(task.u_opt[None])[0])
    task.verify_optimum(1e-6)
    U = np.random.default_rng(1).uniform(-1, 1, size=(50, task.k))
    assert (task.evaluate(task.embed(U)) <= task.f_star + 1e-9).all()


def test_manifold_sampler_avoids_optimum_hole():
    task = ManifoldTask(seed=1)
    X, y = task.sample_on_manifold(200, np.random.default_rng(0))
    assert task.space.contains(X).all()
    assert y.max() < task.f_star - 0.1


def test_manifold_preconditions():
    with pytest.raises(ValueError):
        ManifoldTask(k=5)
    with pytest.raises(ValueError):
        ManifoldTask(D=8)


# -- sequence task -----------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_sequence_optimum_matches_brute_force(seed):
    task = SequenceTask.from_seed(seed, 3, 4)
    best, arg = -np.inf, None
    for q in itertools.product(range(4), repeat=3):
        s = sum(task.pwm[i, a] for i, a in enumerate(q))
        s += task.pair_table[q[task.pair[0]], q[task.pair[1]]]
        if s > best:
            best, arg = s, q
    assert task.f_star == pytest.approx(best, abs=1e-12)
    assert tuple(task.x_star) == arg


@pytest.mark.parametrize("seed", range(5))
def test_sequence_relabeling_symmetry(seed):
    task = SequenceTask.from_seed(seed, 4, 4)
    perm = np.random.default_rng(seed).permutation(4)
    # symbol a in the original task is symbol perm[a] in the relabeled one
    pwm = np.empty_like(task.pwm)
    pwm[:, perm] = task.pwm
    table = np.empty_like(task.pair_table)
    table[np.ix_(perm, perm)] = task.pair_table
    relabeled = SequenceTask(pwm, task.pair, table)
    X = np.random.default_rng(seed + 10).integers(0, 4, size=(100, 4))
    np.testing.assert_array_equal(task.evaluate(X), relabeled.evaluate(perm[X]))
    assert relabeled.f_star == task.f_star


@pytest.mark.parametrize("seed", sorted(ALL_SAME_BELOW))
def test_all_same_symbol_sequences(seed):
    task = SequenceTask.from_seed(seed, 3, 4)
    below = [bool(task.evaluate(np.full((1, 3), a))[0] < task.f_star) for a in range(4)]
    assert below == ALL_SAME_BELOW[seed]


def test_sequence_rank_fraction():
    task = SequenceTask.from_seed(0, 4, 4)
    assert task.rank_fraction(task.x_star[None])[0] == 0.0
    worst = task.index_to_sequence(int(np.argmin(task.all_scores())))
    assert task.rank_fraction(worst[None])[0] == pytest.approx(1 - 1 / 256)


def test_sequence_space_limit():
    with pytest.raises(ValueError):
        SequenceTask.from_seed(0, 13, 4)


# -- contextual bandit -------------------------------------------------------


def test_bandit_correct_arm_scores_one():
    task = ContextualBanditTask(seed=0)
    C = task.sample_contexts(500, np.random.default_rng(0))
    np.testing.assert_array_equal(task.evaluate(task.correct_arm(C)[:, None], C), 1.0)


@pytest.mark.parametrize("rate,expected", [(None, 0.1), (0.49, 0.49)])
def test_bandit_logging_rates(rate, expected):
    task = ContextualBanditTask(seed=1, arms=10)
    rng = np.random.default_rng(2)
    n = 20_000
    C = task.sample_contexts(n, rng)
    score = task.evaluate(task.logging_policy(C, rng, correct_rate=rate), C)
    se = np.sqrt(expected * (1 - expected) / n)
    assert abs(score.mean() - expected) < 3 * se


def test_bandit_needs_context():
    with pytest.raises(OracleError):
        ContextualBanditTask().evaluate(np.array([[0]]))


# -- purity and registry -----------------------------------------------------


@pytest.mark.parametrize("name", ["branin", "hartmann6", "manifold:k2d32:seed7", "seq:L8A4:seed3"])
def test_oracles_are_pure(name):
    o = get_oracle(name)
    X = o.space.sample_uniform(16, np.random.default_rng(0))
    a, b = o.evaluate(X), o.evaluate(X.copy())
    assert a.tobytes() == b.tobytes()


def test_registry_parses_names():
    assert get_oracle("bandit:c2a10:seed1").arms == 10
    m = get_oracle("manifold:k2d32:seed7")
    assert (m.k, m.D, m.seed) == (2, 32, 7)
    assert get_oracle("seq:L8A4:seed3").space.length == 8
    with pytest.raises(KeyError):
        get_oracle("rosenbrock")
