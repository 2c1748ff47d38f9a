import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simbalab import obsnorm
from simbalab.obsnorm import ObservationNormalizer, RunningStats, rs_apply, rs_update


def stream(values):
    values = np.asarray(values, dtype=float)
    s = RunningStats.zeros(values.shape[1])
    for v in values:
        s = rs_update(s, v)
    return s


def test_single_sample():
    s = stream([[1.0]])
    assert (s.mu[0], s.sigma2[0], s.t) == (1.0, 0.0, 1)


def test_two_samples():
    s = stream([[1.0], [2.0]])
    assert s.mu[0] == 1.5 and s.sigma2[0] == 0.25


def test_three_samples_and_apply():
    s = stream([[1.0], [2.0], [3.0]])
    assert abs(s.mu[0] - 2.0) <= 1e-12
    assert abs(s.sigma2[0] - 2.0 / 3.0) <= 1e-12
    expected = 1.0 / math.sqrt(2.0 / 3.0 + 1e-8)
    assert abs(rs_apply(s, [3.0])[0] - expected) < 1e-12
    assert abs(expected - 1.2247) < 1e-4


def test_first_observation_normalizes_to_zero(rng):
    o = rng.standard_normal(4)
    s = rs_update(RunningStats.zeros(4), o)
    assert np.array_equal(rs_apply(s, o), np.zeros(4))
    assert np.array_equal(rs_apply(s, s.mu), np.zeros(4))


def test_apply_is_pure(rng):
    s = stream(rng.standard_normal((10, 3)))
    before = (s.mu.copy(), s.sigma2.copy(), s.t)
    rs_apply(s, rng.standard_normal(3))
    assert np.array_equal(s.mu, before[0]) and np.array_equal(s.sigma2, before[1])
    assert s.t == before[2]


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        rs_update(RunningStats.zeros(3), np.zeros(4))


@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
def test_welford_matches_two_pass(x):
    s = stream(x)
    np.testing.assert_allclose(s.mu, x.mean(axis=0), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(s.sigma2, x.var(axis=0), rtol=1e-6, atol=1e-6)
    assert np.all(s.sigma2 >= 0)


@given(st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((200, 3)) * [1e-2, 1.0, 1e2] + [5.0, -1.0, 0.0]
    a, b = stream(x), stream(x[rng.permutation(200)])
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.sigma2, b.sigma2, rtol=1e-9)


def test_freeze_for_eval(rng):
    s = stream(rng.standard_normal((5, 2)))
    frozen = obsnorm.freeze_for_eval(s)
    o = rng.standard_normal(2)
    for _ in range(100):
        frozen = frozen.update(o)
    assert frozen.t == 5
    assert np.array_equal(frozen.apply(o), rs_apply(s, o))


def test_normalizer_kinds_basic(rng, tmp_path):
    o = rng.standard_normal(3)
    assert np.array_equal(obsnorm.normalize_for("none", o), o)
    path = tmp_path / "stats.csv"
    obsnorm.save_oracle_stats(path, RunningStats(np.zeros(3), np.ones(3)))
    n = ObservationNormalizer("oracle", 3, oracle_path=path)
    np.testing.assert_allclose(n.for_acting(o), o / math.sqrt(1 + 1e-8), rtol=0, atol=1e-15)
    n.observe(o)
    assert n.stats.t == 0
    ln = obsnorm.normalize_for("layernorm-obs", np.array([1.0, 2.0, 3.0]))
    assert abs(ln.mean()) < 1e-12


def test_oracle_file_errors(tmp_path):
    with pytest.raises(obsnorm.OracleStatsError):
        ObservationNormalizer("oracle", 3, oracle_path=tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("dim,mean,var\n0,0,1\n1,0,1\n")
    with pytest.raises(obsnorm.OracleStatsError):
        ObservationNormalizer("oracle", 3, oracle_path=bad)
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("d,m,v\n0,0,1\n")
    with pytest.raises(obsnorm.OracleStatsError):
        obsnorm.load_oracle_stats(wrong, 1)


def test_env_wrapper_vs_rsnorm_after_drift(rng):
    """Same early transition replayed late: env-wrapper keeps its stale value."""
    a = ObservationNormalizer("rsnorm", 2)
    b = ObservationNormalizer("env-wrapper-rsnorm", 2)
    early = [rng.standard_normal(2) for _ in range(50)]
    stored_a, stored_b = [], []
    for o in early:
        for n, s in ((a, stored_a), (b, stored_b)):
            n.observe(o)
            s.append(n.to_buffer(o))
    for _ in range(500):
        o = rng.standard_normal(2) * 3.0 + 10.0
        a.observe(o)
        b.observe(o)
    late_a = a.for_training(np.array([stored_a[10]]))
    late_b = b.for_training(np.array([stored_b[10]]))
    assert np.array_equal(stored_a[10], early[10])           # rsnorm stores raw values
    assert np.abs(late_a - late_b).max() > 0.5


def test_rsnorm_buffer_never_normalized():
    n = ObservationNormalizer("rsnorm", 2)
    sentinel = np.array([1e6, 1.0])
    for _ in range(10):
        n.observe(sentinel)
        assert n.to_buffer(sentinel)[0] == 1e6


def test_fixed_initial_n_stops_updating(rng):
    n = ObservationNormalizer("fixed-initial-n", 2, n_initial=20)
    for _ in range(50):
        n.observe(rng.standard_normal(2))
    assert n.stats.t == 20


def test_batchnorm_train_and_act(rng):
    n = ObservationNormalizer("batchnorm-obs", 2)
    batch = rng.standard_normal((64, 2)) * 4.0 + 1.0
    out = n.for_training(batch)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    assert not np.array_equal(n.bn_mu, np.zeros(2))
    frozen_mu = n.bn_mu.copy()
    n.for_training(batch, update_batch_stats=False)
    assert np.array_equal(frozen_mu, n.bn_mu)


def test_frozen_normalizer_does_not_observe(rng):
    n = ObservationNormalizer("rsnorm", 2)
    n.observe(rng.standard_normal(2))
    n.frozen = True
    n.observe(rng.standard_normal(2))
    assert n.stats.t == 1
    n.frozen = False
    n.observe(rng.standard_normal(2))
    assert n.stats.t == 2


def test_state_round_trip(rng):
    n = ObservationNormalizer("rsnorm", 3)
    for _ in range(7):
        n.observe(rng.standard_normal(3))
    m = ObservationNormalizer("rsnorm", 3)
    m.load_state_arrays(n.state_arrays())
    assert m.stats.t == 7 and np.array_equal(m.stats.mu, n.stats.mu)


def test_unknown_kind():
    with pytest.raises(ValueError):
        ObservationNormalizer("whitening", 2)
