import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from panel_dce.rng import GROUP_DOMAIN, UNIT_DOMAIN, counter_uniforms, derive_seed


def test_open_unit_interval():
    u = counter_uniforms(1, 0, np.arange(100_000), 1)
    assert u.min() > 0.0 and u.max() < 1.0


def test_uniform_distribution():
    u = counter_uniforms(7, 3, np.arange(50_000)[:, None], np.arange(1, 5)[None, :]).ravel()
    assert stats.kstest(u, "uniform").pvalue > 1e-4
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.02


@given(st.integers(0, 2**62), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 10**4))
@settings(max_examples=50, deadline=None)
def test_pure_function_of_key(seed, stream, unit, t):
    one = counter_uniforms(seed, stream, unit, t)
    block = counter_uniforms(seed, stream, np.arange(unit, unit + 3), t)
    assert one == block[0]


def test_keys_are_distinct():
    base = counter_uniforms(5, 0, 0, 1)
    for other in (counter_uniforms(6, 0, 0, 1), counter_uniforms(5, 1, 0, 1), counter_uniforms(5, 0, 1, 1),
                  counter_uniforms(5, 0, 0, 2), counter_uniforms(5, 0, 0, 1, GROUP_DOMAIN)):
        assert other != base
    assert counter_uniforms(5, 0, 0, 1, UNIT_DOMAIN) == base


def test_broadcast_shape():
    u = counter_uniforms(0, np.arange(3)[:, None, None], np.arange(4)[None, :, None], np.arange(1, 6)[None, None, :])
    assert u.shape == (3, 4, 5)
    assert len(np.unique(u)) == u.size


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        counter_uniforms(-1, 0, 0, 1)


def test_derive_seed():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(123, 4, 5) < 2**63
