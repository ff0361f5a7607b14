import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ddbranch.offspring import make_model
from ddbranch.simulate import simulate_coupled

FAMILIES = st.sampled_from(["geometric", "ricker", "binary_splitting"])
unit = st.floats(0.0, 1.0, exclude_max=True)
density = st.floats(0.0, 20.0)


@settings(max_examples=200, deadline=None)
@given(family=FAMILIES, x1=density, x2=density, u1=unit, u2=unit)
def test_quantile_monotone(family, x1, x2, u1, u2):
    m = make_model(family)
    (x1, x2), (u1, u2) = sorted((x1, x2)), sorted((u1, u2))
    assert m.quantile(x1, u1) <= m.quantile(x1, u2)
    assert m.quantile(x2, u1) <= m.quantile(x1, u1)


@settings(max_examples=40, deadline=None)
@given(family=FAMILIES, K=st.integers(2, 3000), seed=st.integers(0, 2**32 - 1),
       z0=st.integers(1, 50))
def test_coupled_dominance(family, K, seed, z0):
    p = simulate_coupled(make_model(family), K, 10, seed, z0=z0)
    assert np.all(p.z <= p.y)
    assert np.all(p.z >= 0)
