import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coopident.dq_algebra import Pose, quat_to_rotmat

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
vec4 = arrays(np.float64, 4, elements=finite)
vec8 = arrays(np.float64, 8, elements=finite)


@st.composite
def unit_quats(draw):
    q = draw(arrays(np.float64, 4, elements=st.floats(-1.0, 1.0)))
    n = np.linalg.norm(q)
    if n < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
        n = 1.0
    return q / n


@st.composite
def poses(draw, scale=2.0):
    q = draw(unit_quats())
    t = draw(arrays(np.float64, 3, elements=st.floats(-scale, scale)))
    return Pose(quat_to_rotmat(q), t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
