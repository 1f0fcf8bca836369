import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lungsound import tensor as T
from lungsound.tensor.optim import AdamState, adam_step

# scalar Adam on f(p) = p^2 from p = 1 with lr 0.1, iterated in plain floats
P_AFTER_100 = 0.002936675681102579


def test_zero_gradient_leaves_parameters():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState()
    for _ in range(5):
        adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])
    assert state.t == 5


def test_first_step_magnitude_is_lr():
    p = np.array([0.0])
    adam_step([p], [np.array([1.0])], AdamState())
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_scalar_convergence():
    p = np.array([1.0])
    state = AdamState(lr=0.1)
    for _ in range(100):
        adam_step([p], [2 * p.copy()], state)
    assert abs(p[0]) < 0.05
    assert p[0] == pytest.approx(P_AFTER_100, rel=1e-9)


def test_none_gradient_counts_as_zero():
    p, q = np.array([1.0]), np.array([1.0])
    s1, s2 = AdamState(), AdamState()
    adam_step([p], [None], s1)
    adam_step([q], [np.zeros(1)], s2)
    assert p[0] == q[0] == 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_optimizer_wrapper_minimizes_quadratic():
    w = T.Tensor(np.array([3.0, -4.0]), requires_grad=True, dtype=np.float64)
    opt = T.Adam([w], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        T.backward(T.tsum(T.square(w)))
        opt.step()
    assert np.abs(w.data).max() < 0.05


@settings(max_examples=30)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.integers(1, 20))
def test_second_moment_nonnegative(g, steps):
    p = np.zeros(len(g))
    state = AdamState()
    for _ in range(steps):
        adam_step([p], [np.array(g)], state)
    assert state.t == steps and np.all(state.v[0] >= 0)
