import numpy as np

from actsched.nn.autodiff import Tensor, mul, record, sum_
from actsched.nn.optim import Adam, adam_step
from actsched.nn.params import ParameterStore


def test_zero_gradient_leaves_params_unchanged():
    param = np.array([1.5, -2.0])
    m, v = np.zeros(2), np.zeros(2)
    out = adam_step(param, np.zeros(2), m, v, t=1)
    np.testing.assert_array_equal(out, param)


def test_single_step_hand_value():
    # t=1, m=0.1, v=0.001, bias-corrected to 1 and 1: step = lr * 1/(1+eps)
    param = np.array([0.0])
    m, v = np.zeros(1), np.zeros(1)
    out = adam_step(param, np.array([1.0]), m, v, t=1, lr=0.001)
    expected = -0.001 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(out, [expected], rtol=1e-12)
    assert abs(out[0] + 0.001) < 1e-9


def test_quadratic_descent_monotone_after_warmup():
    store = ParameterStore(dtype=np.float64)
    w = store.add("w", np.array([1.0]))
    opt = Adam(store, lr=0.01)
    history = []
    for _ in range(300):
        store.zero_grads()
        with record() as tape:
            loss = sum_(mul(w, w))
        tape.backward(loss)
        opt.step()
        history.append(abs(float(w.value[0])))
    tail = history[20:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    assert tail[-1] < 0.01


def test_adam_moments_survive_state_round_trip():
    store = ParameterStore(dtype=np.float32)
    rng = np.random.default_rng(0)
    store.linear("lin", 4, 3, rng)
    opt = Adam(store)
    for name, t in store.items():
        t.grad = np.ones_like(t.value)
    opt.step()
    state = opt.state_arrays()
    opt2 = Adam(store)
    opt2.load_state(state)
    assert opt2.t == 1
    for name in opt.moments:
        np.testing.assert_array_equal(opt.moments[name][0], opt2.moments[name][0])
        np.testing.assert_array_equal(opt.moments[name][1], opt2.moments[name][1])
