import numpy as np
import pytest

from prft import nets
from prft.errors import ContractViolationError, DivergenceError
from prft.nets import NetworkParams, NetworkSpec


def finite_difference_grads(spec, params, x, gout, h=1e-5):
    """Central-difference oracle for d<gout, f(x)>/dparams."""

    def objective(p):
        y, _ = nets.forward(p, x, spec.activation)
        return float(np.dot(gout, y))

    w_grads, b_grads = [], []
    for li in range(len(params.weights)):
        gw = np.zeros_like(params.weights[li])
        for idx in np.ndindex(*gw.shape):
            wp = [w.copy() for w in params.weights]
            wp[li][idx] += h
            up = NetworkParams(tuple(wp), params.biases)
            wm = [w.copy() for w in params.weights]
            wm[li][idx] -= h
            dn = NetworkParams(tuple(wm), params.biases)
            gw[idx] = (objective(up) - objective(dn)) / (2 * h)
        w_grads.append(gw)
        gb = np.zeros_like(params.biases[li])
        for idx in np.ndindex(*gb.shape):
            bp = [b.copy() for b in params.biases]
            bp[li][idx] += h
            up = NetworkParams(params.weights, tuple(bp))
            bm = [b.copy() for b in params.biases]
            bm[li][idx] -= h
            dn = NetworkParams(params.weights, tuple(bm))
            gb[idx] = (objective(up) - objective(dn)) / (2 * h)
        b_grads.append(gb)
    return NetworkParams(tuple(w_grads), tuple(b_grads))


def test_init_deterministic():
    spec = NetworkSpec((4, 8, 2))
    p1 = nets.init_params(spec, 7)
    p2 = nets.init_params(spec, 7)
    for a, b in zip(p1.weights, p2.weights):
        assert np.array_equal(a, b)


def test_init_biases_zero_and_bounds():
    spec = NetworkSpec((10, 6, 3))
    p = nets.init_params(spec, 0)
    for b in p.biases:
        assert np.all(b == 0.0)
    for w, fan_in in zip(p.weights, spec.layer_sizes[:-1]):
        assert np.all(np.abs(w) <= np.sqrt(6.0 / fan_in))


def test_parameter_count():
    p = nets.init_params(NetworkSpec((4, 8, 2)), 1)
    assert p.parameter_count == 4 * 8 + 8 + 8 * 2 + 2


def test_forward_zero_params():
    spec = NetworkSpec((3, 4, 2))
    zero = NetworkParams(
        weights=(np.zeros((3, 4)), np.zeros((4, 2))),
        biases=(np.zeros(4), np.zeros(2)))
    y, _ = nets.forward(zero, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(y, np.zeros(2))


def test_forward_single_linear_layer():
    p = NetworkParams(weights=(np.array([[2.0]]),), biases=(np.array([1.0]),))
    y, _ = nets.forward(p, np.array([3.0]))
    assert y == pytest.approx([7.0])


def test_forward_dimension_mismatch():
    p = nets.init_params(NetworkSpec((4, 2)), 0)
    with pytest.raises(ContractViolationError):
        nets.forward(p, np.zeros(5))


def test_forward_batch_matches_loop():
    spec = NetworkSpec((5, 7, 3), "tanh")
    p = nets.init_params(spec, 2)
    xs = np.random.default_rng(0).normal(size=(4, 5))
    batched, _ = nets.forward(p, xs, "tanh")
    for i in range(4):
        single, _ = nets.forward(p, xs[i], "tanh")
        assert np.allclose(batched[i], single)


def test_backward_zero_output_gradient():
    spec = NetworkSpec((3, 5, 2))
    p = nets.init_params(spec, 1)
    _, tape = nets.forward(p, np.ones(3))
    grads, _ = nets.backward(p, tape, np.zeros(2))
    assert all(np.all(g == 0) for g in grads.weights + grads.biases)


def test_backward_single_layer_closed_form():
    p = NetworkParams(weights=(np.array([[1.0, 2.0], [3.0, 4.0]]),),
                      biases=(np.array([0.5, -0.5]),))
    x = np.array([2.0, -1.0])
    g = np.array([1.0, 3.0])
    _, tape = nets.forward(p, x)
    grads, input_grad = nets.backward(p, tape, g)
    assert np.allclose(grads.weights[0], np.outer(x, g))
    assert np.allclose(grads.biases[0], g)
    assert np.allclose(input_grad, p.weights[0] @ g)


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in rng.integers(2, 6, size=3))
    spec = NetworkSpec(sizes, "tanh")
    p = nets.init_params(spec, seed)
    x = rng.normal(size=sizes[0])
    gout = rng.normal(size=sizes[-1])
    _, tape = nets.forward(p, x, "tanh")
    grads, _ = nets.backward(p, tape, gout, "tanh")
    oracle = finite_difference_grads(spec, p, x, gout)
    for a, o in zip(grads.weights + grads.biases, oracle.weights + oracle.biases):
        denom = np.maximum(np.abs(o), 1e-6)
        assert np.max(np.abs(a - o) / denom) < 1e-4


def test_adam_zero_gradient_keeps_params():
    p = nets.init_params(NetworkSpec((3, 2)), 0)
    opt = nets.init_optimizer(p)
    zero = NetworkParams(tuple(np.zeros_like(w) for w in p.weights),
                         tuple(np.zeros_like(b) for b in p.biases))
    p2, opt2 = nets.adam_step(p, zero, opt)
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, p2.weights))
    assert opt2.step == 1


def test_adam_first_step_magnitude():
    p = NetworkParams(weights=(np.array([[1.0, 1.0]]),), biases=(np.array([0.0, 0.0]),))
    g = NetworkParams(weights=(np.array([[0.3, -0.7]]),), biases=(np.array([0.1, -0.1]),))
    opt = nets.init_optimizer(p, learning_rate=1e-3)
    p2, _ = nets.adam_step(p, g, opt)
    step = p2.weights[0] - p.weights[0]
    assert np.allclose(step, -1e-3 * np.sign(g.weights[0]), atol=1e-6)


def test_adam_minimizes_scalar_quadratic():
    # f(w) = (w - 3)^2 from w = 0.
    p = NetworkParams(weights=(np.array([[0.0]]),), biases=(np.zeros(1),))
    opt = nets.init_optimizer(p, learning_rate=1e-1)
    for _ in range(200):
        w = p.weights[0][0, 0]
        g = NetworkParams(weights=(np.array([[2 * (w - 3.0)]]),), biases=(np.zeros(1),))
        p, opt = nets.adam_step(p, g, opt)
    assert abs(p.weights[0][0, 0] - 3.0) < 0.5


def test_adam_rejects_nonfinite_gradient():
    p = nets.init_params(NetworkSpec((2, 2)), 0)
    opt = nets.init_optimizer(p)
    bad = NetworkParams((np.full((2, 2), np.nan),), (np.zeros(2),))
    with pytest.raises(DivergenceError):
        nets.adam_step(p, bad, opt)


def test_soft_sync_tau_one_copies():
    t = nets.init_params(NetworkSpec((3, 2)), 0)
    o = nets.init_params(NetworkSpec((3, 2)), 1)
    synced = nets.soft_sync(t, o, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(synced.weights, o.weights))


def test_soft_sync_fixed_point_and_midpoint():
    o = nets.init_params(NetworkSpec((3, 2)), 1)
    same = nets.soft_sync(o, o, 0.005)
    assert all(np.allclose(a, b) for a, b in zip(same.weights, o.weights))
    zeros = NetworkParams(tuple(np.zeros_like(w) for w in o.weights),
                          tuple(np.zeros_like(b) for b in o.biases))
    twos = NetworkParams(tuple(np.full_like(w, 2.0) for w in o.weights),
                         tuple(np.full_like(b, 2.0) for b in o.biases))
    mid = nets.soft_sync(zeros, twos, 0.5)
    assert all(np.all(w == 1.0) for w in mid.weights)


def test_checkpoint_roundtrip(tmp_path):
    spec = NetworkSpec((6, 4, 3), "tanh")
    p = nets.init_params(spec, 9)
    path = tmp_path / "net.bin"
    nets.save_params(str(path), spec, p)
    spec2, p2 = nets.load_params(str(path))
    assert spec2 == spec
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, p2.weights))
    assert all(np.array_equal(a, b) for a, b in zip(p.biases, p2.biases))
    assert path.read_bytes()[:4] == b"PRFT"


def test_checkpoint_bad_magic():
    with pytest.raises(ContractViolationError):
        nets.params_from_bytes(b"XXXX" + b"\0" * 64)


def test_spec_validation():
    with pytest.raises(ContractViolationError):
        NetworkSpec((5,))
    with pytest.raises(ContractViolationError):
        NetworkSpec((5, 0))
    with pytest.raises(ContractViolationError):
        NetworkSpec((5, 3), "sigmoid")
