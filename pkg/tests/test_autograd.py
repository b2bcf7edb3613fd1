"""
Tests for the tensor core: element-wise ops, matmul, conv1d, softmax and the tape.
"""
import numpy as np
import pytest

from casa_forecaster.autograd import BACKWARD_RULES, Tape, Tensor, finite_diff_check
from casa_forecaster.autograd import functional as F
from casa_forecaster.autograd.gradcheck import analytic_gradient, audit_gradients, numerical_gradient
from casa_forecaster.exceptions import InvalidKernel, NonScalarLoss, ShapeMismatch


def naive_conv1d(x, w, b):
    c_out, c_in, k = w.shape
    length = x.shape[1]
    pad = (k - 1) // 2
    padded = np.zeros((c_in, length + 2 * pad))
    padded[:, pad:pad + length] = x
    out = np.zeros((c_out, length))
    for o in range(c_out):
        for t in range(length):
            total = b[o]
            for c in range(c_in):
                for j in range(k):
                    total += w[o, c, j] * padded[c, t + j]
            out[o, t] = total
    return out


def scaled_error(f, x):
    """max |analytic - numeric| over the largest numeric gradient entry."""
    analytic = analytic_gradient(f, x)
    numeric = numerical_gradient(f, x)
    return np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))


def test_elementwise_examples():
    """Test the componentwise definitions of add, mul and relu."""
    assert F.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).numpy().tolist() == [4.0, 6.0]
    assert F.mul(Tensor([2.0, 3.0]), Tensor([0.0, 1.0])).numpy().tolist() == [0.0, 3.0]
    assert F.relu(Tensor([-1.0, 0.0, 2.0])).numpy().tolist() == [0.0, 0.0, 2.0]
    assert F.elementwise('scale', Tensor([1.0, -2.0]), 3.0).numpy().tolist() == [3.0, -6.0]
    assert F.elementwise('sub', Tensor([5.0]), Tensor([2.0])).numpy().tolist() == [3.0]


def test_elementwise_broadcast_and_errors():
    """Test that trailing-dimension broadcasting works and incompatible shapes raise."""
    out = F.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
    assert out.shape == (2, 3)
    assert np.array_equal(out.numpy()[1], [1.0, 2.0, 3.0])
    with pytest.raises(ShapeMismatch):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeMismatch):
        # The output shape must equal the left operand's shape
        F.mul(Tensor(np.zeros(3)), Tensor(np.zeros((2, 3))))


def test_elementwise_gradients():
    """Test element-wise backward rules against central differences."""
    rng = np.random.default_rng(0)
    other = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
    weights = Tensor(rng.standard_normal((3, 4)))
    x = rng.standard_normal((3, 4))
    for op in (F.add, F.sub, F.mul, F.div):
        assert finite_diff_check(lambda t: F.sum(F.mul(op(t, other), weights)), x) < 1e-5
    assert finite_diff_check(lambda t: F.sum(F.mul(F.gelu(t), weights)), x) < 1e-5
    assert finite_diff_check(lambda t: F.sum(F.scale(t, -2.5)), x) < 1e-5
    # Gradient w.r.t. a broadcast operand
    row = rng.standard_normal(4)
    base = Tensor(rng.standard_normal((3, 4)))
    assert finite_diff_check(lambda t: F.sum(F.mul(F.mul(base, t), weights)), row) < 1e-5


def test_matmul_examples():
    """Test identity, a hand-expanded product and the inner-dimension check."""
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(F.matmul(Tensor(a), Tensor(np.eye(3))).numpy(), a)
    out = F.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.numpy().tolist() == [[17.0], [39.0]]
    with pytest.raises(ShapeMismatch):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient():
    """Test that the gradient of sum(A.B) w.r.t. A and B matches finite differences."""
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    assert finite_diff_check(lambda t: F.sum(F.matmul(t, Tensor(b))), a) < 1e-6
    assert finite_diff_check(lambda t: F.sum(F.matmul(Tensor(a), t)), b) < 1e-6
    # Batched left operand with a shared right operand
    batch = rng.standard_normal((2, 3, 4))
    weights = Tensor(rng.standard_normal((2, 3, 2)))
    assert scaled_error(lambda t: F.sum(F.mul(F.matmul(Tensor(batch), t), weights)), b) < 1e-8


def test_conv1d_examples():
    """Test the brute-force example and the zero-kernel case."""
    out = F.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 0.0, -1.0]]]), Tensor([0.0]))
    assert out.numpy().tolist() == [[-2.0, -2.0, 2.0]]
    zero = F.conv1d(Tensor(np.ones((2, 5))), Tensor(np.zeros((3, 2, 3))), Tensor([7.0, 7.0, 7.0]))
    assert np.all(zero.numpy() == 7.0)


def test_conv1d_errors():
    """Test that even kernels and channel or bias mismatches raise."""
    with pytest.raises(InvalidKernel):
        F.conv1d(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 1, 2))))
    with pytest.raises(ShapeMismatch):
        F.conv1d(Tensor(np.ones((2, 4))), Tensor(np.ones((1, 3, 3))))
    with pytest.raises(ShapeMismatch):
        F.conv1d(Tensor(np.ones((1, 4))), Tensor(np.ones((2, 1, 3))), Tensor(np.ones(3)))


def test_conv1d_matches_naive_loop():
    """Test conv1d against a triple-loop oracle on random small shapes."""
    rng = np.random.default_rng(2)
    for _ in range(30):
        c_in, c_out = rng.integers(1, 5, size=2)
        length = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5]))
        x = rng.standard_normal((c_in, length))
        w = rng.standard_normal((c_out, c_in, k))
        b = rng.standard_normal(c_out)
        out = F.conv1d(Tensor(x), Tensor(w), Tensor(b)).numpy()
        assert np.max(np.abs(out - naive_conv1d(x, w, b))) < 1e-12


def test_conv1d_batched_equals_per_instance():
    """Test that a batched call equals stacking single-instance calls."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 2, 6))
    w = Tensor(rng.standard_normal((4, 2, 3)))
    batched = F.conv1d(Tensor(x), w).numpy()
    for i in range(3):
        assert np.allclose(batched[i], F.conv1d(Tensor(x[i]), w).numpy(), atol=1e-14)


def test_conv1d_gradients():
    """Test input, weight and bias gradients of conv1d against central differences."""
    rng = np.random.default_rng(4)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 6))
        w = rng.standard_normal((4, 3, 3))
        b = rng.standard_normal(4)
        r = Tensor(rng.standard_normal((2, 4, 6)))
        assert scaled_error(lambda t: F.sum(F.mul(F.conv1d(t, Tensor(w), Tensor(b)), r)), x) < 1e-8
        assert scaled_error(lambda t: F.sum(F.mul(F.conv1d(Tensor(x), t, Tensor(b)), r)), w) < 1e-8
        assert scaled_error(lambda t: F.sum(F.mul(F.conv1d(Tensor(x), Tensor(w), t), r)), b) < 1e-8
    single = rng.standard_normal((2, 5))
    weight = Tensor(rng.standard_normal((1, 2, 3)))
    assert finite_diff_check(lambda t: F.sum(F.conv1d(t, weight)), single) < 1e-5


def test_softmax_examples():
    """Test symmetry, overflow safety and normalization of softmax."""
    assert F.softmax(Tensor([0.0, 0.0])).numpy().tolist() == [0.5, 0.5]
    big = F.softmax(Tensor([1000.0, 0.0])).numpy()
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] < 1e-300
    rng = np.random.default_rng(5)
    out = F.softmax(Tensor(rng.standard_normal((6, 9)) * 3), axis=-1).numpy()
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-12
    assert np.all((out > 0) & (out < 1))
    cols = F.softmax(Tensor(rng.standard_normal((6, 9))), axis=0).numpy()
    assert np.max(np.abs(cols.sum(axis=0) - 1.0)) < 1e-12
    with pytest.raises(ValueError):
        F.softmax(Tensor(np.zeros(3)), axis=2)


def test_softmax_gradient():
    """Test the softmax-then-first-component oracle."""
    rng = np.random.default_rng(6)
    mask = Tensor(np.eye(1, 5)[0])
    x = rng.standard_normal(5)
    assert finite_diff_check(lambda t: F.sum(F.mul(F.softmax(t), mask)), x) < 1e-6


def test_layer_norm_gradient():
    """Test the fused layer-norm backward against central differences."""
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 6))
    gamma = Tensor(rng.uniform(0.5, 1.5, size=6))
    beta = Tensor(rng.standard_normal(6))
    r = Tensor(rng.standard_normal((3, 6)))
    assert scaled_error(lambda t: F.sum(F.mul(F.layer_norm(t, gamma, beta), r)), x) < 1e-8
    assert scaled_error(lambda t: F.sum(F.mul(F.layer_norm(Tensor(x), t, beta), r)), gamma.numpy()) < 1e-8


def test_backward_simple_functionals():
    """Test grad of sum(x) and sum(x*x)."""
    tape = Tape()
    x = tape.watch(np.array([1.0, -2.0, 3.0]))
    tape.backward(F.sum(x))
    assert np.array_equal(tape.grad(x), np.ones(3))

    tape = Tape()
    x = tape.watch(np.array([1.0, -2.0, 3.0]))
    tape.backward(F.sum(F.mul(x, x)))
    assert np.array_equal(tape.grad(x), np.array([2.0, -4.0, 6.0]))


def test_backward_accumulates_shared_subexpressions():
    """Test that a value used twice receives the sum of both gradients."""
    rng = np.random.default_rng(8)
    x = rng.standard_normal(4)

    def f(t):
        y = F.mul(t, t)
        return F.sum(F.add(y, F.mul(y, t)))

    assert finite_diff_check(f, x) < 1e-6
    tape = Tape()
    w = tape.watch(x)
    tape.backward(f(w))
    assert np.allclose(tape.grad(w), 2 * x + 3 * x ** 2, atol=1e-12)


def test_backward_contract():
    """Test non-scalar losses, unreachable leaves and topological node ids."""
    tape = Tape()
    x = tape.watch(np.ones((2, 2)))
    unused = tape.watch(np.ones(3))
    y = F.mul(x, x)
    with pytest.raises(NonScalarLoss):
        tape.backward(y)
    tape.backward(F.sum(y))
    assert np.array_equal(tape.grad(unused), np.zeros(3))
    assert np.array_equal(tape.grad(Tensor(np.ones(2))), np.zeros(2))
    for node_id, node in enumerate(tape.nodes):
        assert all(parent is None or parent < node_id for parent in node.parents)


def test_constants_are_untracked():
    """Test that ops on untracked tensors do not touch any tape."""
    out = F.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    assert not out.tracked
    with pytest.raises(ShapeMismatch):
        Tensor([1.0, 2.0]).item()


def test_finite_diff_check_examples():
    """Test the oracle on an exact quadratic."""
    assert finite_diff_check(lambda t: F.sum(F.mul(t, t)), np.array([1.0, 2.0, 3.0])) < 1e-8


def test_backward_rules_are_looked_up_at_backward_time(monkeypatch):
    """Test that a corrupted registered rule is caught by the oracle."""
    x = np.random.default_rng(9).standard_normal(5)
    assert finite_diff_check(lambda t: F.sum(F.gelu(t)), x) < 1e-6
    monkeypatch.setitem(BACKWARD_RULES, 'gelu', lambda ctx, grad: (2.0 * grad,))
    assert finite_diff_check(lambda t: F.sum(F.gelu(t)), x) > 1e-2


def test_audit_measures_each_coordinate_on_its_own(monkeypatch):
    """Test that a wrong rule on a small-gradient coordinate fails the audit."""
    params = {'w': np.array([2.0, 0.3])}

    def loss_fn(tensors):
        w = tensors['w']
        return F.add(F.sum(F.mul(w, Tensor([1.0, 0.0]))), F.sum(F.mul(F.gelu(w), Tensor([0.0, 1e-5]))))

    [(name, error, scale)] = audit_gradients(loss_fn, params)
    assert name == 'w' and error < 1e-4 and scale == pytest.approx(1.0)

    monkeypatch.setitem(BACKWARD_RULES, 'gelu', lambda ctx, grad: (grad,))
    [(_, error, _)] = audit_gradients(loss_fn, params)
    assert error > 1e-2


def test_audit_ignores_exact_shift_directions():
    """Test that a softmax shift direction with zero gradient passes the audit."""
    target = Tensor([0.1, 0.7, 0.2])

    def loss_fn(tensors):
        logits = F.add(tensors['logits'], tensors['shift'])
        return F.sum(F.mul(F.softmax(logits), target))

    params = {'logits': np.array([0.5, -1.0, 2.0]), 'shift': np.array([0.3])}
    results = {name: (error, scale) for name, error, scale in audit_gradients(loss_fn, params)}
    assert results['logits'][0] < 1e-4
    assert results['shift'] == (0.0, pytest.approx(0.0, abs=1e-12))
