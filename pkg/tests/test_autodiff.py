import numpy as np
import pytest

from xlhbf import autodiff as ad
from xlhbf.autodiff import NoAdjointError, Tensor, backward
from xlhbf.gradcheck import check, network_loss_case, primitive_cases, relative_error

from conftest import cplx


@pytest.mark.parametrize("case", range(len(primitive_cases(np.random.default_rng(0)))))
def test_primitive_gradcheck(case):
    name, f, params = primitive_cases(np.random.default_rng(1234))[case]
    assert check(f, params) < 1e-6, name


def test_quadratic_bowl_descent(rng):
    W = Tensor(cplx(rng, 2, 2), requires_grad=True)

    def f():
        return ad.real(ad.trace(ad.herm(W) @ W))
    L0 = f().value
    backward(f())
    W.value = W.value - 0.1 * W.grad
    assert f().value < L0


def test_cogradient_convention(rng):
    w0 = cplx(rng, 3)
    W = Tensor(w0.copy(), requires_grad=True)
    backward(ad.sum_(ad.real(W * ad.conj(W))))
    # |w|^2 = a^2 + b^2 -> dL/da + j dL/db = 2w
    assert np.allclose(W.grad, 2 * w0)


def test_independent_block_zero_grad(rng):
    a = Tensor(cplx(rng, 3), requires_grad=True)
    b = Tensor(cplx(rng, 3), requires_grad=True)
    L = ad.sum_(ad.abs_(a))
    backward(L + 0.0 * ad.real(ad.sum_(b)) * 0.0)
    assert np.all(b.grad == 0)


def test_unused_leaf_has_no_grad(rng):
    a = Tensor(cplx(rng, 3), requires_grad=True)
    b = Tensor(cplx(rng, 3), requires_grad=True)
    backward(ad.sum_(ad.abs_(a)))
    assert b.grad is None


def test_backward_linearity(rng):
    p = Tensor(cplx(rng, 4, 2), requires_grad=True)
    A = cplx(rng, 2, 2)

    def L1():
        return ad.sum_(ad.abs_(p @ A))

    def L2():
        return ad.real(ad.sum_(ad.ctanh(p) * 2.0))
    grads = []
    for f in (L1, L2, lambda: 1.5 * L1() - 0.25 * L2()):
        p.grad = None
        backward(f())
        grads.append(p.grad.copy())
    assert np.allclose(grads[2], 1.5 * grads[0] - 0.25 * grads[1], atol=1e-12)


def test_no_adjoint_error(rng):
    a = Tensor(cplx(rng, 2), requires_grad=True)
    bad = Tensor.from_op("mystery", a.value.real, (a,))
    with pytest.raises(NoAdjointError) as e:
        backward(ad.sum_(bad))
    assert "mystery" in str(e.value)


def test_nonscalar_loss_rejected(rng):
    a = Tensor(cplx(rng, 2), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ad.abs_(a))


def test_complex_loss_rejected(rng):
    a = Tensor(cplx(rng, 2), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ad.sum_(a))


def test_graph_acyclic_and_reuse(rng):
    # the same node used twice accumulates both contributions
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    backward(ad.sum_(y * y))   # x^4 -> 4 x^3
    assert np.allclose(x.grad, [32.0])


def test_ctanh_examples():
    assert ad.ctanh(Tensor(np.zeros(3, complex))).value.tolist() == [0j] * 3
    t = np.linspace(-2, 2, 5)
    out = ad.ctanh(Tensor(t.astype(complex))).value
    assert np.allclose(out.real, np.tanh(t)) and np.all(out.imag == 0)
    assert abs(ad.ctanh(Tensor(np.array([100 + 100j]))).value[0] - (1 + 1j)) < 1e-12


def test_whiten2x2_inverse_sqrt(rng):
    C = np.array([[2.0, 0.3], [0.3, 0.5]])
    w = ad.whiten2x2(Tensor(np.array([C[0, 0]])), Tensor(np.array([C[1, 1]])),
                     Tensor(np.array([C[0, 1]])))
    W = np.array([[w[0].value[0], w[2].value[0]], [w[2].value[0], w[1].value[0]]])
    assert np.allclose(W @ C @ W, np.eye(2), atol=1e-12)
    assert np.allclose(W, W.T)


def test_relative_error_metric():
    assert relative_error([np.array([1.0, 1e-9])], [np.array([1.0, 0.0])]) == pytest.approx(1e-6)
    assert relative_error([np.array([1.0])], [np.array([2.0])]) == pytest.approx(0.5)


def test_full_network_gradcheck_small():
    f, params = network_loss_case(0)
    assert check(f, params) < 1e-5
