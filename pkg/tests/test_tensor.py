"""Autodiff engine: every primitive against central finite differences,
double backprop through input gradients, and graph bookkeeping."""

import numpy as np
import pytest

from artifactgen.nn import (
    Tensor,
    backward,
    concat,
    fold1d,
    gather_rows,
    grad,
    input_gradient,
    leaky_relu,
    matmul,
    no_grad,
    silu,
    unfold1d,
)


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar f(arrays) w.r.t. every entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def check_grads(build, arrays, rtol=1e-4, atol=1e-7):
    """Compare autodiff gradients of scalar build(tensors) against FD."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(tensors)
    analytic = [g.data for g in grad(out, tensors)]

    def f(arrs):
        with no_grad():
            return build([Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(f, [a.copy() for a in arrays])
    for a, n in zip(analytic, numeric):
        assert np.allclose(a, n, rtol=rtol, atol=atol), f"analytic {a}\nnumeric {n}"


RNG = np.random.default_rng(42)


class TestBasics:
    def test_square_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        backward(x * x)
        assert x.grad.data == 6.0

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x + x)

    def test_disconnected_parameter_zero_grad(self):
        x = Tensor(2.0, requires_grad=True)
        w = Tensor(5.0, requires_grad=True)
        (gx, gw) = grad(x * x, [x, w])
        assert gx.data == 4.0 and gw.data == 0.0

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor(2.0, requires_grad=True)
        backward(x * x)
        backward(x * x * x)
        assert x.grad.data == 4.0 + 12.0

    def test_no_grad_blocks_recording(self):
        x = Tensor(1.0, requires_grad=True)
        with no_grad():
            y = x * x
        assert not y.requires_grad

    def test_detach_cuts_graph(self):
        x = Tensor(3.0, requires_grad=True)
        y = (x * x).detach() * x
        backward(y)
        assert x.grad.data == 9.0  # only the outer factor differentiates


class TestPrimitiveGradients:
    def test_elementwise_binary(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((3, 4)) + 3.0
        check_grads(lambda t: (t[0] + t[1] * t[0] - t[1] / t[0]).sum(),
                    [a + 5.0, b])

    def test_broadcasting(self):
        a = RNG.standard_normal((2, 3, 4))
        b = RNG.standard_normal((3, 1))
        check_grads(lambda t: (t[0] * t[1] + t[1]).sum(), [a, b])

    def test_unary_chain(self):
        a = RNG.uniform(0.5, 2.0, size=(5,))
        check_grads(lambda t: (t[0].exp().log() * t[0].sqrt()
                               + t[0].tanh() + t[0].sigmoid()).sum(), [a])

    def test_pow_and_neg(self):
        a = RNG.uniform(0.5, 2.0, size=(4,))
        check_grads(lambda t: ((-t[0]) ** 3 + t[0] ** 0.5).sum(), [a])

    def test_abs_away_from_zero(self):
        a = RNG.standard_normal((6,)) + np.sign(RNG.standard_normal(6)) * 0.5
        check_grads(lambda t: t[0].abs().sum(), [a])

    def test_leaky_relu_away_from_kink(self):
        a = np.array([-2.0, -0.5, 0.3, 1.7])
        check_grads(lambda t: (leaky_relu(t[0], 0.2) ** 2).sum(), [a])

    def test_silu(self):
        a = RNG.standard_normal((5,))
        check_grads(lambda t: silu(t[0]).sum(), [a])

    def test_reductions(self):
        a = RNG.standard_normal((3, 4, 2))
        check_grads(lambda t: (t[0].sum(axis=1) ** 2).sum(), [a])
        check_grads(lambda t: (t[0].mean(axis=(0, 2)) ** 2).sum(), [a])
        check_grads(lambda t: t[0].sum(axis=2, keepdims=True).mean(), [a])

    def test_shape_ops(self):
        a = RNG.standard_normal((2, 6))
        check_grads(lambda t: (t[0].reshape((3, 4)).swapaxes(0, 1) ** 2).sum(), [a])
        check_grads(lambda t: (t[0].broadcast_to((5, 2, 6)) ** 2).sum(), [a])

    def test_narrow_and_pad(self):
        a = RNG.standard_normal((2, 3, 8))
        check_grads(lambda t: (t[0].narrow(2, 2, 4) ** 2).sum(), [a])
        check_grads(lambda t: (t[0].pad_axis(2, 1, 3) ** 2).sum(), [a])

    def test_concat(self):
        a = RNG.standard_normal((2, 3))
        b = RNG.standard_normal((2, 5))
        check_grads(lambda t: (concat([t[0], t[1]], axis=1) ** 2).sum(), [a, b])

    def test_matmul_2d(self):
        a = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((4, 2))
        check_grads(lambda t: (matmul(t[0], t[1]) ** 2).sum(), [a, b])

    def test_matmul_broadcast_batch(self):
        w = RNG.standard_normal((5, 12))
        x = RNG.standard_normal((2, 12, 3))
        check_grads(lambda t: (matmul(t[0], t[1]) ** 2).sum(), [w, x])

    def test_unfold_fold_adjoint_pair(self):
        x = RNG.standard_normal((2, 3, 10))
        check_grads(lambda t: (unfold1d(t[0], 4, 2) ** 2).sum(), [x])
        cols = RNG.standard_normal((2, 3 * 4, 4))
        check_grads(lambda t: (fold1d(t[0], 10, 4, 2) ** 2).sum(), [cols])
        # exact adjointness: <unfold(x), y> == <x, fold(y)>
        y = RNG.standard_normal((2, 12, 4))
        lhs = float((unfold1d(Tensor(x), 4, 2).data * y).sum())
        rhs = float((x * fold1d(Tensor(y), 10, 4, 2).data).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_gather_rows(self):
        table = RNG.standard_normal((6, 4))
        idx = np.array([0, 3, 3, 5])
        check_grads(lambda t: (gather_rows(t[0], idx) ** 2).sum(), [table])


class TestInputGradient:
    def test_linear_critic_input_gradient_is_weight(self):
        w = Tensor(RNG.standard_normal(7), requires_grad=True)
        gx = input_gradient(lambda x: (w * x).sum(), Tensor(RNG.standard_normal(7)))
        assert np.allclose(gx.data, w.data, rtol=1e-12)

    def test_half_norm_squared_gradient_is_input(self):
        x = Tensor(RNG.standard_normal(5))
        gx = input_gradient(lambda t: (t * t).sum() * 0.5, x)
        assert np.allclose(gx.data, x.data, rtol=1e-12)

    def test_linear_penalty_closed_form(self):
        # f(x) = w.x, penalty (|w|-1)^2 -> dpenalty/dw = 2(|w|-1) w / |w|
        w_val = np.array([1.2, -0.8, 2.0])
        w = Tensor(w_val, requires_grad=True)
        gx = input_gradient(lambda x: (w * x).sum(), Tensor(np.ones(3)))
        penalty = ((gx * gx).sum().sqrt() - 1.0) ** 2
        backward(penalty)
        norm = np.linalg.norm(w_val)
        expected = 2.0 * (norm - 1.0) * w_val / norm
        assert np.allclose(w.grad.data, expected, rtol=1e-10)

    def test_double_backprop_matches_fd_on_two_layer_critic(self):
        # FD of the penalty scalar w.r.t. critic parameters at 1e-3 relative
        w1 = RNG.standard_normal((4, 6)) * 0.7
        b1 = RNG.standard_normal(6) * 0.1
        w2 = RNG.standard_normal((6, 1)) * 0.7
        x_in = RNG.standard_normal((3, 4))

        def build_penalty(tensors):
            tw1, tb1, tw2 = tensors
            xt = Tensor(x_in, requires_grad=True)
            score = matmul((matmul(xt, tw1) + tb1).tanh(), tw2).sum()
            (gx,) = grad(score, [xt], create_graph=True)
            norms = (gx * gx).sum(axis=1).sqrt()
            return ((norms - 1.0) ** 2).mean()

        tensors = [Tensor(w1, requires_grad=True), Tensor(b1, requires_grad=True),
                   Tensor(w2, requires_grad=True)]
        out = build_penalty(tensors)
        analytic = [g.data for g in grad(out, tensors)]

        def f(arrs):
            return build_penalty([Tensor(a, requires_grad=True) for a in arrs]).item()

        numeric = numeric_grad(f, [w1.copy(), b1.copy(), w2.copy()], h=1e-5)
        for a, n in zip(analytic, numeric):
            assert np.allclose(a, n, rtol=1e-3, atol=1e-6)


class TestDeterminism:
    def test_bit_identical_gradients(self):
        def run():
            rng = np.random.default_rng(123)
            w = Tensor(rng.standard_normal((8, 8)), requires_grad=True)
            x = Tensor(rng.standard_normal((4, 8)))
            loss = (matmul(x, w).tanh() ** 2).sum()
            backward(loss)
            return w.grad.data.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1, g2)
