"""Finite-difference checks of the tape primitives in isolation."""

import numpy as np
import pytest

from vclab import autodiff as ad

rng = np.random.default_rng(0)


def fd_gradient(build, arr, step=1e-6):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = build().item()
        flat[i] = old - step
        fm = build().item()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * step)
    return g


def assert_grad(build, arrays, tol=2e-6):
    out = build()
    out.backward()
    for arr, var in zip(arrays, build.leaves):
        fd = fd_gradient(build, arr)
        an = var.grad if var.grad is not None else np.zeros_like(arr)
        denom = max(np.abs(an).max(), np.abs(fd).max(), 1e-10)
        assert np.abs(an - fd).max() / denom < tol


def test_conv2d_gradients():
    x = rng.normal(size=(2, 3, 5, 8))
    w = rng.normal(size=(4, 3, 3, 4))
    b = rng.normal(size=(4,))

    def build():
        xv, wv, bv = ad.Var(x), ad.Var(w), ad.Var(b)
        build.leaves = [xv, wv, bv]
        y = ad.conv2d(xv, wv, bv, (2, 2), (1, 1, 1, 2))
        return ad.sum_(ad.mul(y, y))

    assert_grad(build, [x, w, b])


def test_conv2d_transpose_is_adjoint_and_differentiable():
    x = rng.normal(size=(2, 3, 5, 8))
    w = rng.normal(size=(4, 3, 3, 4))
    u = rng.normal(size=(2, 4, 3, 4))
    cx = ad.conv2d(ad.Var(x), ad.Var(w), ad.Var(np.zeros(4)), (2, 2), (1, 1, 1, 2)).value
    ctu = ad.conv2d_transpose(
        ad.Var(u), ad.Var(w), ad.Var(np.zeros(3)), (2, 2), (1, 1, 1, 2), (5, 8)
    ).value
    assert abs((cx * u).sum() - (x * ctu).sum()) < 1e-10

    xt = rng.normal(size=(2, 4, 3, 4))
    bt = rng.normal(size=(3,))

    def build():
        xv, wv, bv = ad.Var(xt), ad.Var(w), ad.Var(bt)
        build.leaves = [xv, wv, bv]
        y = ad.conv2d_transpose(xv, wv, bv, (2, 2), (1, 1, 1, 2), (5, 8))
        return ad.sum_(ad.mul(y, ad.sigmoid(y)))

    assert_grad(build, [xt, w, bt])


def test_batchnorm_glu_softmax_chain():
    z = rng.normal(size=(2, 6, 4, 4))
    gamma = rng.normal(size=(6,))
    beta = rng.normal(size=(6,))

    def build():
        zv, gv, bv = ad.Var(z), ad.Var(gamma), ad.Var(beta)
        build.leaves = [zv, gv, bv]
        out, _, _ = ad.batchnorm_train(zv, gv, bv, 1e-5)
        gated = ad.glu(out, axis=1)
        sm = ad.softmax(gated, axis=1)
        return ad.mean(ad.neg(ad.log(ad.clip(sm, 1e-7, 1 - 1e-7))))

    assert_grad(build, [z, gamma, beta])


def test_misc_primitives():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(2, 4))
    m = rng.normal(size=(4, 5))

    def build():
        v1, v2, vm = ad.Var(a), ad.Var(b), ad.Var(m)
        build.leaves = [v1, v2, vm]
        cat = ad.concat([v1, v2], axis=0)
        sel = ad.take_rows(cat, np.array([0, 2, 4, 2]))
        nar = ad.narrow(ad.matmul(sel, vm), 1, 1, 3)
        tr = ad.transpose(nar, (1, 0))
        return ad.sum_(ad.mul(tr, ad.exp(ad.mul(tr, 0.1))))

    assert_grad(build, [a, b, m])


def test_batchnorm_matches_composite_formulation():
    z = rng.normal(size=(3, 4, 2, 5))
    gamma = rng.normal(size=(4,))
    beta = rng.normal(size=(4,))
    fused, m, v = ad.batchnorm_train(ad.Var(z), ad.Var(gamma), ad.Var(beta), 1e-5)
    mean = z.mean(axis=(0, 2, 3), keepdims=True)
    var = ((z - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    ref = (z - mean) / np.sqrt(var + 1e-5) * gamma.reshape(1, 4, 1, 1) + beta.reshape(1, 4, 1, 1)
    np.testing.assert_allclose(fused.value, ref, atol=1e-14)
    np.testing.assert_allclose(m, mean.reshape(-1), atol=1e-15)
    np.testing.assert_allclose(v, var.reshape(-1), atol=1e-15)


def test_no_grad_mode_drops_graph():
    x = ad.Var(np.ones(3))
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert y._parents == () and y._vjp is None
    y2 = ad.mul(x, 2.0)
    assert y2._parents != ()


def test_backward_requires_scalar():
    x = ad.Var(np.ones(3))
    with pytest.raises(ValueError):
        ad.mul(x, 2.0).backward()
