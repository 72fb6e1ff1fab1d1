import math

import numpy as np
import pytest

from advcali.autodiff import Tape, Tensor, backward
from advcali.exceptions import NumericError, ShapeError, TapeStateError
from advcali.graph import gcn_normalize

from conftest import fd_grad, random_graph, rel_err


def _param(rng, shape, name="p", lo=None):
    v = rng.normal(size=shape)
    if lo is not None:
        v = np.abs(v) + lo
    return Tensor(v, requires_grad=True, name=name)


def _ops(rng, n, m, k):
    """Each case: (builder(tape) -> 1x1, params)."""
    adj = gcn_normalize(random_graph(n, 0.5, int(rng.integers(1 << 30))))
    cases = {}
    a, b = _param(rng, (n, m)), _param(rng, (m, k))
    w1, w2, w3 = (rng.normal(size=s) for s in [(n, k), (n, m), (n, m)])
    cases["matmul"] = (lambda t, a=a, b=b: t.wsum(t.matmul(a, b), w1), [a, b])
    x = _param(rng, (n, m))
    cases["spmm"] = (lambda t, x=x: t.wsum(t.spmm(adj, x), w2), [x])
    p, q = _param(rng, (n, m)), _param(rng, (n, m))
    cases["add"] = (lambda t, p=p, q=q: t.wsum(t.add(p, q), w2), [p, q])
    cases["sub"] = (lambda t, p=p, q=q: t.wsum(t.sub(p, q), w2), [p, q])
    cases["mul"] = (lambda t, p=p, q=q: t.wsum(t.mul(p, q), w2), [p, q])
    d = _param(rng, (n, m), lo=0.5)
    cases["div"] = (lambda t, p=p, d=d: t.wsum(t.div(p, d), w2), [p, d])
    bias = _param(rng, (1, m))
    cases["add_row"] = (lambda t, p=p, bias=bias: t.wsum(t.add_row(p, bias), w2), [p, bias])
    tt = _param(rng, (n, 1), lo=0.5)
    cases["div_rows"] = (lambda t, p=p, tt=tt: t.wsum(t.div_rows(p, tt), w2), [p, tt])
    # keep relu / abs arguments away from the kink so central differences are valid
    r = Tensor(np.where(rng.random((n, m)) < 0.5, -1, 1) * (0.1 + rng.random((n, m))), requires_grad=True)
    cases["relu"] = (lambda t, r=r: t.wsum(t.relu(r), w2), [r])
    cases["softplus"] = (lambda t, p=p: t.wsum(t.softplus(p), w2), [p])
    cases["log"] = (lambda t, d=d: t.wsum(t.log(d), w2), [d])
    s1 = _param(rng, (1, 1))
    cases["square"] = (lambda t, s1=s1: t.square(s1), [s1])
    sa = Tensor(np.array([[0.3 + rng.random()]]) * rng.choice([-1, 1]), requires_grad=True)
    cases["abs"] = (lambda t, sa=sa: t.abs(sa), [sa])
    scale = rng.normal(size=(1, m))
    cases["affine"] = (lambda t, p=p: t.wsum(t.affine(p, scale, 0.7), w2), [p])
    cases["softmax"] = (lambda t, p=p: t.wsum(t.softmax(p), w2), [p])
    # distinct row maxima so the argmax is locally constant
    sep = Tensor(rng.normal(size=(n, m)) + 2.0 * np.eye(n, m)[:, rng.permutation(m)] * 3, requires_grad=True)
    wn = rng.normal(size=(n, 1))
    cases["rowmax"] = (lambda t, sep=sep: t.wsum(t.rowmax(sep)[0], wn), [sep])
    wv, wm = rng.normal(size=n), rng.normal(size=(1, m))
    cases["wsum_axis0"] = (lambda t, p=p: t.wsum(t.wsum(p, wv, axis=0), wm), [p])
    return cases


@pytest.mark.parametrize("seed", range(20))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, m, k = (int(v) for v in rng.integers(2, 9, size=3))
    for name, (build, params) in _ops(rng, n, m, k).items():
        tape = Tape()
        loss = build(tape)
        grads = backward(tape, loss, params)

        def f():
            return build(Tape()).item()

        for p in params:
            fd = fd_grad(f, p.value)
            assert rel_err(grads[p], fd) < 1e-5, name


def test_forward_examples():
    t = Tape()
    assert t.softmax(np.array([[0.0, 0.0]])).value.tolist() == [[0.5, 0.5]]
    assert math.isclose(t.softplus(np.zeros((1, 1))).item(), math.log(2.0), rel_tol=0, abs_tol=1e-15)
    assert t.div_rows(np.array([[2.0, 4.0]]), np.array([[2.0]])).value.tolist() == [[1.0, 2.0]]


def test_matmul_gradient_is_outer_product():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x = rng.normal(size=(4, 1))
    tape = Tape()
    g = backward(tape, tape.wsum(tape.matmul(w, x)), [w])[w]
    assert np.allclose(g, np.outer(np.ones(3), x[:, 0]), rtol=0, atol=1e-15)


def test_subgradient_conventions():
    x = Tensor(np.array([[-1.0, 0.0, 2.0]]), requires_grad=True)
    tape = Tape()
    assert backward(tape, tape.wsum(tape.relu(x)), [x])[x].tolist() == [[0.0, 0.0, 1.0]]
    z = Tensor(np.zeros((1, 1)), requires_grad=True)
    tape = Tape()
    assert backward(tape, tape.abs(z), [z])[z].tolist() == [[0.0]]
    for row, expect in (([3.0, 1.0], [1.0, 0.0]), ([2.0, 2.0, 1.0], [1.0, 0.0, 0.0])):
        r = Tensor(np.array([row]), requires_grad=True)
        tape = Tape()
        out, idx = tape.rowmax(r)
        assert backward(tape, tape.wsum(out), [r])[r][0].tolist() == expect
        assert idx[0] == 0


def test_linearity():
    rng = np.random.default_rng(3)
    p = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = rng.normal(size=(5, 3))

    def l1(t):
        return t.wsum(t.softmax(p), w)

    def l2(t):
        return t.wsum(t.softplus(p))

    a, b = 0.7, -2.5
    t = Tape()
    combo = t.add(t.affine(l1(t), a), t.affine(l2(t), b))
    g = backward(t, combo, [p])[p]
    t1, t2 = Tape(), Tape()
    g1 = backward(t1, l1(t1), [p])[p]
    g2 = backward(t2, l2(t2), [p])[p]
    assert np.max(np.abs(g - (a * g1 + b * g2))) <= 1e-12


def test_determinism():
    def run():
        rng = np.random.default_rng(11)
        p = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        t = Tape()
        loss = t.wsum(t.softmax(t.matmul(p, rng.normal(size=(4, 4)))), rng.normal(size=(6, 4)))
        return loss.item(), backward(t, loss, [p])[p]

    (v1, g1), (v2, g2) = run(), run()
    assert v1 == v2 and np.array_equal(g1, g2)


def test_untouched_param_is_zero():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    q = Tensor(np.ones((3, 1)), requires_grad=True)
    t = Tape()
    g = backward(t, t.wsum(p), [p, q])
    assert g[q].shape == (3, 1) and not g[q].any()


def test_errors():
    t = Tape()
    with pytest.raises(ShapeError):
        t.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        t.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(NumericError):
        Tensor(np.array([[np.nan]]))
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(t, t.relu(p))
    with pytest.raises(TapeStateError):
        backward(Tape(), t.wsum(p))
