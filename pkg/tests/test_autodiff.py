import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oracles import random_stable_denominator
from tfgrad.autodiff import Graph, grad_check, numeric_grad, relative_error
from tfgrad.errors import GraphError, ShapeError
from tfgrad.signal_core import TransferFunction, iir_filter

seeds = st.integers(0, 2**32 - 1)


def stable_grid(rng, m, p, n_a):
    return np.array([[random_stable_denominator(rng, n_a, 0.9) for _ in range(p)] for _ in range(m)]).reshape(m, p, n_a)


def wh_graph(rng, n=3):
    g = Graph()
    u = g.input("u", 1)
    b1 = g.param("g1.b", 0.5 * rng.standard_normal((1, 1, n + 1)))
    a1 = g.param("g1.a", stable_grid(rng, 1, 1, n))
    x = g.gblock(u, b1, a1, name="g1")
    w0 = g.param("f.w0", rng.standard_normal((5, 1)))
    c0 = g.param("f.b0", rng.standard_normal(5))
    w1 = g.param("f.w1", rng.standard_normal((1, 5)))
    c1 = g.param("f.b1", rng.standard_normal(1))
    h = g.tanh(g.affine(x, w0, c0), name="act")
    z = g.affine(h, w1, c1, name="f")
    b2 = g.param("g2.b", 0.5 * rng.standard_normal((1, 1, n + 1)))
    a2 = g.param("g2.a", stable_grid(rng, 1, 1, n))
    y = g.gblock(z, b2, a2, name="g2")
    tgt = g.input("target", 1, requires_grad=False)
    g.mse_loss(y, tgt, name="loss")
    return g


# forward --------------------------------------------------------------------

def test_identity_gblock():
    g = Graph()
    u = g.input("u", 1)
    y = g.gblock(u, g.param("b", np.ones((1, 1, 1))), g.param("a", np.zeros((1, 1, 0))))
    x = np.random.default_rng(0).standard_normal((30, 1))
    assert_array_equal(g.forward({"u": x}, y), x)


def test_gblock_delegates_to_iir_filter():
    g = Graph()
    u = g.input("u", 1)
    y = g.gblock(u, g.param("b", [[[1.0]]]), g.param("a", [[[-0.5]]]))
    x = np.random.default_rng(1).standard_normal(50)
    assert_array_equal(g.forward({"u": x}, y)[:, 0], iir_filter(TransferFunction([1.0], [-0.5]), x))


def test_wh_graph_equals_manual_composition():
    rng = np.random.default_rng(2)
    g = wh_graph(rng)
    x = rng.standard_normal((100, 1))
    y = g.forward({"u": x}, "g2")
    p = g.param_values()
    tf1 = TransferFunction(p["g1.b"][0, 0], p["g1.a"][0, 0])
    tf2 = TransferFunction(p["g2.b"][0, 0], p["g2.a"][0, 0])
    s = iir_filter(tf1, x[:, 0])[:, None]
    z = np.tanh(s @ p["f.w0"].T + p["f.b0"]) @ p["f.w1"].T + p["f.b1"]
    assert_allclose(y[:, 0], iir_filter(tf2, z[:, 0]), rtol=1e-14, atol=1e-15)


# backward -------------------------------------------------------------------

def test_tanh_at_origin_passes_gradient():
    g = Graph()
    x = g.input("x", 1)
    t = g.tanh(x)
    tgt = g.input("t", 1, requires_grad=False)
    loss = g.mse_loss(t, tgt)
    g.forward({"x": np.zeros((4, 1)), "t": np.ones((4, 1))}, loss)
    g.backward(loss)
    assert_array_equal(x.grad, t.grad)


def test_mse_zero_at_target():
    rng = np.random.default_rng(3)
    g = wh_graph(rng)
    x = rng.standard_normal((40, 1))
    y = g.forward({"u": x}, "g2").copy()
    assert g.forward({"u": x, "target": y}, "loss") == 0.0
    for grad in g.backward("loss").values():
        assert not np.any(grad)


def test_mse_values():
    g = Graph()
    p = g.input("p", 2)
    t = g.input("t", 2)
    loss = g.mse_loss(p, t)
    x = np.random.default_rng(0).standard_normal((10, 2))
    assert g.forward({"p": x + 2.0, "t": x}, loss) == pytest.approx(4.0, rel=1e-15)
    assert g.forward({"p": x, "t": x}, loss) == 0.0


def test_mse_gradient():
    rng = np.random.default_rng(4)
    g = Graph()
    p = g.input("p", 3)
    t = g.input("t", 3, requires_grad=False)
    loss = g.mse_loss(p, t)
    inputs = {"p": rng.standard_normal((20, 3)), "t": rng.standard_normal((20, 3))}
    report = grad_check(g, inputs, output=loss, check_inputs=True)
    assert report.errors["input:p"] < 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_wh_graph_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = wh_graph(rng)
    inputs = {"u": rng.standard_normal((64, 1)), "target": rng.standard_normal((64, 1))}
    report = grad_check(g, inputs, output="loss", check_inputs=True)
    assert set(report.errors) >= {"g1.b", "g1.a", "f.w0", "f.b0", "f.w1", "f.b1", "g2.b", "g2.a", "input:u"}
    assert report.passed(1e-5), str(report)


def test_linear_graph_grad_check():
    rng = np.random.default_rng(5)
    g = Graph()
    u = g.input("u", 1, requires_grad=False)
    y = g.gblock(u, g.param("b", rng.standard_normal((1, 1, 3))), g.param("a", stable_grid(rng, 1, 1, 2)))
    g.mse_loss(y, g.input("t", 1, requires_grad=False))
    report = grad_check(g, {"u": rng.standard_normal((80, 1)), "t": rng.standard_normal((80, 1))})
    assert report.max_error < 1e-7


def test_frozen_integrator_has_no_trainable_coefficients():
    g = Graph()
    u = g.input("u", 1)
    y = g.integrator(u, name="int")
    g.mse_loss(y, g.input("t", 1, requires_grad=False))
    assert g.parameters == {}
    assert_array_equal(g.all_params["int.b"].value, [[[1.0]]])
    assert_array_equal(g.all_params["int.a"].value, [[[-1.0]]])
    report = grad_check(g, {"u": np.ones((5, 1)), "t": np.zeros((5, 1))})
    assert report.errors == {}
    assert_array_equal(g.forward({"u": np.ones((5, 1))}, y)[:, 0], [1, 2, 3, 4, 5])


def two_branch_graph(rng):
    g = Graph()
    u = g.input("u", 1)
    s = g.scale(u, 0.5)

    def gb(x, m, p, n, name):
        b = g.param(f"{name}.b", 0.5 * rng.standard_normal((m, p, n + 1)))
        a = g.param(f"{name}.a", stable_grid(rng, m, p, n))
        return g.gblock(x, b, a, name=name)

    def mlp(x, p, m, name):
        w0 = g.param(f"{name}.w0", rng.standard_normal((6, p)) / np.sqrt(p))
        c0 = g.param(f"{name}.b0", rng.standard_normal(6))
        w1 = g.param(f"{name}.w1", rng.standard_normal((m, 6)) / np.sqrt(6))
        c1 = g.param(f"{name}.b1", rng.standard_normal(m))
        return g.affine(g.tanh(g.affine(x, w0, c0)), w1, c1, name=name)

    h = mlp(gb(s, 4, 1, 3, "g1"), 4, 2, "f1")
    h = mlp(gb(h, 2, 2, 3, "g2"), 2, 1, "f2")
    y = g.sum(h, gb(s, 1, 1, 2, "g3"), name="y")
    g.mse_loss(y, g.input("target", 1, requires_grad=False), name="loss")
    return g


@pytest.mark.parametrize("seed", range(3))
def test_two_branch_grad_check(seed):
    rng = np.random.default_rng(seed)
    g = two_branch_graph(rng)
    report = grad_check(g, {"u": rng.standard_normal((64, 1)), "target": rng.standard_normal((64, 1))},
                        check_inputs=True)
    assert report.max_error < 1e-5, str(report)


def test_affine_identity_passes_through():
    g = Graph()
    x = g.input("x", 3)
    y = g.affine(x, g.param("w", np.eye(3)), g.param("c", np.zeros(3)))
    g.mse_loss(y, g.input("t", 3, requires_grad=False))
    v = np.random.default_rng(0).standard_normal((7, 3))
    t = np.random.default_rng(1).standard_normal((7, 3))
    assert_array_equal(g.forward({"x": v}, y), v)
    g.forward({"x": v, "t": t})
    g.backward()
    assert_array_equal(x.grad, y.grad)


def test_tanh_saturation():
    g = Graph()
    x = g.input("x", 1)
    t = g.tanh(x)
    g.mse_loss(t, g.input("tgt", 1, requires_grad=False))
    v = np.array([[20.0], [-25.0], [40.0]])
    assert_array_equal(g.forward({"x": v}, t)[:, 0], [1.0, -1.0, 1.0])
    g.forward({"x": v, "tgt": np.zeros((3, 1))})
    g.backward()
    assert np.all(np.abs(x.grad) < 1e-15)


def test_affine_8_to_4_finite_differences():
    rng = np.random.default_rng(6)
    g = Graph()
    x = g.input("x", 8)
    y = g.affine(x, g.param("w", rng.standard_normal((4, 8))), g.param("c", rng.standard_normal(4)))
    g.mse_loss(y, g.input("t", 4, requires_grad=False))
    report = grad_check(g, {"x": rng.standard_normal((30, 8)), "t": rng.standard_normal((30, 4))},
                        check_inputs=True)
    assert report.max_error < 1e-7


def _away_from_zero(rng, shape):
    v = rng.standard_normal(shape)
    return np.sign(v) * (0.1 + np.abs(v))


KINDS = ["gblock", "fir", "affine", "tanh", "sigmoid", "cos", "abs", "scale", "add", "mul", "concat", "split",
         "integrator"]


@settings(max_examples=60, deadline=None)
@given(seeds, st.sampled_from(KINDS), st.integers(1, 3), st.integers(1, 3), st.integers(1, 30))
def test_every_node_kind_matches_finite_differences(seed, kind, p, m, T):
    rng = np.random.default_rng(seed)
    g = Graph()
    x = g.input("x", p)
    if kind == "gblock":
        n_a, n_b = rng.integers(0, 4, 2)
        y = g.gblock(x, g.param("b", rng.standard_normal((m, p, n_b + 1))), g.param("a", stable_grid(rng, m, p, n_a)))
    elif kind == "fir":
        y = g.fir(x, g.param("b", rng.standard_normal((m, p, rng.integers(1, 5)))))
    elif kind == "affine":
        y = g.affine(x, g.param("w", rng.standard_normal((m, p))), g.param("c", rng.standard_normal(m)))
    elif kind == "scale":
        y = g.scale(x, rng.uniform(-3, 3), rng.uniform(-1, 1))
    elif kind in ("tanh", "sigmoid", "cos", "abs"):
        y = getattr(g, kind)(x)
    elif kind == "add":
        y = g.sum(x, g.tanh(x), x)
    elif kind == "mul":
        y = g.mul(x, g.cos(x))
    elif kind == "concat":
        y = g.concat(x, g.tanh(x))
    elif kind == "split":
        start = int(rng.integers(0, p))
        y = g.split(x, start, int(rng.integers(start + 1, p + 1)))
    else:
        y = g.integrator(x, channels=p)
    xv = _away_from_zero(rng, (T, p))
    out_ch = g.forward({"x": xv}, y).shape[1]
    g.mse_loss(y, g.input("t", out_ch, requires_grad=False), name="loss")
    report = grad_check(g, {"x": xv, "t": rng.standard_normal((T, out_ch))}, output="loss", check_inputs=True)
    assert report.max_error < 1e-5, f"{kind}: {report}"


def test_abs_subgradient_at_zero():
    g = Graph()
    x = g.input("x", 1)
    y = g.abs(x)
    g.mse_loss(y, g.input("t", 1, requires_grad=False))
    g.forward({"x": np.zeros((3, 1)), "t": np.ones((3, 1))})
    g.backward()
    assert_array_equal(x.grad, np.zeros((3, 1)))


def test_fan_out_doubles_adjoint():
    rng = np.random.default_rng(7)
    xv = rng.standard_normal((20, 2))

    def input_grad(double):
        g = Graph()
        x = g.input("x", 2)
        t = g.tanh(x, name="t")
        y = g.sum(t, t) if double else g.scale(t, 2.0)
        g.mse_loss(y, g.input("tgt", 2, requires_grad=False))
        g.forward({"x": xv, "tgt": np.zeros((20, 2))})
        g.backward()
        return t.grad

    g1, g2 = input_grad(True), input_grad(False)
    # each consumer edge contributes the same adjoint, so the accumulated one is exactly twice
    assert_array_equal(g1, g2)


def test_determinism_and_idempotence():
    rng = np.random.default_rng(8)
    inputs = {"u": rng.standard_normal((50, 1)), "target": rng.standard_normal((50, 1))}
    results = []
    for _ in range(2):
        g = wh_graph(np.random.default_rng(9))
        v1 = g.forward(inputs).copy()
        v2 = g.forward(inputs).copy()
        assert_array_equal(v1, v2)
        results.append((v1, g.backward()))
    assert_array_equal(results[0][0], results[1][0])
    for k in results[0][1]:
        assert_array_equal(results[0][1][k], results[1][1][k])


def test_graph_errors():
    g = Graph()
    x = g.input("x", 1)
    with pytest.raises(GraphError):
        g.input("x", 1)
    other = Graph().input("y", 1)
    with pytest.raises(GraphError):
        g.tanh(other)
    t = g.tanh(x)
    with pytest.raises(GraphError):
        g.backward(t)
    with pytest.raises(GraphError):
        g.forward({}, t)
    with pytest.raises(ShapeError):
        g.forward({"x": np.ones((4, 2))}, t)


def test_shape_error_names_block():
    g = Graph()
    x = g.input("x", 2)
    y = g.gblock(x, g.param("b", np.ones((1, 3, 1))), g.param("a", np.zeros((1, 3, 0))), name="g7")
    with pytest.raises(ShapeError, match="^g7:"):
        g.forward({"x": np.ones((5, 2))}, y)


def test_set_param_values_checks_shapes():
    g = Graph()
    g.param("w", np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        g.set_param_values({"w": np.zeros(3)})
    with pytest.raises(KeyError):
        g.set_param_values({"nope": np.zeros(1)})


def test_relative_error_and_numeric_grad():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0, 0.0], [1.1, 0.0]) == pytest.approx(0.1 / 1.1)
    x = np.array([1.0, -2.0, 3.0])
    assert_allclose(numeric_grad(lambda: float(np.sum(x**3)), x), 3 * x**2, rtol=1e-8)
    assert_array_equal(x, [1.0, -2.0, 3.0])
