import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from camsharp.autodiff import Graph, gradients, ops
from camsharp.gradcam import (
    CamMap,
    alpha_weights,
    batch_gradcam,
    cam_range_stats,
    gradcam_map,
    visual_normalize,
)
from camsharp.gradcheck import compare, numeric_gradient
from camsharp.measures import cam_entropy
from camsharp.network import (
    Architecture,
    ConvBlock,
    ForwardTrace,
    build_forward,
    forward,
    init_params,
    tiny_architecture,
)


def dense_head(params, acts):
    """Numpy re-implementation of the classifier head on top of the target activations."""
    arch = params.arch
    x = acts.mean(axis=(1, 2)) if arch.head == "gap" else acts.reshape(-1)
    for j in range(len(arch.dense)):
        x = x @ params.tensors[f"dense{j}.weight"]
        if arch.dense_bias:
            x = x + params.tensors[f"dense{j}.bias"]
        if j < len(arch.dense) - 1:
            x = np.maximum(x, 0.0)
    return x


def alpha_oracle(params, acts, c, h=1e-5):
    """Central differences of y^c w.r.t. every A^k_ij, averaged over positions."""
    grad = numeric_gradient(lambda a: dense_head(params, a)[c], acts, h)
    return grad.mean(axis=(1, 2))


@pytest.fixture(scope="module")
def tiny():
    arch = tiny_architecture(n_classes=3, head="flatten")
    params = init_params(arch, 2)
    images = np.random.default_rng(2).uniform(0, 1, (3, 1, 8, 8))
    return params, images


def test_tiny_model_shape(tiny):
    params, images = tiny
    trace = forward(params, images)
    assert trace.activations.shape == (3, 4, 4, 4)


def test_head_oracle_matches_network(tiny):
    params, images = tiny
    trace = forward(params, images)
    logits, acts = trace.evaluate(trace.logits, trace.activations)
    for n in range(3):
        np.testing.assert_allclose(dense_head(params, acts[n]), logits[n], atol=1e-12)


@pytest.mark.parametrize("sample,cls", [(0, 0), (1, 2), (2, 1)])
def test_alpha_matches_finite_differences(tiny, sample, cls):
    params, images = tiny
    trace = forward(params, images)
    alpha = alpha_weights(trace, cls, sample)
    a, acts = trace.evaluate(alpha, trace.activations)
    assert compare(a, alpha_oracle(params, acts[sample], cls), 1e-6).ok


def test_gradcam_composes_oracles(tiny):
    params, images = tiny
    trace = forward(params, images)
    cam = gradcam_map(trace, 1, 0)
    (acts,) = trace.evaluate(trace.activations)
    alpha = alpha_oracle(params, acts[0], 1)
    expect = np.maximum(np.tensordot(alpha, acts[0], axes=1), 0.0)
    np.testing.assert_allclose(cam.values, expect, rtol=0, atol=1e-9)
    assert cam.differentiable and cam.class_index == 1
    assert cam.values.shape == (4, 4)


def linear_readout(channels=4, n_classes=3, seed=0):
    arch = Architecture((1, 8, 8), (ConvBlock(3, 3, 1), ConvBlock(channels, 3, 2)), (n_classes,), "gap")
    params = init_params(arch, seed)
    return arch, params


def test_mean_readout_alpha_is_scaled_weight_column():
    # y^c = sum_k W[k, c] mean(A^k) + b_c, so dy/dA^k_ij = W[k, c] / hw and alpha_k = W[k, c] / hw
    _, params = linear_readout()
    trace = forward(params, np.random.default_rng(0).uniform(0, 1, (2, 1, 8, 8)))
    for c in range(3):
        (a,) = trace.evaluate(alpha_weights(trace, c, 1))
        np.testing.assert_allclose(a, params.tensors["dense0.weight"][:, c] / 16, rtol=1e-12, atol=1e-15)


def test_sum_readout_alpha_is_coefficient():
    # y^c = sum_k c_k sum_ij A^k_ij has dy/dA^k_ij = c_k everywhere, so alpha_k = c_k exactly
    g = Graph()
    acts = g.input((2, 3, 4, 4), "A")
    coef = np.array([[0.5, -1.0], [2.0, 0.25], [-3.0, 1.5]])
    logits = ops.matmul(ops.sum(acts, axis=(2, 3)), g.const(coef))
    trace = ForwardTrace(g, acts, {}, logits, acts, 0, None)
    g.bind({acts: np.random.default_rng(0).uniform(0, 1, (2, 3, 4, 4))})
    for c in range(2):
        (a,) = trace.evaluate(alpha_weights(trace, c, 0))
        np.testing.assert_allclose(a, coef[:, c], rtol=1e-14)


def test_disconnected_class_gives_zero_alpha():
    _, params = linear_readout()
    w = params.tensors["dense0.weight"].copy()
    w[:, 2] = 0.0
    params = params.replace(params.tensors | {"dense0.weight": w})
    trace = forward(params, np.ones((1, 1, 8, 8)))
    (a,) = trace.evaluate(alpha_weights(trace, 2, 0))
    np.testing.assert_array_equal(a, np.zeros(4))
    np.testing.assert_array_equal(gradcam_map(trace, 2, 0).values, np.zeros((4, 4)))


def test_single_channel_unit_alpha_reproduces_activation():
    _, params = linear_readout(channels=1, n_classes=2)
    params = params.replace(params.tensors | {"dense0.weight": np.array([[16.0, -1.0]])})
    trace = forward(params, np.random.default_rng(1).uniform(0, 1, (1, 1, 8, 8)))
    (acts,) = trace.evaluate(trace.activations)
    np.testing.assert_array_equal(gradcam_map(trace, 0, 0).values, acts[0, 0])


def test_batch_maps_equal_per_sample_maps(tiny):
    params, images = tiny
    trace = forward(params, images)
    labels = np.array([2, 0, 1])
    targets = trace.graph.const(ops.one_hot(labels, 3))
    alpha, cam = batch_gradcam(trace, targets)
    a, m = trace.evaluate(alpha, cam)
    for n, c in enumerate(labels):
        (single,) = trace.evaluate(alpha_weights(trace, int(c), n))
        np.testing.assert_allclose(a[n], single, atol=1e-14)
        np.testing.assert_allclose(m[n], gradcam_map(trace, int(c), n).values, atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2))
def test_maps_are_nonnegative(seed, cls):
    params = init_params(tiny_architecture(head="flatten"), seed)
    trace = forward(params, np.random.default_rng(seed).uniform(0, 1, (1, 1, 8, 8)))
    assert (gradcam_map(trace, cls, 0).values >= 0).all()


def test_index_validation(tiny):
    params, images = tiny
    trace = forward(params, images)
    with pytest.raises(ValueError):
        alpha_weights(trace, 3, 0)
    with pytest.raises(ValueError):
        gradcam_map(trace, 0, 3)


def test_detach():
    cam = CamMap(np.ones((2, 2)), 0, None)
    assert not cam.detach().differentiable


def test_entropy_of_map_differentiates_through_alpha():
    """d ce(gradcam_map) / d params against central differences of the scalar."""
    arch = tiny_architecture(n_classes=3, head="flatten")
    trace = build_forward(arch, 1)
    # first seed whose class-1 map has at least three active pixels
    for seed in range(50):
        params = init_params(arch, seed)
        image = np.random.default_rng(seed).uniform(0, 1, (1, 1, 8, 8))
        trace.bind(params, image)
        cam = gradcam_map(trace, 1, 0)
        if (cam.values > 0).sum() >= 3:
            break
    assert (cam.values > 0).sum() >= 3
    ce = cam_entropy(cam)
    names = list(trace.params)
    grads = dict(zip(names, trace.evaluate(*gradients(ce, [trace.params[n] for n in names]))))
    for name in names:
        def f(v, name=name):
            trace.bind(params.replace(params.tensors | {name: v}), image)
            return float(trace.evaluate(ce)[0])
        report = compare(grads[name], numeric_gradient(f, params.tensors[name]), 1e-4)
        assert report.ok, (name, report)


# -- visual normalization and range statistics --------------------------------

def test_visual_normalize_example():
    img, const = visual_normalize(np.array([[1.0, 3.0], [2.0, 1.0]]))
    np.testing.assert_array_equal(img, [[0.0, 1.0], [0.5, 0.0]])
    assert not const
    img, const = visual_normalize(np.full((3, 3), 4.2))
    assert const and not img.any()


finite_maps = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 5)),
                         elements=st.floats(0, 10, allow_subnormal=False))


@given(finite_maps, st.floats(0.01, 100), st.floats(-10, 10))
def test_visual_normalize_affine_invariant(m, a, b):
    img, const = visual_normalize(m)
    img2, const2 = visual_normalize(a * m + b)
    if const or const2:
        # an affine map can collapse nearly equal values to a constant in floating point
        return
    np.testing.assert_allclose(img, img2, atol=1e-6)
    assert img.min() == 0.0 and img.max() == 1.0


def test_range_stats_table_values():
    low = cam_range_stats(np.array([[1.358, 1.2], [1.029, 1.1]]))
    assert low.absolute_range == pytest.approx(0.329, abs=1e-12)
    assert low.relative_range == pytest.approx(0.3197, abs=1e-4)
    high = cam_range_stats(np.array([[2.220, 1.039]]))
    assert high.absolute_range == pytest.approx(1.181, abs=1e-12)
    assert high.relative_range == pytest.approx(1.137, abs=1e-3)
    assert (high.max, high.min) == (2.220, 1.039)


def test_range_stats_edge_cases():
    flat = cam_range_stats(np.full((2, 2), 3.0))
    assert (flat.absolute_range, flat.relative_range) == (0.0, 0.0)
    assert cam_range_stats(np.array([[0.0, 1.0]])).relative_range is None


@given(finite_maps.filter(lambda m: m.min() > 0.01), st.floats(0.01, 100))
def test_relative_range_scale_invariant(m, c):
    a, b = cam_range_stats(m), cam_range_stats(c * m)
    assert b.absolute_range >= 0
    assert b.relative_range == pytest.approx(a.relative_range, rel=1e-9, abs=1e-12)
