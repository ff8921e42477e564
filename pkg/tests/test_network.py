import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camsharp.autodiff import ShapeError, gradients, ops
from camsharp.gradcheck import compare, numeric_gradient
from camsharp.network import (
    Architecture,
    ConvBlock,
    build_forward,
    forward,
    init_params,
    tiny_architecture,
)


def logits_of(params, images, layer=-1):
    trace = forward(params, images, layer)
    return trace.evaluate(trace.logits, trace.activations)


def test_default_param_count_closed_form():
    arch = Architecture.default(n_classes=4)
    conv = [(1, 8), (8, 16), (16, 32)]
    expect = sum(o * i * 9 + o for i, o in conv) + (32 * 64 + 64) + (64 * 4 + 4)
    assert arch.param_count() == expect == 8260
    params = init_params(arch, 0)
    assert params.count() == expect
    assert len(set(params.names())) == len(params.names())


def test_flatten_head_param_count():
    arch = Architecture.default(n_classes=3, head="flatten")
    assert arch.param_shapes()[6][1] == (32 * 4 * 4, 64)


def test_layers_are_tagged():
    params = init_params(tiny_architecture(), 0)
    assert params.layers["conv0.kernel"] == 0
    assert params.layers["conv1.bias"] == 1
    assert params.layers["dense0.weight"] == 2
    assert params.layers["dense1.bias"] == 3


def test_init_is_deterministic():
    arch = Architecture.default()
    a, b, c = init_params(arch, 5), init_params(arch, 5), init_params(arch, 6)
    assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.names())
    assert any(not np.array_equal(a.tensors[k], c.tensors[k]) for k in a.names())


def test_init_distribution():
    params = init_params(Architecture.default(), 1)
    for name, t in params.tensors.items():
        if name.endswith("bias"):
            assert not t.any()
        else:
            fan_in = int(np.prod(t.shape[1:])) if name.startswith("conv") else t.shape[0]
            assert np.abs(t).max() <= np.sqrt(6 / fan_in)


def test_zero_weights_give_bias_logits():
    arch = tiny_architecture(n_classes=3)
    params = init_params(arch, 0)
    rng = np.random.default_rng(0)
    tensors = {k: (rng.normal(size=v.shape) if k.endswith("bias") else np.zeros_like(v))
               for k, v in params.tensors.items()}
    logits, _ = logits_of(params.replace(tensors), rng.uniform(0, 1, (4, 1, 8, 8)))
    np.testing.assert_array_equal(logits, np.tile(tensors["dense1.bias"], (4, 1)))


def test_output_shapes():
    arch = Architecture.default(n_classes=5)
    logits, acts = logits_of(init_params(arch, 0), np.zeros((3, 1, 32, 32)))
    assert logits.shape == (3, 5)
    assert acts.shape == (3, 32, 4, 4)
    _, early = logits_of(init_params(arch, 0), np.zeros((3, 1, 32, 32)), layer=0)
    assert early.shape == (3, 8, 16, 16)


def test_shape_errors():
    params = init_params(tiny_architecture(), 0)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 1, 9, 9)))
    with pytest.raises(ValueError):
        build_forward(params.arch, 2, target_layer=5)


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(conv=())
    with pytest.raises(ValueError):
        Architecture(head="max")
    with pytest.raises(ValueError):
        Architecture(dense=(0, 4))


def test_architecture_round_trip():
    arch = Architecture((3, 16, 16), (ConvBlock(4, 3, 1), ConvBlock(6, 5, 2)), (10, 2), "flatten", False)
    assert Architecture.from_dict(arch.to_dict()) == arch


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_permutation(seed):
    rng = np.random.default_rng(seed)
    params = init_params(tiny_architecture(), seed % 1000)
    images = rng.uniform(0, 1, (5, 1, 8, 8))
    perm = rng.permutation(5)
    a, _ = logits_of(params, images)
    b, _ = logits_of(params, images[perm])
    np.testing.assert_array_equal(a[perm], b)


def test_batch_independence():
    rng = np.random.default_rng(3)
    params = init_params(Architecture.default(), 3)
    images = rng.uniform(0, 1, (4, 1, 32, 32))
    batched, acts = logits_of(params, images)
    for i in range(4):
        single, single_acts = logits_of(params, images[i : i + 1])
        np.testing.assert_allclose(batched[i], single[0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(acts[i], single_acts[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("head", ["gap", "flatten"])
def test_logit_gradients_match_finite_differences(head):
    arch = tiny_architecture(n_classes=3, head=head)
    assert arch.param_count() <= 2000
    params = init_params(arch, 4)
    images = np.random.default_rng(4).uniform(0, 1, (2, 1, 8, 8))
    trace = build_forward(arch, 2)
    target = ops.sum(trace.logits[1, 2])
    names = list(trace.params)
    grads = gradients(target, [trace.params[n] for n in names])
    trace.bind(params, images)
    analytic = dict(zip(names, trace.evaluate(*grads)))
    for name in names:
        def f(v, name=name):
            trace.bind(params.replace(params.tensors | {name: v}), images)
            return float(trace.evaluate(target)[0])
        report = compare(analytic[name], numeric_gradient(f, params.tensors[name]), 1e-6)
        assert report.ok, (name, report)
