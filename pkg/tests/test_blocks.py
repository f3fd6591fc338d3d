import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import init64, randomize, weighted_sum
from llformer.attention import a_msa
from llformer.blocks import atb, dgfn, dual_gate, downsample, skip_fuse, upsample
from llformer.errors import DimensionError
from llformer.model import DESK_CONFIG, named_parameters
from llformer.nnops import ConvWeights, conv2d, gelu, layer_norm
from llformer.tensor import Tensor, grad_check, precision


def atb_params(c, heads=1, seed=0, scale=0.3):
    return randomize(init64(seed).atb(c, heads, DESK_CONFIG), np.random.default_rng(seed), scale)


def zero(conv):
    conv.kernel.data[...] = 0.0
    if conv.bias is not None:
        conv.bias.data[...] = 0.0


def test_dgfn_zero_branches_is_identity(rng):
    p = atb_params(4).ffn
    for proj in (p.branch1, p.branch2):
        zero(proj.pointwise)
        zero(proj.depthwise)
    p.out.bias.data[...] = 0.0
    y = Tensor(rng.standard_normal((2, 4, 5, 5)))
    np.testing.assert_array_equal(dgfn(y, p).data, y.data)


def test_dgfn_zero_output_is_identity(rng):
    p = atb_params(4).ffn
    zero(p.out)
    y = Tensor(rng.standard_normal((2, 4, 5, 5)))
    np.testing.assert_array_equal(dgfn(y, p).data, y.data)


def test_dual_gate_symmetric_branches(f64, rng):
    a = Tensor(rng.standard_normal((1, 3, 4, 4)))
    np.testing.assert_allclose(dual_gate(a, a).data, 2.0 * (a * gelu(a)).data, atol=1e-12)


def test_dgfn_deviation_linear_in_output_norm(f64, rng):
    p = atb_params(4).ffn
    y = Tensor(rng.standard_normal((1, 4, 4, 4)))
    base_k, base_b = p.out.kernel.data.copy(), p.out.bias.data.copy()
    devs = []
    for s in (1.0, 0.5, 0.25):
        p.out.kernel.data, p.out.bias.data = base_k * s, base_b * s
        devs.append(np.linalg.norm(dgfn(y, p).data - y.data))
    np.testing.assert_allclose(devs, [devs[0], devs[0] / 2, devs[0] / 4], rtol=1e-10)


def test_dgfn_grad_check(f64, rng):
    p = atb_params(4).ffn
    y = Tensor(rng.standard_normal((1, 4, 4, 4)))
    params = [y, p.branch1.pointwise.kernel, p.branch2.depthwise.kernel, p.out.kernel, p.out.bias]
    assert grad_check(lambda: weighted_sum(dgfn(y, p)), params) < 1e-4


def test_atb_zeroed_outputs_is_identity(rng):
    p = atb_params(4, 2)
    zero(p.attn_w.out)
    zero(p.ffn.out)
    x = Tensor(rng.standard_normal((2, 4, 6, 5)))
    np.testing.assert_array_equal(atb(x, p).data, x.data)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), c=st.sampled_from([2, 4]), h=st.integers(1, 5), w=st.integers(1, 5))
def test_atb_identity_property(seed, c, h, w):
    rng = np.random.default_rng(seed)
    p = atb_params(c, 1, seed % 7)
    zero(p.attn_w.out)
    zero(p.ffn.out)
    x = Tensor(rng.standard_normal((1, c, h, w)) * 3)
    np.testing.assert_array_equal(atb(x, p).data, x.data)


def test_atb_matches_manual_chain(rng):
    p = atb_params(4, 2)
    x = Tensor(rng.standard_normal((1, 4, 5, 6)))
    f = a_msa(layer_norm(x, p.norm1), p.attn_h, p.attn_w) + x
    y = layer_norm(f, p.norm2)
    manual = conv2d(dual_gate(p.ffn.branch1(y), p.ffn.branch2(y)), p.ffn.out) + f
    out = atb(x, p)
    assert out.shape == x.shape
    assert out.data.tobytes() == manual.data.tobytes()


def test_atb_grad_check(f64, rng):
    p = atb_params(4, 2)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)))
    params = [x, p.norm1.gamma, p.attn_h.q.pointwise.kernel, p.attn_w.out.kernel, p.norm2.beta, p.ffn.out.kernel]
    assert grad_check(lambda: weighted_sum(atb(x, p)), params) < 1e-4


def test_downsample_shapes(rng):
    init = init64()
    x = Tensor(rng.standard_normal((1, 16, 8, 8)))
    y = downsample(x, init.conv(16, 8, 3, bias=False))
    assert y.shape == (1, 32, 4, 4)
    assert downsample(y, init.conv(32, 16, 3, bias=False)).shape == (1, 64, 2, 2)


def test_downsample_odd_raises(rng):
    with pytest.raises(DimensionError):
        downsample(Tensor(rng.standard_normal((1, 4, 5, 4))), init64().conv(4, 2, 3, bias=False))


def test_upsample_shapes_and_roundtrip(rng):
    init = init64()
    x = Tensor(rng.standard_normal((1, 32, 4, 4)))
    y = upsample(x, init.conv(32, 64, 3, bias=False))
    assert y.shape == (1, 16, 8, 8)
    z = Tensor(rng.standard_normal((1, 8, 6, 6)))
    back = upsample(downsample(z, init.conv(8, 4, 3, bias=False)), init.conv(16, 32, 3, bias=False))
    assert back.shape == z.shape


def test_upsample_bad_channels_raises(rng):
    with pytest.raises(DimensionError):
        upsample(Tensor(rng.standard_normal((1, 3, 2, 2))), init64().conv(3, 6, 3, bias=False))


def test_resampling_element_bookkeeping(rng):
    x = Tensor(rng.standard_normal((2, 6, 8, 4)))
    y = downsample(x, init64().conv(6, 3, 3, bias=False))
    B, C, H, W = x.shape
    assert y.data.size == B * (2 * C) * (H // 2) * (W // 2) == x.data.size // 2


def test_resampling_grad_checks(f64, rng):
    init = init64()
    d = randomize(init.conv(4, 2, 3, bias=False), rng)
    u = randomize(init.conv(4, 8, 3, bias=False), rng)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)))
    assert grad_check(lambda: weighted_sum(downsample(x, d)), [x, d.kernel]) < 1e-4
    assert grad_check(lambda: weighted_sum(upsample(x, u)), [x, u.kernel]) < 1e-4


def _pointwise(matrix, bias=None):
    c_out, c_in = matrix.shape
    b = np.zeros(c_out) if bias is None else bias
    return ConvWeights(Tensor(matrix.reshape(c_out, c_in, 1, 1)), Tensor(b))


def test_skip_fuse_average_and_select(f64, rng):
    enc = Tensor(rng.standard_normal((1, 3, 4, 4)))
    dec = Tensor(rng.standard_normal((1, 3, 4, 4)))
    eye = np.eye(3)
    avg = skip_fuse(enc, dec, _pointwise(np.hstack([eye / 2, eye / 2]))).data
    np.testing.assert_allclose(avg, (enc.data + dec.data) / 2, atol=1e-15)
    sel = skip_fuse(enc, dec, _pointwise(np.hstack([eye, np.zeros((3, 3))]))).data
    np.testing.assert_array_equal(sel, enc.data)


def test_skip_fuse_matches_dense_oracle(f64, rng):
    enc = rng.standard_normal((2, 3, 4, 5))
    dec = rng.standard_normal((2, 3, 4, 5))
    m, b = rng.standard_normal((6, 6)), rng.standard_normal(6)
    out = skip_fuse(Tensor(enc), Tensor(dec), _pointwise(m, b)).data
    cat = np.concatenate([enc, dec], axis=1)
    ref = np.einsum("oc,bchw->bohw", m, cat) + b[None, :, None, None]
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_skip_fuse_mismatch_raises(rng):
    with pytest.raises(DimensionError):
        skip_fuse(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 4))), _pointwise(np.ones((2, 4))))


def test_skip_fuse_grad_check(f64, rng):
    enc, dec = Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(rng.standard_normal((1, 2, 3, 3)))
    w = _pointwise(rng.standard_normal((3, 4)), rng.standard_normal(3))
    assert grad_check(lambda: weighted_sum(skip_fuse(enc, dec, w)), [enc, dec, w.kernel, w.bias]) < 1e-4


def test_blocks_preserve_float32(rng):
    with precision(np.float32):
        p = randomize(init64().atb(4, 1, DESK_CONFIG), rng, 0.1)
        for _, t in named_parameters(p):
            t.data = t.data.astype(np.float32)
        out = atb(Tensor(rng.standard_normal((1, 4, 4, 4))), p)
    assert out.dtype == np.float32
