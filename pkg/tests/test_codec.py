import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from splatsr.codec import CodecSpec, decode, encode, round_trip_error
from splatsr.errors import ParameterError, ShapeError


def test_identity_encode():
    x = torch.rand(8, 8, 3)
    assert torch.equal(encode(x, CodecSpec()), x)
    assert CodecSpec().latent_shape((8, 8, 3)) == (8, 8, 3)


def test_decimate_encode():
    spec = CodecSpec("decimate", factor=2)
    assert torch.allclose(encode(torch.full((4, 4, 3), 0.3), spec), torch.full((2, 2, 3), 0.3))
    block = torch.tensor([[0.0, 1.0], [1.0, 0.0]])[..., None].repeat(1, 1, 3)
    assert torch.allclose(encode(block, spec), torch.full((1, 1, 3), 0.5))
    with pytest.raises(ShapeError):
        encode(torch.zeros(5, 4, 3), spec)
    assert spec.latent_shape((8, 6, 3)) == (4, 3, 3)


def test_spec_validation():
    with pytest.raises(ParameterError):
        CodecSpec("identity", factor=2)
    with pytest.raises(ParameterError):
        CodecSpec("vae")
    with pytest.raises(ParameterError):
        CodecSpec(faithfulness=1.5)


def test_decode_blend_arithmetic():
    x = torch.full((4, 4, 3), 0.8)
    e = torch.full((2, 2, 3), 0.4)
    assert torch.allclose(decode(x, e, CodecSpec(), faithfulness=0.25), torch.full((4, 4, 3), 0.7))
    y = torch.rand(4, 4, 3) * 1.4 - 0.2
    assert torch.equal(decode(y, e, CodecSpec(), faithfulness=0.0), y.clamp(0, 1))
    cond = torch.rand(4, 4, 3)
    assert torch.allclose(decode(y, cond, CodecSpec(), faithfulness=1.0), cond)


def test_decode_shapes():
    with pytest.raises(ShapeError):
        decode(torch.zeros(4, 4, 1), torch.zeros(4, 4, 3), CodecSpec())
    out = decode(torch.rand(4, 4, 3), torch.rand(2, 2, 3), CodecSpec("decimate", factor=2))
    assert out.shape == (8, 8, 3)


def test_round_trip_error():
    img = torch.rand(8, 8, 3)
    assert round_trip_error(img, CodecSpec()) == 0.0
    assert round_trip_error(torch.full((8, 8, 3), 0.6), CodecSpec("decimate", factor=2)) < 1e-7
    checker = ((torch.arange(8)[:, None] + torch.arange(8)[None]) % 2).float()[..., None].repeat(1, 1, 3)
    assert round_trip_error(checker, CodecSpec("decimate", factor=2)) > 0.1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), w=st.floats(0, 1))
def test_decode_is_one_lipschitz(seed, w):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(6, 6, 3, generator=g), torch.randn(6, 6, 3, generator=g)
    e = torch.rand(6, 6, 3, generator=g)
    spec = CodecSpec()
    assert float((decode(a, e, spec, w) - decode(b, e, spec, w)).abs().max()) <= float((a - b).abs().max()) + 1e-6
