from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from llformer.degrade import (
    RANGES,
    DegradationParams,
    adjust_exposure,
    adjust_highlights,
    adjust_shadows,
    adjust_vibrance,
    adjust_whites,
    apply_degradation,
    image_seed,
    luminance,
    sample_params,
    smoothstep,
    synthetic_scene,
)
from llformer.errors import ContractError
from llformer.imageio import save_image, to_bytes

GOLDEN = Path(__file__).parent / "data" / "golden_seed42_8x8.png"


def fixed_image():
    yy, xx = np.mgrid[0:8, 0:8] / 7.0
    return np.stack([xx, yy, 1.0 - 0.5 * (xx + yy)])


def only(**kw):
    base = dict(exposure=0.0, highlights=0.0, shadows=0.0, vibrance=0.0, whites=0.0)
    base.update(kw)
    return DegradationParams(**base)


def test_formula_endpoints():
    p = DegradationParams.from_draws(1.0, 0.2, 0.2)
    assert p.exposure == 0.0 and p.vibrance == 0.0 and p.whites == 0.0
    assert DegradationParams.from_draws(0.3, 0.7, 0.1).highlights == 100.0
    q = DegradationParams.from_draws(0.0, 0.1, 0.5)
    assert q.shadows == -50.0 and q.exposure == -5.0 and q.whites == 80.0


def test_sample_params_reproducible_and_recorded():
    a, b = sample_params(7), sample_params(7)
    assert a == b
    assert a.seed == 7 and 0 <= a.x < 1 and 0 <= a.y < 1 and 0 <= a.z < 1
    assert a != sample_params(8)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**64 - 1))
def test_sampled_params_inside_intervals(seed):
    p = sample_params(seed)
    for name, (lo, hi) in RANGES.items():
        assert lo <= getattr(p, name) <= hi, name


def test_image_seed_is_stable_and_distinct():
    assert image_seed(0, 3) == image_seed(0, 3)
    assert len({image_seed(0, i) for i in range(50)}) == 50
    assert image_seed(0, 1) != image_seed(1, 0)


def test_smoothstep_endpoints_and_reverse():
    t = np.array([-1.0, 0.5, 0.75, 1.0, 2.0])
    np.testing.assert_allclose(smoothstep(0.5, 1.0, t), [0, 0, 0.5, 1, 1])
    np.testing.assert_allclose(smoothstep(0.5, 0.0, np.array([0.0, 0.25, 0.5])), [1, 0.5, 0])


def test_neutral_is_identity(rng):
    img = rng.random((3, 9, 7))
    out = apply_degradation(img, DegradationParams.neutral())
    np.testing.assert_array_equal(out, img)


def test_exposure_minus_five_is_gain(rng):
    img = rng.random((3, 6, 6))
    out = apply_degradation(img, only(exposure=-5.0))
    np.testing.assert_array_equal(out, img * 2.0**-5)
    assert (out <= img).all()


def test_exposure_darkens_luminance(rng):
    img = rng.random((3, 6, 6))
    for e in (-0.5, -2.0, -5.0):
        assert (luminance(adjust_exposure(img, e)) <= luminance(img)).all()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), e=st.floats(-5, 0))
def test_exposure_preserves_order(seed, e):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 4, 4))
    b = np.clip(a + rng.random((3, 4, 4)) * 0.3, 0, 1)
    assert (adjust_exposure(a, e) <= adjust_exposure(b, e)).all()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), img_seed=st.integers(0, 2**32))
def test_output_always_in_unit_range(seed, img_seed):
    img = np.random.default_rng(img_seed).random((3, 5, 5))
    out = apply_degradation(img, sample_params(seed))
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("op", [adjust_highlights, adjust_shadows, adjust_whites, adjust_vibrance])
def test_operators_neutral_at_zero(rng, op):
    img = rng.random((3, 4, 4))
    assert op(img, 0.0) is img


def test_highlights_and_whites_only_touch_bright(rng):
    dark = rng.random((3, 4, 4)) * 0.3
    np.testing.assert_array_equal(adjust_highlights(dark, 100.0), dark)
    np.testing.assert_array_equal(adjust_whites(dark, 80.0), dark)
    bright = 0.8 + rng.random((3, 4, 4)) * 0.15
    assert (adjust_highlights(bright, 100.0) >= bright).all()


def test_negative_shadows_darken_dark_pixels(rng):
    dark = 0.05 + rng.random((3, 4, 4)) * 0.2
    out = adjust_shadows(dark, -50.0)
    assert (out < dark).all()
    bright = 0.6 + rng.random((3, 4, 4)) * 0.4
    np.testing.assert_array_equal(adjust_shadows(bright, -50.0), bright)


def test_negative_vibrance_desaturates_keeping_value(rng):
    img = rng.random((3, 6, 6))
    out = adjust_vibrance(img, -75.0)

    def sat(x):
        mx = x.max(axis=0)
        return (mx - x.min(axis=0)) / np.maximum(mx, 1e-12)

    assert (sat(out) <= sat(img) + 1e-12).all()
    np.testing.assert_allclose(out.max(axis=0), img.max(axis=0), atol=1e-12)
    gray = np.repeat(rng.random((1, 4, 4)), 3, axis=0)
    np.testing.assert_array_equal(adjust_vibrance(gray, -75.0), gray)


def test_contract_errors():
    with pytest.raises(ContractError):
        apply_degradation(np.full((3, 2, 2), 1.5), DegradationParams.neutral())
    with pytest.raises(ContractError):
        apply_degradation(np.zeros((2, 2, 2)), DegradationParams.neutral())
    with pytest.raises(ContractError):
        apply_degradation(np.full((3, 2, 2), np.nan), DegradationParams.neutral())


def test_dtype_preserved(rng):
    img = rng.random((3, 4, 4)).astype(np.float32)
    assert apply_degradation(img, sample_params(1)).dtype == np.float32


def test_golden_seed42():
    out = to_bytes(apply_degradation(fixed_image(), sample_params(42)))
    golden = np.asarray(Image.open(GOLDEN).convert("RGB"))
    assert np.ascontiguousarray(out).tobytes() == golden.tobytes()


def test_degraded_pngs_byte_identical(tmp_path):
    img = synthetic_scene(3, 16, 16)
    paths = [tmp_path / "a.png", tmp_path / "b.png"]
    for p in paths:
        save_image(p, apply_degradation(img, sample_params(image_seed(42, 0))))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_synthetic_scene_deterministic_and_valid():
    a = synthetic_scene(5, 20, 30)
    assert a.shape == (3, 20, 30)
    assert a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, synthetic_scene(5, 20, 30))
    assert not np.array_equal(a, synthetic_scene(6, 20, 30))
