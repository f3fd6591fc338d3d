import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from llformer.degrade import apply_degradation, image_seed, sample_params, synthetic_scene
from llformer.errors import ContractError
from llformer.estimator import LLFormerEnhancer, LowLightDegrader, check_image, check_images

TINY = dict(
    base_channels=4,
    encoder_depths=(1, 1, 1, 1),
    encoder_heads=(1, 1, 1, 1),
    decoder_depths=(1, 1, 1),
    decoder_heads=(1, 1, 1),
    patch_size=16,
    batch_size=1,
    total_steps=3,
)


@pytest.fixture(scope="module")
def data():
    normal = np.stack([synthetic_scene(i, 16, 16) for i in range(2)]).astype(np.float32)
    low = np.stack([apply_degradation(n, sample_params(image_seed(0, i))) for i, n in enumerate(normal)])
    return low, normal


@pytest.fixture(scope="module")
def fitted(data):
    return LLFormerEnhancer(**TINY).fit(*data)


def test_get_params_and_clone():
    est = LLFormerEnhancer(**TINY)
    params = est.get_params()
    assert params["base_channels"] == 4 and params["encoder_depths"] == (1, 1, 1, 1)
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lr_max=1e-3)
    assert est.lr_max == 1e-3


def test_fit_predict_shapes(fitted, data):
    low, _ = data
    out = fitted.predict(low)
    assert out.shape == low.shape and out.dtype == np.float32
    assert out.min() >= 0 and out.max() <= 1
    assert fitted.n_iter_ == 3 and len(fitted.loss_curve_) == 3


def test_predict_list_of_mixed_sizes(fitted, rng):
    imgs = [rng.random((3, 16, 16)), rng.random((3, 12, 20))]
    out = fitted.predict(imgs)
    assert isinstance(out, list) and [o.shape for o in out] == [(3, 16, 16), (3, 12, 20)]


def test_score_is_mean_psnr(fitted, data):
    s = fitted.score(*data)
    assert np.isfinite(s) and s > 0


def test_fit_is_deterministic(data):
    a = LLFormerEnhancer(**TINY).fit(*data)
    b = LLFormerEnhancer(**TINY).fit(*data)
    assert a.loss_curve_ == b.loss_curve_
    assert a.predict(data[0]).tobytes() == b.predict(data[0]).tobytes()


def test_unfitted_predict_raises(data):
    with pytest.raises(NotFittedError):
        LLFormerEnhancer().predict(data[0])


def test_save_load_roundtrip(fitted, data, tmp_path):
    fitted.save(tmp_path / "e.ckpt")
    back = LLFormerEnhancer.load(tmp_path / "e.ckpt")
    assert back.predict(data[0]).tobytes() == fitted.predict(data[0]).tobytes()
    assert back.model_config() == fitted.model_config()


def test_validation_helpers(rng):
    assert check_image(rng.random((3, 4, 4))).dtype == np.float32
    with pytest.raises(ContractError):
        check_image(rng.random((4, 4, 3)))
    with pytest.raises(ContractError):
        check_image(rng.random((3, 4, 4)) + 1.0)
    with pytest.raises(ContractError):
        check_image(np.array([["a"]]))
    with pytest.raises(ContractError):
        check_images(rng.random((3, 4, 4)))
    with pytest.raises(ContractError):
        check_images([])
    with pytest.raises(ContractError):
        check_images(5)


def test_fit_rejects_mismatched_pairs(rng):
    with pytest.raises(ContractError):
        LLFormerEnhancer(**TINY).fit(rng.random((2, 3, 16, 16)), rng.random((1, 3, 16, 16)))
    with pytest.raises(ContractError):
        LLFormerEnhancer(**TINY).fit([rng.random((3, 16, 16))], [rng.random((3, 16, 24))])


def test_degrader_matches_functional_api(rng):
    X = rng.random((3, 3, 8, 8))
    deg = LowLightDegrader(random_state=42)
    out = deg.fit_transform(X)
    assert out.shape == X.shape
    for i in range(3):
        np.testing.assert_array_equal(
            out[i], apply_degradation(X[i].astype(np.float32), sample_params(image_seed(42, i)))
        )
    assert [p.seed for p in deg.params_] == [image_seed(42, i) for i in range(3)]


def test_degrader_without_fit_and_clone(rng):
    X = [rng.random((3, 8, 8))]
    a = LowLightDegrader(random_state=1).transform(X)
    b = clone(LowLightDegrader(random_state=1)).transform(X)
    assert isinstance(a, list)
    np.testing.assert_array_equal(a[0], b[0])
