"""scikit-learn style wrappers around the model, trainer, and degradation.

Images are ``(3, H, W)`` float arrays in [0, 1]. A batch is either a 4-D
array ``(n, 3, H, W)`` or a sequence of 3-D arrays that may differ in size.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import degrade
from .errors import ContractError
from .metrics import psnr
from .model import ModelConfig, build, predict as model_predict
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train


def check_image(img, name: str = "image") -> np.ndarray:
    """Return ``img`` as a contiguous float32 ``(3, H, W)`` array in [0, 1]."""
    arr = np.asarray(getattr(img, "data", img))
    if arr.dtype.kind not in "fiu":
        raise ContractError(f"{name}: expected a numeric array, got dtype {arr.dtype}")
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"{name}: expected shape (3, H, W), got {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise ContractError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError(f"{name}: values must lie in [0, 1], got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_images(X, name: str = "X") -> list:
    """Validate a batch; returns a list of float32 ``(3, H, W)`` arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3:
        raise ContractError(f"{name}: got a single image of shape {X.shape}; wrap it in a batch")
    else:
        try:
            items = list(X)
        except TypeError as exc:
            raise ContractError(f"{name}: expected a batch of images") from exc
    if not items:
        raise ContractError(f"{name}: batch is empty")
    return [check_image(img, f"{name}[{i}]") for i, img in enumerate(items)]


def check_pairs(X, y) -> list:
    xs, ys = check_images(X, "X"), check_images(y, "y")
    if len(xs) != len(ys):
        raise ContractError(f"X has {len(xs)} images but y has {len(ys)}")
    for i, (a, b) in enumerate(zip(xs, ys)):
        if a.shape != b.shape:
            raise ContractError(f"pair {i}: X {a.shape} and y {b.shape} differ")
    return list(zip(xs, ys))


def _restack(outputs, like):
    if isinstance(like, np.ndarray) and like.ndim == 4:
        return np.stack(outputs)
    return outputs


class LLFormerEnhancer(BaseEstimator):
    """Low-light enhancer: ``fit(low, normal)`` then ``predict(low)``.

    Architecture parameters default to the desk-scale configuration; pass
    the published depths for the full model.
    """

    def __init__(
        self,
        base_channels=8,
        encoder_depths=(1, 1, 2, 2),
        encoder_heads=(1, 1, 2, 2),
        decoder_depths=(1, 1, 2),
        decoder_heads=(1, 1, 2),
        head_tail_blocks=3,
        cafb_layers=3,
        dgfn_expansion=2.0,
        global_residual=False,
        learnable_alpha=False,
        weight_init="fan_in",
        patch_size=64,
        batch_size=4,
        lr_max=5e-4,
        lr_min=5e-6,
        total_steps=500,
        smooth_l1_beta=1.0,
        flip=True,
        random_state=0,
        verbose=False,
    ):
        self.base_channels = base_channels
        self.encoder_depths = encoder_depths
        self.encoder_heads = encoder_heads
        self.decoder_depths = decoder_depths
        self.decoder_heads = decoder_heads
        self.head_tail_blocks = head_tail_blocks
        self.cafb_layers = cafb_layers
        self.dgfn_expansion = dgfn_expansion
        self.global_residual = global_residual
        self.learnable_alpha = learnable_alpha
        self.weight_init = weight_init
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.total_steps = total_steps
        self.smooth_l1_beta = smooth_l1_beta
        self.flip = flip
        self.random_state = random_state
        self.verbose = verbose

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_channels=self.base_channels,
            encoder_depths=tuple(self.encoder_depths),
            encoder_heads=tuple(self.encoder_heads),
            decoder_depths=tuple(self.decoder_depths),
            decoder_heads=tuple(self.decoder_heads),
            head_tail_blocks=self.head_tail_blocks,
            cafb_layers=self.cafb_layers,
            dgfn_expansion=self.dgfn_expansion,
            global_residual=self.global_residual,
            learnable_alpha=self.learnable_alpha,
            weight_init=self.weight_init,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            patch_size=self.patch_size,
            batch_size=self.batch_size,
            lr_max=self.lr_max,
            lr_min=self.lr_min,
            total_steps=self.total_steps,
            smooth_l1_beta=self.smooth_l1_beta,
            seed=self.random_state,
            hflip=self.flip,
            vflip=self.flip,
        )

    def fit(self, X, y):
        pairs = check_pairs(X, y)
        model_cfg, train_cfg = self.model_config(), self.train_config()
        model = build(model_cfg, seed=self.random_state)

        def log(step, loss, lr):
            if self.verbose:
                print(f"step {step} loss {loss:.6f} lr {lr:.3g}")

        result = train(model, pairs, train_cfg, on_step=log)
        self.model_ = model
        self.checkpoint_ = result.checkpoint
        self.loss_curve_ = list(result.losses)
        self.n_iter_ = len(result.losses)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        images = check_images(X)
        out = [np.clip(model_predict(self.model_, img[None])[0], 0.0, 1.0) for img in images]
        return _restack(out, X)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of the predictions against ``y``."""
        pairs = check_pairs(X, y)
        preds = self.predict([a for a, _ in pairs])
        return float(np.mean([psnr(p, b) for p, (_, b) in zip(preds, pairs)]))

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.checkpoint_)

    @classmethod
    def load(cls, path) -> "LLFormerEnhancer":
        """Rebuild a fitted enhancer from a checkpoint file."""
        ckpt = load_checkpoint(Path(path))
        cfg = ckpt.config
        est = cls(
            base_channels=cfg.base_channels,
            encoder_depths=cfg.encoder_depths,
            encoder_heads=cfg.encoder_heads,
            decoder_depths=cfg.decoder_depths,
            decoder_heads=cfg.decoder_heads,
            head_tail_blocks=cfg.head_tail_blocks,
            cafb_layers=cfg.cafb_layers,
            dgfn_expansion=cfg.dgfn_expansion,
            global_residual=cfg.global_residual,
            learnable_alpha=cfg.learnable_alpha,
            weight_init=cfg.weight_init,
        )
        est.model_ = ckpt.to_model()
        est.checkpoint_ = ckpt
        est.loss_curve_ = []
        est.n_iter_ = ckpt.step
        return est


class LowLightDegrader(TransformerMixin, BaseEstimator):
    """Stateless transformer applying seeded synthetic low-light degradation.

    The ``i``-th image of a call is degraded with parameters drawn from
    ``image_seed(random_state, i)``; those parameters are kept in
    ``params_`` after each :meth:`transform`.
    """

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X, y=None):
        check_images(X)
        return self

    def transform(self, X):
        images = check_images(X)
        params = [degrade.sample_params(degrade.image_seed(self.random_state, i)) for i in range(len(images))]
        out = [degrade.apply_degradation(img, p) for img, p in zip(images, params)]
        self.params_ = params
        return _restack(out, X)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
