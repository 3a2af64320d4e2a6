"""
Convolutional auto-encoder: architecture variants, model parameters,
forward/backward passes and encoder feature extraction.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from . import layers
from .barkgram import CAE_BANDS, CAE_FRAMES, Barkgram, cae_input
from .corpus import AudioClip
from .features import BaseExtractor
from .models import FeatureVector
from .random_streams import derive_rng
from .logging import get_logger


Pair = Tuple[int, int]

INNER_KERNEL: Pair = (10, 10)
OUTPUT_KERNEL: Pair = (10, 10)
ENCODER_CHANNELS = (8, 16, 24, 32)
DECODER_CHANNELS = (32, 24, 16, 8)

SQUARE: Pair = (5, 5)
TALL: Pair = (5, 3)
WIDE: Pair = (3, 5)

# (outer kernel, four (frequency, time) encoder strides) per registered variant
VARIANTS: Dict[int, Tuple[Pair, Tuple[Pair, Pair, Pair, Pair]]] = {
    1: (SQUARE, ((2, 2), (2, 2), (2, 2), (2, 2))),
    2: (SQUARE, ((2, 2), (2, 2), (2, 2), (4, 4))),
    3: (SQUARE, ((2, 2), (2, 2), (4, 4), (4, 4))),
    4: (TALL, ((2, 2), (2, 2), (2, 2), (2, 4))),
    5: (TALL, ((2, 2), (2, 2), (2, 4), (2, 4))),
    6: (TALL, ((2, 2), (2, 4), (2, 4), (2, 4))),
    7: (TALL, ((2, 2), (2, 4), (2, 4), (4, 4))),
    8: (WIDE, ((2, 2), (2, 2), (2, 2), (4, 2))),
    9: (WIDE, ((2, 2), (2, 2), (4, 2), (4, 2))),
    10: (WIDE, ((2, 2), (4, 2), (4, 2), (4, 2))),
    11: (WIDE, ((2, 2), (4, 2), (4, 2), (4, 4))),
}

ENCODER_LAYERS = ("enc1", "enc2", "enc3", "enc4")
DECODER_LAYERS = ("dec5", "dec6", "dec7", "dec8")
OUTPUT_LAYER = "out"
LAYER_NAMES = ENCODER_LAYERS + DECODER_LAYERS + (OUTPUT_LAYER,)

logger = get_logger("cae")


class CaeError(Exception):
    """Custom exception for auto-encoder errors."""
    pass


@dataclass(frozen=True)
class CaeArchitecture:
    """Encoder/decoder layout of one auto-encoder."""
    outer_kernel: Pair
    encoder_strides: Tuple[Pair, Pair, Pair, Pair]
    input_shape: Pair = (CAE_BANDS, CAE_FRAMES)
    variant_id: Optional[int] = None
    inner_kernel: Pair = INNER_KERNEL
    kernel_counts: Tuple[int, ...] = ENCODER_CHANNELS
    decoder_counts: Tuple[int, ...] = DECODER_CHANNELS

    @property
    def decoder_factors(self) -> Tuple[Pair, ...]:
        """Upsampling factor of decoder layer i is the stride of encoder layer 9 - i."""
        return tuple(reversed(self.encoder_strides))

    @property
    def encoder_kernels(self) -> Tuple[Pair, ...]:
        return (self.outer_kernel,) + (self.inner_kernel,) * 3

    @property
    def decoder_kernels(self) -> Tuple[Pair, ...]:
        return (self.inner_kernel,) * 3 + (self.outer_kernel,)

    def layer_shapes(self) -> List[Pair]:
        """Spatial (bands, frames) after each encoder layer."""
        shapes = []
        h, w = self.input_shape
        for sf, st in self.encoder_strides:
            h, w = math.ceil(h / sf), math.ceil(w / st)
            shapes.append((h, w))
        return shapes

    @property
    def encoded_shape(self) -> Pair:
        return self.layer_shapes()[-1]

    @property
    def encoded_size(self) -> int:
        h, w = self.encoded_shape
        return self.kernel_counts[-1] * h * w

    @property
    def name(self) -> str:
        return f"cae-{self.variant_id}" if self.variant_id is not None else "cae-custom"

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Trainable parameter shapes keyed "<layer>.<w|b|gamma|beta>"."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        n_in = 1
        for name, n_out, (kh, kw) in zip(ENCODER_LAYERS, self.kernel_counts, self.encoder_kernels):
            shapes.update(_block_shapes(name, n_in, n_out, kh, kw))
            n_in = n_out
        for name, n_out, (kh, kw) in zip(DECODER_LAYERS, self.decoder_counts, self.decoder_kernels):
            shapes.update(_block_shapes(name, n_in, n_out, kh, kw))
            n_in = n_out
        kh, kw = OUTPUT_KERNEL
        shapes[f"{OUTPUT_LAYER}.w"] = (1, n_in, kh, kw)
        shapes[f"{OUTPUT_LAYER}.b"] = (1,)
        return shapes

    def state_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Batch-norm running statistics keyed "<layer>.<mean|var>"."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        for name, n in zip(ENCODER_LAYERS + DECODER_LAYERS, self.kernel_counts + self.decoder_counts):
            shapes[f"{name}.mean"] = (n,)
            shapes[f"{name}.var"] = (n,)
        return shapes


def _block_shapes(name: str, n_in: int, n_out: int, kh: int, kw: int) -> Dict[str, Tuple[int, ...]]:
    return {
        f"{name}.w": (n_out, n_in, kh, kw),
        f"{name}.b": (n_out,),
        f"{name}.gamma": (n_out,),
        f"{name}.beta": (n_out,),
    }


def custom_architecture(
    outer_kernel: Pair,
    encoder_strides: Sequence[Pair],
    input_shape: Pair = (CAE_BANDS, CAE_FRAMES),
    variant_id: Optional[int] = None,
) -> CaeArchitecture:
    """Build any four-layer architecture whose decoder closes back onto the input shape."""
    strides = tuple((int(sf), int(st)) for sf, st in encoder_strides)
    if len(strides) != 4:
        raise CaeError(f"expected 4 encoder strides, got {len(strides)}")
    if any(s < 1 for pair in strides for s in pair):
        raise CaeError(f"strides must be at least 1, got {strides}")
    kh, kw = outer_kernel
    if kh < 1 or kw < 1:
        raise CaeError(f"invalid outer kernel {outer_kernel}")

    arch = CaeArchitecture(
        outer_kernel=(int(kh), int(kw)),
        encoder_strides=strides,
        input_shape=(int(input_shape[0]), int(input_shape[1])),
        variant_id=variant_id,
    )
    h, w = arch.encoded_shape
    ph = math.prod(sf for sf, _ in strides)
    pw = math.prod(st for _, st in strides)
    if (h * ph, w * pw) != arch.input_shape:
        raise CaeError(
            f"strides {strides} do not close onto input {arch.input_shape}: "
            f"encoded {arch.encoded_shape} upsamples to {(h * ph, w * pw)}"
        )
    return arch


def _fit_strides(strides: Sequence[Pair], input_shape: Pair) -> List[Pair]:
    """Cap each stride at the remaining spatial size so a smaller input still closes."""
    fitted = []
    h, w = input_shape
    for sf, st in strides:
        sf, st = min(sf, h), min(st, w)
        if h % sf or w % st:
            raise CaeError(f"input {input_shape} is not divisible by the strides {list(strides)}")
        h, w = h // sf, w // st
        fitted.append((sf, st))
    return fitted


def build_cae(variant_id: int, input_shape: Pair = (CAE_BANDS, CAE_FRAMES)) -> CaeArchitecture:
    """Registered variant 1..11; a smaller input_shape yields the scaled-down network."""
    if variant_id not in VARIANTS:
        raise CaeError(f"unknown CAE variant: {variant_id} (expected 1..{len(VARIANTS)})")
    outer, strides = VARIANTS[variant_id]
    if tuple(input_shape) != (CAE_BANDS, CAE_FRAMES):
        strides = _fit_strides(strides, input_shape)
    return custom_architecture(outer, strides, input_shape, variant_id=variant_id)


@dataclass
class CaeModel:
    """An architecture plus its learned parameters and training metadata."""
    architecture: CaeArchitecture
    params: Dict[str, np.ndarray]
    state: Dict[str, np.ndarray]
    seed: int = 0
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3
    history: Optional[object] = field(default=None, repr=False)

    @property
    def trained(self) -> bool:
        return self.epochs_run > 0

    @property
    def dtype(self):
        return self.params[f"{OUTPUT_LAYER}.w"].dtype

    def copy_parameters(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.state.items()})

    def validate(self) -> None:
        """Check parameter shapes against the architecture and the running variances."""
        expected = self.architecture.parameter_shapes()
        expected_state = self.architecture.state_shapes()
        if set(self.params) != set(expected) or set(self.state) != set(expected_state):
            raise CaeError(f"{self.architecture.name}: parameter set does not match the architecture")
        for name, shape in {**expected, **expected_state}.items():
            actual = (self.params.get(name) if name in expected else self.state[name]).shape
            if actual != shape:
                raise CaeError(f"{self.architecture.name}: {name} has shape {actual}, expected {shape}")
        for name in expected_state:
            if name.endswith(".var") and np.any(self.state[name] <= 0):
                raise CaeError(f"{self.architecture.name}: running variance {name} must be positive")


def init_model(architecture: CaeArchitecture, seed: int = 0, dtype=np.float32) -> CaeModel:
    """Glorot-uniform kernels, zero biases, unit gains, running stats at (0, 1)."""
    rng = derive_rng(seed, f"{architecture.name}-init")
    params: Dict[str, np.ndarray] = {}
    for name, shape in architecture.parameter_shapes().items():
        kind = name.rsplit(".", 1)[1]
        if kind == "w":
            params[name] = layers.glorot_uniform(shape, rng, dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    state = {
        name: (np.ones(shape, dtype=dtype) if name.endswith(".var") else np.zeros(shape, dtype=dtype))
        for name, shape in architecture.state_shapes().items()
    }
    return CaeModel(architecture=architecture, params=params, state=state, seed=seed)


def _check_batch(model: CaeModel, batch: np.ndarray) -> np.ndarray:
    if batch.ndim == 3:
        batch = batch[:, None]
    expected = (1,) + model.architecture.input_shape
    if batch.ndim != 4 or batch.shape[1:] != expected or batch.shape[0] < 1:
        raise CaeError(f"{model.architecture.name} expects input (B, {', '.join(map(str, expected))}), got {batch.shape}")
    return batch.astype(model.dtype, copy=False)


def _conv_block(model: CaeModel, name: str, x: np.ndarray, stride: Pair, mode: str):
    p = model.params
    y, conv_cache = layers.conv2d_forward(x, p[f"{name}.w"], p[f"{name}.b"], stride)
    z, bn_cache, stats = layers.batchnorm_forward(
        y, p[f"{name}.gamma"], p[f"{name}.beta"],
        model.state[f"{name}.mean"], model.state[f"{name}.var"],
        mode, model.bn_momentum, model.bn_epsilon,
    )
    a, relu_cache = layers.relu_forward(z)
    return a, (conv_cache, bn_cache, relu_cache), stats


def _conv_block_backward(grads: Dict[str, np.ndarray], name: str, da: np.ndarray, cache) -> np.ndarray:
    conv_cache, bn_cache, relu_cache = cache
    dz = layers.relu_backward(da, relu_cache)
    dy, grads[f"{name}.gamma"], grads[f"{name}.beta"] = layers.batchnorm_backward(dz, bn_cache)
    dx, grads[f"{name}.w"], grads[f"{name}.b"] = layers.conv2d_backward(dy, conv_cache)
    return dx


def _encode(model: CaeModel, x: np.ndarray, mode: str):
    caches, stats = [], {}
    for name, stride in zip(ENCODER_LAYERS, model.architecture.encoder_strides):
        x, cache, (mean, var) = _conv_block(model, name, x, stride, mode)
        caches.append(cache)
        stats[f"{name}.mean"], stats[f"{name}.var"] = mean, var
    return x, caches, stats


def _decode(model: CaeModel, x: np.ndarray, mode: str):
    caches, stats = [], {}
    for name, factor in zip(DECODER_LAYERS, model.architecture.decoder_factors):
        x, up_cache = layers.upsample_forward(x, factor)
        x, cache, (mean, var) = _conv_block(model, name, x, (1, 1), mode)
        caches.append((up_cache, cache))
        stats[f"{name}.mean"], stats[f"{name}.var"] = mean, var
    p = model.params
    out, out_cache = layers.conv2d_forward(x, p[f"{OUTPUT_LAYER}.w"], p[f"{OUTPUT_LAYER}.b"], (1, 1))
    return out, (caches, out_cache), stats


def forward(model: CaeModel, batch: np.ndarray, mode: str = "infer") -> Tuple[np.ndarray, np.ndarray]:
    """Full pass; returns (reconstruction, encoded)."""
    x = _check_batch(model, batch)
    encoded, _, _ = _encode(model, x, mode)
    reconstruction, _, _ = _decode(model, encoded, mode)
    return reconstruction, encoded


def forward_backward(model: CaeModel, batch: np.ndarray, mode: str = "train"):
    """Train-mode MSE loss, parameter gradients and the moved batch-norm statistics.

    The model itself is not modified.
    """
    x = _check_batch(model, batch)
    encoded, enc_caches, enc_stats = _encode(model, x, mode)
    reconstruction, (dec_caches, out_cache), dec_stats = _decode(model, encoded, mode)
    loss, dout = layers.mse_loss(reconstruction, x)

    grads: Dict[str, np.ndarray] = {}
    d, grads[f"{OUTPUT_LAYER}.w"], grads[f"{OUTPUT_LAYER}.b"] = layers.conv2d_backward(dout, out_cache)
    for name, (up_cache, cache) in reversed(list(zip(DECODER_LAYERS, dec_caches))):
        d = _conv_block_backward(grads, name, d, cache)
        d = layers.upsample_backward(d, up_cache)
    for name, cache in reversed(list(zip(ENCODER_LAYERS, enc_caches))):
        d = _conv_block_backward(grads, name, d, cache)
    return loss, grads, {**enc_stats, **dec_stats}


def reconstruction_loss(model: CaeModel, data: np.ndarray, chunk: int = 32) -> float:
    """Infer-mode MSE over a whole data set, evaluated in chunks."""
    x = _check_batch(model, data)
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        part = x[start:start + chunk]
        reconstruction, _ = forward(model, part, "infer")
        total += float(np.sum(np.square(reconstruction - part, dtype=np.float64)))
    return total / x.size


def encode_batch(model: CaeModel, inputs: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Encoder-only infer-mode pass; one flattened (channel, band, frame) row per input."""
    if not model.trained:
        raise CaeError(f"{model.architecture.name} is untrained; train it or load a checkpoint first")
    x = _check_batch(model, inputs)
    rows = []
    for start in range(0, x.shape[0], chunk):
        encoded, _, _ = _encode(model, x[start:start + chunk], "infer")
        rows.append(encoded.reshape(encoded.shape[0], -1).astype(np.float64))
    return np.concatenate(rows, axis=0)


def encode_features(model: CaeModel, bg: Union[Barkgram, np.ndarray]) -> FeatureVector:
    """Flattened L4 activation of one fixed-size, unit-normalised barkgram."""
    values = bg.values if isinstance(bg, Barkgram) else np.asarray(bg)
    if values.shape != model.architecture.input_shape:
        raise CaeError(f"{model.architecture.name} expects a {model.architecture.input_shape} barkgram, got {values.shape}")
    vector = encode_batch(model, values[None])[0]
    return FeatureVector(values=vector, extractor_id=model.architecture.name)


class CaeExtractor(BaseExtractor):
    """Encoder features of a trained auto-encoder."""

    def __init__(self, model: CaeModel):
        super().__init__()
        if not model.trained:
            raise CaeError(f"{model.architecture.name} is untrained; train it or load a checkpoint first")
        self.model = model
        self.extractor_id = model.architecture.name

    def extract(self, clip: AudioClip) -> FeatureVector:
        return encode_features(self.model, cae_input(clip))
