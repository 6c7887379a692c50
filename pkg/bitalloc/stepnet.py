# bitalloc/stepnet.py
"""
Forward inference of the quantization-step generation network.

The network is a chain of stride-2 convolutions and residual blocks ending in
a single-channel softplus head; four stride-2 stages put the output at 1/16
of the input resolution. Everything runs in float32 with a fixed
accumulation order (input channel, kernel row, kernel column), so repeated
runs are bit-identical.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import GridFormatError, InferenceError, WeightFormatError
from .gridio import atomic_write, format_grid, parse_grid
from .imageio import ceil_div

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = 'QSNW1'
STEPMAP_TAG = 'QSMAP'
DOWNSAMPLE = 16


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    kind = 'conv'

    @property
    def param_count(self):
        return self.out_channels * self.in_channels * self.kernel_size ** 2 + self.out_channels


@dataclass(frozen=True)
class ResidualBlock:
    """conv3x3 -> ReLU -> conv3x3, added to the block input."""
    conv_a: ConvLayer
    conv_b: ConvLayer

    kind = 'resblock'

    @property
    def in_channels(self):
        return self.conv_a.in_channels

    @property
    def out_channels(self):
        return self.conv_b.out_channels

    @property
    def stride(self):
        return 1


@dataclass(frozen=True)
class ModelWeights:
    layers: tuple

    @property
    def total_stride(self):
        total = 1
        for layer in self.layers:
            total *= layer.stride
        return total

    def check_step_contract(self):
        """The 1/16 output contract that :func:`infer_step_map` depends on."""
        if not self.layers:
            raise InferenceError("model has no layers")
        if self.layers[0].in_channels != 3:
            raise InferenceError(f"first layer expects {self.layers[0].in_channels} channels, image has 3")
        if self.total_stride != DOWNSAMPLE:
            raise InferenceError(f"layer strides multiply to {self.total_stride}, expected {DOWNSAMPLE}")
        if self.layers[-1].out_channels != 1:
            raise InferenceError("final layer must have exactly one output channel")


@dataclass(frozen=True)
class StepMap:
    """Positive steps at 1/16 resolution, shape (grid_h, grid_w)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise GridFormatError(f"step map must be a non-empty 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise GridFormatError("step map values must be finite and positive")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def grid_w(self):
        return self.values.shape[1]

    @property
    def grid_h(self):
        return self.values.shape[0]

    @classmethod
    def uniform(cls, width, height, value=1.0):
        return cls(np.full((ceil_div(height, DOWNSAMPLE), ceil_div(width, DOWNSAMPLE)), float(value)))

    def matches(self, width, height):
        return (self.grid_h, self.grid_w) == (ceil_div(height, DOWNSAMPLE), ceil_div(width, DOWNSAMPLE))


# ============= weight file =============

class _Tokens:
    def __init__(self, text, path):
        self._tokens = text.split()
        self._pos = 0
        self._path = path

    def word(self, what):
        if self._pos >= len(self._tokens):
            raise WeightFormatError(f"unexpected end of file while reading {what}", self._path)
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def integer(self, what):
        tok = self.word(what)
        try:
            value = int(tok)
        except ValueError as exc:
            raise WeightFormatError(f"expected integer {what}, found '{tok}'", self._path) from exc
        if value < 1:
            raise WeightFormatError(f"{what} must be positive, found {value}", self._path)
        return value

    def floats(self, count, what):
        """Next ``count`` values; stops early at a layer keyword or end of file."""
        values = []
        while len(values) < count and self._pos < len(self._tokens):
            tok = self._tokens[self._pos]
            if tok in ('conv', 'resblock'):
                break
            try:
                values.append(float(tok))
            except ValueError as exc:
                raise WeightFormatError(f"bad {what} value '{tok}'", self._path) from exc
            self._pos += 1
        if len(values) != count:
            raise WeightFormatError(
                f"parameter count mismatch in {what}: declared {count}, found {len(values)}", self._path
            )
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise WeightFormatError(f"non-finite value in {what}", self._path)
        return arr

    def remaining(self):
        return len(self._tokens) - self._pos


def _read_conv(tokens, in_ch, out_ch, k, stride, name):
    w = tokens.floats(out_ch * in_ch * k * k, f"{name} weights")
    b = tokens.floats(out_ch, f"{name} bias")
    return ConvLayer(
        in_channels=in_ch, out_channels=out_ch, kernel_size=k, stride=stride,
        weights=w.astype(np.float32).reshape(out_ch, in_ch, k, k),
        bias=b.astype(np.float32),
    )


def parse_weights(text, path=None):
    tokens = _Tokens(text, path)
    magic = tokens.word('magic')
    if magic != WEIGHTS_MAGIC:
        if magic.startswith('QSNW'):
            raise WeightFormatError(f"unsupported version '{magic}'", path)
        raise WeightFormatError(f"bad magic '{magic}'", path)
    if tokens.word("'layers'") != 'layers':
        raise WeightFormatError("expected 'layers N' after magic", path)
    n_layers = tokens.integer('layer count')

    layers = []
    for idx in range(n_layers):
        kind = tokens.word(f"layer {idx} kind")
        name = f"layer {idx}"
        if kind == 'conv':
            in_ch = tokens.integer(f"{name} in_channels")
            out_ch = tokens.integer(f"{name} out_channels")
            k = tokens.integer(f"{name} kernel size")
            stride = tokens.integer(f"{name} stride")
            layers.append(_read_conv(tokens, in_ch, out_ch, k, stride, name))
        elif kind == 'resblock':
            ch = tokens.integer(f"{name} channels")
            conv_a = _read_conv(tokens, ch, ch, 3, 1, f"{name} conv a")
            conv_b = _read_conv(tokens, ch, ch, 3, 1, f"{name} conv b")
            layers.append(ResidualBlock(conv_a, conv_b))
        else:
            raise WeightFormatError(f"unknown layer kind '{kind}' at {name}", path)
        if idx and layers[idx - 1].out_channels != layers[idx].in_channels:
            raise WeightFormatError(
                f"{name} expects {layers[idx].in_channels} channels, "
                f"previous layer gives {layers[idx - 1].out_channels}", path
            )
    if tokens.remaining():
        raise WeightFormatError(
            f"parameter count mismatch: {tokens.remaining()} trailing values after {n_layers} layers", path
        )
    return ModelWeights(layers=tuple(layers))


def load_weights(path):
    try:
        text = Path(path).read_text(encoding='ascii')
    except FileNotFoundError as exc:
        raise WeightFormatError("file not found", path) from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise WeightFormatError(f"cannot read weights ({exc})", path) from exc
    weights = parse_weights(text, path)
    logger.debug(f"loaded {len(weights.layers)} layers from {path}")
    return weights


def _format_conv(conv):
    values = np.concatenate([conv.weights.astype(np.float64).ravel(), conv.bias.astype(np.float64)])
    return " ".join(repr(float(v)) for v in values)


def format_weights(weights):
    lines = [WEIGHTS_MAGIC, f"layers {len(weights.layers)}"]
    for layer in weights.layers:
        if isinstance(layer, ResidualBlock):
            lines.append(f"resblock {layer.in_channels}")
            lines.append(_format_conv(layer.conv_a))
            lines.append(_format_conv(layer.conv_b))
        else:
            lines.append(f"conv {layer.in_channels} {layer.out_channels} {layer.kernel_size} {layer.stride}")
            lines.append(_format_conv(layer))
    return "\n".join(lines) + "\n"


def save_weights(weights, path):
    atomic_write(path, format_weights(weights))


def reference_architecture(width=64):
    """
    Layer shapes of the default network as ``(kind, in, out, k, stride)``.

    stem conv 3x3/2, three (resblock, conv 3x3/2) stages, a resblock and a
    3x3 single-channel head.
    """
    shapes = [('conv', 3, width, 3, 2)]
    for _ in range(3):
        shapes.append(('resblock', width, width, 3, 1))
        shapes.append(('conv', width, width, 3, 2))
    shapes.append(('resblock', width, width, 3, 1))
    shapes.append(('conv', width, 1, 3, 1))
    return shapes


def build_weights(shapes, rng, scale=None):
    """Random weights for ``shapes`` (He-style scale by default)."""
    def conv(in_ch, out_ch, k, stride):
        std = scale if scale is not None else np.sqrt(2.0 / (in_ch * k * k))
        return ConvLayer(
            in_channels=in_ch, out_channels=out_ch, kernel_size=k, stride=stride,
            weights=(rng.standard_normal((out_ch, in_ch, k, k)) * std).astype(np.float32),
            bias=(rng.standard_normal(out_ch) * 0.01).astype(np.float32),
        )

    layers = []
    for kind, in_ch, out_ch, k, stride in shapes:
        if kind == 'resblock':
            layers.append(ResidualBlock(conv(in_ch, in_ch, 3, 1), conv(in_ch, in_ch, 3, 1)))
        else:
            layers.append(conv(in_ch, out_ch, k, stride))
    return ModelWeights(layers=tuple(layers))


# ============= inference =============

def _same_ceil_pad(size, k, stride):
    out = ceil_div(size, stride)
    pad = max((out - 1) * stride + k - size, 0)
    lead = pad // 2
    return out, lead, pad - lead


def conv2d(x, layer):
    """
    Strided 2-D convolution with "same-ceil" replicate padding.

    ``x`` is (C, H, W) float32; the result is (C', ceil(H/s), ceil(W/s)).
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise InferenceError(f"conv expects {layer.in_channels} input channels, got shape {x.shape}")
    _, h, w = x.shape
    k, s = layer.kernel_size, layer.stride
    out_h, top, bottom = _same_ceil_pad(h, k, s)
    out_w, left, right = _same_ceil_pad(w, k, s)
    padded = np.pad(x, ((0, 0), (top, bottom), (left, right)), mode='edge')

    out = np.empty((layer.out_channels, out_h, out_w), dtype=np.float32)
    out[:] = layer.bias[:, None, None]
    span_h = (out_h - 1) * s + 1
    span_w = (out_w - 1) * s + 1
    for i in range(layer.in_channels):
        for ky in range(k):
            for kx in range(k):
                window = padded[i, ky:ky + span_h:s, kx:kx + span_w:s]
                out += layer.weights[:, i, ky, kx][:, None, None] * window[None]
    return out


def _apply(layer, x):
    if isinstance(layer, ResidualBlock):
        y = np.maximum(conv2d(x, layer.conv_a), np.float32(0))
        return conv2d(y, layer.conv_b) + x
    return conv2d(x, layer)


def forward(x, weights):
    """Run every layer on a (C, H, W) array; no final activation."""
    x = np.asarray(x, dtype=np.float32)
    for layer in weights.layers:
        x = _apply(layer, x)
    return x


def softplus(x):
    """ln(1 + e^x), overflow-safe; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    big = x > 30
    safe = np.where(big, 0.0, x)
    out = np.where(big, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(safe)))
    return float(out) if out.ndim == 0 else out


def infer_step_map(img, weights):
    if img.channels != 3:
        raise InferenceError("step inference needs a 3-channel image")
    weights.check_step_contract()
    x = img.samples.astype(np.float32).transpose(2, 0, 1) / np.float32(255.0)
    pre = forward(x, weights)
    expected = (1, ceil_div(img.height, DOWNSAMPLE), ceil_div(img.width, DOWNSAMPLE))
    if pre.shape != expected:
        raise InferenceError(f"network produced shape {pre.shape}, expected {expected}")
    steps = softplus(pre[0].astype(np.float64))
    if np.any(steps <= 0):
        # only reachable when a pre-activation is below about -745
        raise InferenceError("step map underflowed to zero")
    logger.debug(f"step map {steps.shape[1]}x{steps.shape[0]}, range [{steps.min():.6g}, {steps.max():.6g}]")
    return StepMap(steps)


# ============= QSMAP =============

def format_step_map(step_map):
    return format_grid(STEPMAP_TAG, (), step_map.values, kind='float')


def write_step_map(step_map, path):
    atomic_write(path, format_step_map(step_map))


def read_step_map(path):
    try:
        text = Path(path).read_text(encoding='ascii')
    except FileNotFoundError as exc:
        raise GridFormatError("file not found", path) from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise GridFormatError(f"cannot read step map ({exc})", path) from exc
    _, values = parse_grid(text, STEPMAP_TAG, 0, 'float', path)
    if np.any(values <= 0):
        raise GridFormatError("step map values must be positive", path)
    return StepMap(values)
