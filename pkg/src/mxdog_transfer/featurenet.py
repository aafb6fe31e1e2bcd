"""VGG-16 style loss network (through relu4_3) with a hand-written
reverse pass for image gradients.

Feature maps are arrays of shape (channels, height, width).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_io import ConvParams, as_image

__all__ = [
    "VGG16_CONV_NAMES",
    "VGG16_CHANNELS",
    "DEFAULT_MEANS",
    "Layer",
    "FeatureNet",
    "ForwardTrace",
    "preprocess",
    "forward",
    "backward",
    "make_test_net",
]

VGG16_CONV_NAMES = (
    "conv1_1", "conv1_2",
    "conv2_1", "conv2_2",
    "conv3_1", "conv3_2", "conv3_3",
    "conv4_1", "conv4_2", "conv4_3",
)
VGG16_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512)
DEFAULT_MEANS = (0.485, 0.456, 0.406)

_CONV_NAME = re.compile(r"conv(\d+)_(\d+)$")


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv", "relu" or "pool"
    name: str
    params: ConvParams | None = None


@dataclass(frozen=True)
class FeatureNet:
    """Immutable conv/relu/pool stack.

    Every ``convB_I`` is followed by ``reluB_I``; a 2x2 max-pool sits
    between consecutive blocks ``B``.
    """

    layers: tuple[Layer, ...]
    means: tuple[float, ...] = DEFAULT_MEANS
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {l.name: i for i, l in enumerate(self.layers)})
        prev_out = None
        for layer in self.layers:
            if layer.kind != "conv":
                continue
            out_c, in_c, kh, kw = layer.params.shape
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"{layer.name}: kernel size must be odd, got {kh}x{kw}")
            if prev_out is not None and in_c != prev_out:
                raise ValueError(
                    f"{layer.name}: expects {in_c} input channels, previous layer gives {prev_out}"
                )
            prev_out = out_c

    @classmethod
    def from_params(cls, convs, means=DEFAULT_MEANS) -> "FeatureNet":
        """Build the layer sequence from conv parameters named ``convB_I``."""
        layers: list[Layer] = []
        block = None
        for p in convs:
            m = _CONV_NAME.match(p.name)
            if m is None:
                raise ValueError(f"conv layer names must look like convB_I, got {p.name!r}")
            b, i = m.groups()
            if block is not None and b != block:
                layers.append(Layer("pool", f"pool{block}"))
            block = b
            layers.append(Layer("conv", p.name, p))
            layers.append(Layer("relu", f"relu{b}_{i}"))
        return cls(tuple(layers), tuple(float(m) for m in means))

    @property
    def convs(self) -> list[ConvParams]:
        return [l.params for l in self.layers if l.kind == "conv"]

    @property
    def in_channels(self) -> int:
        return self.convs[0].shape[1]

    @property
    def layer_names(self) -> list[str]:
        return [l.name for l in self.layers]

    def has_layer(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown layer {name!r}") from None


def preprocess(img, means=DEFAULT_MEANS) -> np.ndarray:
    """Subtract per-channel means; grayscale is replicated to 3 channels."""
    x = as_image(img)
    if x.shape[2] == 1 and len(means) == 3:
        x = np.repeat(x, 3, axis=2)
    return x - np.asarray(means, dtype=x.dtype)[: x.shape[2]]


# -- primitive ops -----------------------------------------------------------

def _conv_forward(x, kernel, bias):
    c, h, w = x.shape
    out_c, _, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (c, h, w, kh, kw)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * kh * kw)
    out = cols @ kernel.reshape(out_c, -1).T + bias
    return out.T.reshape(out_c, h, w)


def _conv_backward(grad, kernel, in_shape):
    c, h, w = in_shape
    out_c, _, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    dcols = (grad.reshape(out_c, h * w).T @ kernel.reshape(out_c, -1)).reshape(h, w, c, kh, kw)
    dxp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=grad.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + w] += dcols[:, :, :, i, j].transpose(2, 0, 1)
    return dxp[:, ph:ph + h, pw:pw + w]


def _pool_forward(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = (x[:, :2 * h2, :2 * w2]
              .reshape(c, h2, 2, w2, 2)
              .transpose(0, 1, 3, 2, 4)
              .reshape(c, h2, w2, 4))
    # argmax returns the first maximum: row-major order inside each 2x2 block
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(grad, arg, in_shape):
    c, h, w = in_shape
    h2, w2 = grad.shape[1:]
    blocks = np.zeros((c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
    dx = np.zeros(in_shape, dtype=grad.dtype)
    dx[:, :2 * h2, :2 * w2] = (blocks.reshape(c, h2, w2, 2, 2)
                               .transpose(0, 1, 3, 2, 4)
                               .reshape(c, 2 * h2, 2 * w2))
    return dx


# -- network passes ----------------------------------------------------------

@dataclass
class ForwardTrace:
    """Per-layer inputs and pooling switches recorded by :func:`forward`."""

    inputs: list
    switches: dict
    replicated: bool
    dtype: np.dtype


def _check_taps(net: FeatureNet, taps) -> int:
    if not taps:
        return -1
    last = -1
    for name in taps:
        if not net.has_layer(name):
            raise KeyError(f"unknown tap {name!r}")
        last = max(last, net.index(name))
    return last


def forward(net: FeatureNet, img, taps, dtype=np.float32, return_trace=False):
    """Run the network and return ``{tap: feature map}``.

    With ``return_trace=True`` also return a :class:`ForwardTrace` for
    :func:`backward`.
    """
    taps = list(taps)
    last = _check_taps(net, taps)
    x_img = as_image(img).astype(dtype, copy=False)
    replicated = x_img.shape[2] == 1 and net.in_channels == 3
    x = np.moveaxis(preprocess(x_img, net.means[: net.in_channels]), 2, 0)
    if x.shape[0] != net.in_channels:
        raise ValueError(f"network expects {net.in_channels} channels, image has {x.shape[0]}")

    want = set(taps)
    out: dict[str, np.ndarray] = {}
    inputs = []
    switches = {}
    for i in range(last + 1):
        layer = net.layers[i]
        inputs.append(x)
        if layer.kind == "conv":
            p = layer.params
            x = _conv_forward(x, p.kernel.astype(dtype, copy=False), p.bias.astype(dtype, copy=False))
        elif layer.kind == "relu":
            x = np.maximum(x, 0)
        else:
            if x.shape[1] < 2 or x.shape[2] < 2:
                raise ValueError(
                    f"image too small: {x_img.shape[0]}x{x_img.shape[1]} leaves no pixels after {layer.name}"
                )
            x, switches[i] = _pool_forward(x)
        if layer.name in want:
            out[layer.name] = x
    if return_trace:
        return out, ForwardTrace(inputs, switches, replicated, np.dtype(dtype))
    return out


def backward(net: FeatureNet, img, tap_grads, dtype=np.float32, trace: ForwardTrace | None = None):
    """Image gradient of ``sum_t <tap_grads[t], forward(img)[t]>``."""
    if trace is None:
        _, trace = forward(net, img, tap_grads.keys(), dtype=dtype, return_trace=True)
    dtype = trace.dtype
    last = _check_taps(net, tap_grads.keys())
    in_img = as_image(img)
    if last < 0:
        return np.zeros(in_img.shape, dtype=dtype)

    grad = None
    for i in range(last, -1, -1):
        layer = net.layers[i]
        g_tap = tap_grads.get(layer.name)
        if g_tap is not None:
            g_tap = np.asarray(g_tap, dtype=dtype)
            expect = _output_shape(layer, trace, i)
            if g_tap.shape != expect:
                raise ValueError(
                    f"gradient for {layer.name} has shape {g_tap.shape}, expected {expect}"
                )
            grad = g_tap if grad is None else grad + g_tap
        if grad is None:
            continue
        x = trace.inputs[i]
        if layer.kind == "conv":
            grad = _conv_backward(grad, layer.params.kernel.astype(dtype, copy=False), x.shape)
        elif layer.kind == "relu":
            grad = np.where(x > 0, grad, 0).astype(dtype, copy=False)
        else:
            grad = _pool_backward(grad, trace.switches[i], x.shape)
    img_grad = np.moveaxis(grad, 0, 2)
    if trace.replicated:
        img_grad = img_grad.sum(axis=2, keepdims=True)
    return np.ascontiguousarray(img_grad)


def _output_shape(layer: Layer, trace: ForwardTrace, i: int):
    c, h, w = trace.inputs[i].shape
    if layer.kind == "conv":
        return (layer.params.shape[0], h, w)
    if layer.kind == "pool":
        return (c, h // 2, w // 2)
    return (c, h, w)


def make_test_net(seed: int = 0, scale: int = 8, means=DEFAULT_MEANS) -> FeatureNet:
    """Deterministic random VGG-16-shaped net with channels divided by ``scale``.

    Kernels are He-normal (std sqrt(2 / fan_in)); biases are small uniform.
    """
    if scale < 1 or 64 % scale:
        raise ValueError(f"scale must divide 64, got {scale}")
    rng = np.random.default_rng(seed)
    convs = []
    in_c = 3
    for name, ch in zip(VGG16_CONV_NAMES, VGG16_CHANNELS):
        out_c = ch // scale
        fan_in = in_c * 9
        kernel = rng.standard_normal((out_c, in_c, 3, 3)) * np.sqrt(2.0 / fan_in)
        bias = rng.uniform(-0.01, 0.01, size=out_c)
        convs.append(ConvParams(name, kernel.astype(np.float32), bias.astype(np.float32)))
        in_c = out_c
    return FeatureNet.from_params(convs, means)
