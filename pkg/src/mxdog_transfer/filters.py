"""MXDoG abstraction filter: Gaussian/DoG/XDoG stages, mean binarization
and small-region removal, plus a smooth surrogate used for gradients.

All filters act on each channel independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .tensor_io import as_image

__all__ = [
    "MxdogParams",
    "gaussian_kernel",
    "gaussian_blur",
    "gaussian_blur_adjoint",
    "dog",
    "ramp",
    "scaled_dog",
    "xdog",
    "threshold_xdog",
    "morph_filter",
    "mxdog",
    "soft_mxdog",
    "soft_mxdog_vjp",
    "channel_means",
]

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class MxdogParams:
    """Filter parameters.

    ``intensity_scale`` multiplies the DoG response before the ``epsilon``/
    ``phi`` ramp, i.e. it states the intensity units the thresholds are
    expressed in.  1.0 means [0, 1] pixels; 255.0 treats ``epsilon`` as an
    8-bit intensity offset.
    """

    sigma: float = 1.0
    k: float = 1.6
    tau: float = 0.94
    phi: float = 50.0
    epsilon: float = -0.1
    a_min: int = 10
    intensity_scale: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.k > 1:
            raise ValueError(f"k must be > 1, got {self.k}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if int(self.a_min) != self.a_min or self.a_min < 1:
            raise ValueError(f"a_min must be an integer >= 1, got {self.a_min}")
        if not (math.isfinite(self.phi) and math.isfinite(self.epsilon)):
            raise ValueError("phi and epsilon must be finite")
        if not (math.isfinite(self.intensity_scale) and self.intensity_scale > 0):
            raise ValueError(f"intensity_scale must be > 0, got {self.intensity_scale}")


@lru_cache(maxsize=32)
def _kernel64(sigma: float) -> np.ndarray:
    r = math.ceil(3.0 * sigma)
    i = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(i * i) / (2.0 * sigma * sigma))
    g /= g.sum()
    g.setflags(write=False)
    return g


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps on [-ceil(3 sigma), ceil(3 sigma)]."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return _kernel64(float(sigma)).copy()


@lru_cache(maxsize=64)
def _mirror_index(n: int, r: int) -> np.ndarray:
    # mirror with edge repeat (d c b a | a b c d | d c b a), any r
    idx = np.pad(np.arange(n), r, mode="symmetric")
    idx.setflags(write=False)
    return idx


def _blur_last(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    r = len(g) // 2
    padded = x[..., _mirror_index(n, r)]
    out = g[0] * padded[..., 0:n]
    for j in range(1, len(g)):
        out = out + g[j] * padded[..., j:j + n]
    return out


def _blur_last_adjoint(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = y.shape[-1]
    r = len(g) // 2
    gp = np.zeros(y.shape[:-1] + (n + 2 * r,), dtype=y.dtype)
    for j in range(len(g)):
        gp[..., j:j + n] += g[j] * y
    idx = _mirror_index(n, r)
    out = gp[..., r:r + n].copy()
    for p in list(range(r)) + list(range(n + r, n + 2 * r)):
        out[..., idx[p]] += gp[..., p]
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of every channel with mirrored borders."""
    x = as_image(img)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    g = gaussian_kernel(sigma).astype(x.dtype)
    # (H, W, C) -> (C, W, H): blur rows, then columns
    t = np.moveaxis(x, 2, 0)
    t = _blur_last(t, g)
    t = _blur_last(np.swapaxes(t, 1, 2), g)
    return np.moveaxis(np.swapaxes(t, 1, 2), 0, 2)


def gaussian_blur_adjoint(grad, sigma: float) -> np.ndarray:
    """Transpose of :func:`gaussian_blur` as a linear map (borders included)."""
    y = as_image(grad)
    g = gaussian_kernel(sigma).astype(y.dtype)
    t = np.moveaxis(y, 2, 0)
    t = np.swapaxes(_blur_last_adjoint(np.swapaxes(t, 1, 2), g), 1, 2)
    t = _blur_last_adjoint(t, g)
    return np.moveaxis(t, 0, 2)


def dog(img, params: MxdogParams = MxdogParams()) -> np.ndarray:
    """Difference of Gaussians weighted by tau on the coarse scale."""
    fine = gaussian_blur(img, params.sigma)
    coarse = gaussian_blur(img, params.k * params.sigma)
    return fine - fine.dtype.type(params.tau) * coarse


def ramp(u, phi: float = 50.0, epsilon: float = -0.1) -> np.ndarray:
    """Soft threshold: 1 where ``u >= epsilon``, else ``1 + tanh(phi * (u - epsilon))``."""
    u = np.asarray(u)
    if not np.issubdtype(u.dtype, np.floating):
        u = u.astype(np.float64)
    return _ramp(u, phi, epsilon)


def _ramp(u: np.ndarray, phi: float, epsilon: float) -> np.ndarray:
    # 1 + tanh(x) == 2 / (1 + exp(-2x)); this form stays positive far below eps
    x = np.minimum(u - u.dtype.type(epsilon), 0)
    with np.errstate(over="ignore"):
        ramp = 2.0 / (1.0 + np.exp(-2.0 * phi * x))
    return np.where(u >= epsilon, 1.0, ramp).astype(u.dtype)


def scaled_dog(img, params: MxdogParams = MxdogParams()) -> np.ndarray:
    """DoG response in threshold units (``intensity_scale`` times :func:`dog`)."""
    u = dog(img, params)
    return u * u.dtype.type(params.intensity_scale)


def xdog(img, params: MxdogParams = MxdogParams()) -> np.ndarray:
    """Soft-ramp thresholded DoG; values lie in (0, 1]."""
    return _ramp(scaled_dog(img, params), params.phi, params.epsilon)


def channel_means(img) -> np.ndarray:
    """Per-channel arithmetic mean with an order-independent exact sum."""
    x = as_image(img)
    count = x.shape[0] * x.shape[1]
    return np.array(
        [math.fsum(x[:, :, c].ravel().tolist()) / count for c in range(x.shape[2])],
        dtype=np.float64,
    )


def threshold_xdog(xd) -> np.ndarray:
    """Binarize each channel against its own mean; ties go to 0."""
    x = as_image(xd)
    mu = channel_means(x).astype(x.dtype)
    return (x > mu).astype(x.dtype)


def _flip_small(channel: np.ndarray, value, a_min: int) -> np.ndarray:
    labels, n = ndimage.label(channel == value, structure=_EIGHT_CONNECTED)
    if n == 0:
        return channel
    sizes = np.bincount(labels.ravel())
    small = sizes < a_min
    small[0] = False
    flip = small[labels]
    if not flip.any():
        return channel
    out = channel.copy()
    out[flip] = 1 - value
    return out


def morph_filter(binary, a_min: int) -> np.ndarray:
    """Flip every 8-connected constant region smaller than ``a_min`` pixels.

    Runs per channel: 1-valued regions first, then 0-valued regions of
    that result.
    """
    x = as_image(binary)
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("morph_filter expects a binary {0, 1} image")
    if a_min < 1:
        raise ValueError("a_min must be >= 1")
    out = np.empty_like(x)
    for c in range(x.shape[2]):
        ch = _flip_small(x[:, :, c], 1, a_min)
        out[:, :, c] = _flip_small(ch, 0, a_min)
    return out


def mxdog(img, params: MxdogParams = MxdogParams()) -> np.ndarray:
    """Exact (non-differentiable) MXDoG: XDoG, mean threshold, morphology."""
    return morph_filter(threshold_xdog(xdog(img, params)), params.a_min)


def soft_mxdog_vjp(img, params: MxdogParams = MxdogParams(), rho: float = 50.0,
                   detach_mean: bool = False):
    """Smooth MXDoG surrogate and its vector-Jacobian product.

    The hard mean threshold becomes ``0.5 * (1 + tanh(rho * (v - mean)))``
    where ``v`` is the XDoG output and ``mean`` its channel mean.  The ramp
    producing ``v`` uses steepness ``phi / intensity_scale``, so its slope
    per unit of pixel intensity is ``phi`` whatever the threshold units.
    Morphology is left out of the smooth path.  By default the gradient
    also flows through the channel mean, so the vjp is the exact
    derivative of the forward value; ``detach_mean=True`` treats the mean
    as a constant instead.

    Returns ``(output, vjp)`` where ``vjp(grad_out)`` gives the image gradient.
    """
    if not rho > 0:
        raise ValueError("rho must be > 0")
    x = as_image(img)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    u = scaled_dog(x, params)
    soft_phi = params.phi / params.intensity_scale
    v = _ramp(u, soft_phi, params.epsilon)
    mu = channel_means(v).astype(x.dtype)
    t = np.tanh(x.dtype.type(rho) * (v - mu))
    out = 0.5 * (1.0 + t)

    def vjp(grad_out):
        gv = np.asarray(grad_out, dtype=x.dtype) * (0.5 * rho) * (1.0 - t * t)
        if not detach_mean:
            gv = gv - gv.mean(axis=(0, 1), keepdims=True)
        gu = np.where(u < params.epsilon, gv * soft_phi * v * (2.0 - v), 0.0).astype(x.dtype)
        gu *= x.dtype.type(params.intensity_scale)
        return (gaussian_blur_adjoint(gu, params.sigma)
                - x.dtype.type(params.tau) * gaussian_blur_adjoint(gu, params.k * params.sigma))

    return out.astype(x.dtype), vjp


def soft_mxdog(img, params: MxdogParams = MxdogParams(), rho: float = 50.0) -> np.ndarray:
    """Forward value of the smooth MXDoG surrogate."""
    return soft_mxdog_vjp(img, params, rho)[0]
