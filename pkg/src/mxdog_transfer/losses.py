"""Content, style and MXDoG loss terms and the weighted total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .featurenet import FeatureNet, backward, forward
from .filters import MxdogParams, mxdog, soft_mxdog_vjp
from .tensor_io import as_image

__all__ = [
    "STYLE_LAYERS",
    "CONTENT_LAYER",
    "LossWeights",
    "LossBreakdown",
    "StyleTargets",
    "gram",
    "content_loss",
    "style_loss",
    "precompute_targets",
    "total_loss_and_grad",
]

CONTENT_LAYER = "relu3_3"
STYLE_LAYERS = ("relu1_2", "relu2_1", "relu2_2", "relu3_1", "relu3_3", "relu4_1", "relu4_3")
TERM_NAMES = ("l_content", "l_mxdog_content", "l_style", "l_mxdog_content_cns", "l_mxdog_style_cns")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 5.0
    lambda4: float = 2e2
    lambda5: float = 1e3
    content_layer: str = CONTENT_LAYER
    style_layers: tuple[str, ...] = STYLE_LAYERS

    def __post_init__(self):
        for i, lam in enumerate(self.as_tuple(), start=1):
            if not (math.isfinite(lam) and lam >= 0):
                raise ValueError(f"lambda{i} must be a finite value >= 0, got {lam}")
        object.__setattr__(self, "style_layers", tuple(self.style_layers))

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted term values and their weighted sum.

    Terms whose weight is zero are not evaluated and read 0.0.  The
    ``hard_*`` fields hold the constraint terms recomputed with the exact
    MXDoG filter when diagnostics were requested.  ``weighted`` gives each
    term's contribution to ``total``.
    """

    l_content: float
    l_mxdog_content: float
    l_style: float
    l_mxdog_content_cns: float
    l_mxdog_style_cns: float
    total: float
    hard_mxdog_content_cns: float | None = None
    hard_mxdog_style_cns: float | None = None
    lambdas: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)

    @classmethod
    def compose(cls, terms, weights: LossWeights, **hard) -> "LossBreakdown":
        lam = weights.as_tuple()
        weighted = [float(l) * float(t) for l, t in zip(lam, terms)]
        total = weighted[0] + weighted[1] + weighted[2] + weighted[3] + weighted[4]
        return cls(*(float(t) for t in terms), float(total), lambdas=tuple(map(float, lam)), **hard)

    @property
    def terms(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in TERM_NAMES)

    @property
    def weighted(self) -> tuple[float, ...]:
        return tuple(l * t for l, t in zip(self.lambdas, self.terms))


@dataclass(frozen=True)
class StyleTargets:
    content_features: np.ndarray
    mxdog_content_features: np.ndarray
    style_grams: dict
    mxdog_style_grams: dict
    content_mxdog: np.ndarray
    style_mxdog: np.ndarray
    shape: tuple = field(default=())


def gram(f) -> np.ndarray:
    """Channel correlation matrix of a (N, H, W) feature map, divided by H*W."""
    f = np.asarray(f)
    n = f.shape[0]
    flat = f.reshape(n, -1)
    g = flat @ flat.T / flat.shape[1]
    # mirror the upper triangle so the result is exactly symmetric
    iu = np.triu_indices(n, 1)
    g[(iu[1], iu[0])] = g[iu]
    return g


def content_loss(f, target) -> float:
    """Mean squared feature difference over channels and target positions."""
    f, target = np.asarray(f), np.asarray(target)
    if f.shape != target.shape:
        raise ValueError(f"feature shape {f.shape} does not match target {target.shape}")
    n = target.shape[0]
    m = int(np.prod(target.shape[1:]))
    d = f - target
    return float(np.sum(d * d) / (n * m))


def _content_grad(f, target):
    n = target.shape[0]
    m = int(np.prod(target.shape[1:]))
    return (2.0 / (n * m)) * (f - target)


def style_loss(fs, targets) -> float:
    """Sum over layers of squared Gram differences divided by N_l**2."""
    if set(fs) != set(targets):
        raise ValueError(f"layer sets differ: {sorted(fs)} vs {sorted(targets)}")
    total = 0.0
    for name in targets:
        g, t = gram(fs[name]), np.asarray(targets[name])
        if g.shape != t.shape:
            raise ValueError(f"{name}: Gram shape {g.shape} does not match target {t.shape}")
        d = g - t
        total += float(np.sum(d * d)) / (t.shape[0] ** 2)
    return total


def _style_grad(f, target_gram):
    n = f.shape[0]
    m = int(np.prod(f.shape[1:]))
    d = gram(f) - target_gram
    flat = f.reshape(n, -1)
    return ((4.0 / (n * n * m)) * (d @ flat)).reshape(f.shape)


def precompute_targets(content, style, net: FeatureNet, params: MxdogParams = MxdogParams(),
                       w: LossWeights = LossWeights(), dtype=np.float32) -> StyleTargets:
    """Exact-MXDoG images of both inputs and every feature/Gram target."""
    content = as_image(content).astype(dtype)
    style = as_image(style).astype(dtype)
    c_md = mxdog(content, params)
    s_md = mxdog(style, params)
    cl, sl = w.content_layer, list(w.style_layers)
    fc = forward(net, content, [cl], dtype=dtype)
    fcm = forward(net, c_md, [cl], dtype=dtype)
    fs = forward(net, style, sl, dtype=dtype)
    fsm = forward(net, s_md, sl, dtype=dtype)
    return StyleTargets(
        content_features=fc[cl],
        mxdog_content_features=fcm[cl],
        style_grams={l: gram(fs[l]) for l in sl},
        mxdog_style_grams={l: gram(fsm[l]) for l in sl},
        content_mxdog=c_md,
        style_mxdog=s_md,
        shape=content.shape,
    )


def _add(grads, name, g):
    grads[name] = g if name not in grads else grads[name] + g


def total_loss_and_grad(img, targets: StyleTargets, net: FeatureNet,
                        params: MxdogParams = MxdogParams(), w: LossWeights = LossWeights(),
                        rho: float = 50.0, dtype=np.float32, hard_diagnostics: bool = False):
    """Evaluate the five weighted terms and the gradient of their sum.

    The constraint terms see the smooth MXDoG surrogate of ``img``; their
    targets come from the exact filter.  Returns ``(LossBreakdown, grad)``.
    """
    x = as_image(img).astype(dtype, copy=False)
    if targets.shape and x.shape != tuple(targets.shape):
        raise ValueError(f"image shape {x.shape} does not match targets {tuple(targets.shape)}")
    lam = w.as_tuple()
    cl, sl = w.content_layer, list(w.style_layers)
    terms = [0.0] * 5
    grad = np.zeros(x.shape, dtype=dtype)

    taps = []
    if lam[0] or lam[1]:
        taps.append(cl)
    if lam[2]:
        taps.extend(l for l in sl if l not in taps)
    if taps:
        feats, trace = forward(net, x, taps, dtype=dtype, return_trace=True)
        tap_grads: dict = {}
        if lam[0]:
            terms[0] = content_loss(feats[cl], targets.content_features)
            _add(tap_grads, cl, lam[0] * _content_grad(feats[cl], targets.content_features))
        if lam[1]:
            terms[1] = content_loss(feats[cl], targets.mxdog_content_features)
            _add(tap_grads, cl, lam[1] * _content_grad(feats[cl], targets.mxdog_content_features))
        if lam[2]:
            terms[2] = style_loss({l: feats[l] for l in sl}, targets.style_grams)
            for l in sl:
                _add(tap_grads, l, lam[2] * _style_grad(feats[l], targets.style_grams[l]))
        grad += backward(net, x, tap_grads, trace=trace)

    if lam[3] or lam[4]:
        soft, vjp = soft_mxdog_vjp(x, params, rho)
        md_taps = ([cl] if lam[3] else []) + ([l for l in sl if l != cl or not lam[3]] if lam[4] else [])
        feats, trace = forward(net, soft, md_taps, dtype=dtype, return_trace=True)
        tap_grads = {}
        if lam[3]:
            terms[3] = content_loss(feats[cl], targets.mxdog_content_features)
            _add(tap_grads, cl, lam[3] * _content_grad(feats[cl], targets.mxdog_content_features))
        if lam[4]:
            terms[4] = style_loss({l: feats[l] for l in sl}, targets.mxdog_style_grams)
            for l in sl:
                _add(tap_grads, l, lam[4] * _style_grad(feats[l], targets.mxdog_style_grams[l]))
        grad += vjp(backward(net, soft, tap_grads, trace=trace))

    hard = {}
    if hard_diagnostics:
        hard_md = mxdog(x, params)
        feats = forward(net, hard_md, list(dict.fromkeys([cl] + sl)), dtype=dtype)
        hard["hard_mxdog_content_cns"] = content_loss(feats[cl], targets.mxdog_content_features)
        hard["hard_mxdog_style_cns"] = style_loss({l: feats[l] for l in sl}, targets.mxdog_style_grams)

    breakdown = LossBreakdown.compose(terms, w, **hard)
    if not math.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite loss or gradient: {breakdown}")
    return breakdown, grad
