"""Pixel-space stylization with Adam, and a finite-difference gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .featurenet import FeatureNet, forward, make_test_net
from .filters import MxdogParams, scaled_dog, soft_mxdog
from .losses import LossBreakdown, LossWeights, precompute_targets, total_loss_and_grad
from .tensor_io import as_image, resize_longest_edge, resize_to_longest_edge

__all__ = [
    "AdamState",
    "adam_step",
    "StylizeConfig",
    "stylize",
    "format_log",
    "GradcheckEntry",
    "GradcheckReport",
    "GRADCHECK_CONFIGS",
    "gradcheck",
]

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8

    @classmethod
    def fresh(cls, shape, dtype=np.float32, **hyper) -> "AdamState":
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype), **hyper)


def adam_step(img, grad, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_img, new_state)``."""
    img = np.asarray(img)
    grad = np.asarray(grad, dtype=img.dtype)
    if grad.shape != img.shape or state.m.shape != img.shape:
        raise ValueError(
            f"shape mismatch: image {img.shape}, gradient {grad.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = img - state.lr * m_hat / (np.sqrt(v_hat) + state.delta)
    return new.astype(img.dtype), replace(state, m=m.astype(img.dtype), v=v.astype(img.dtype), t=t)


@dataclass(frozen=True)
class StylizeConfig:
    iterations: int = 500
    lr: float = 1e-2
    weights: LossWeights = field(default_factory=LossWeights)
    params: MxdogParams = field(default_factory=MxdogParams)
    rho: float = 50.0
    seed: int = 0
    init: str = "content"
    max_edge: int = 768
    log_interval: int = 10
    dtype: str = "float32"
    hard_diagnostics: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.init not in ("content", "noise"):
            raise ValueError(f"init must be 'content' or 'noise', got {self.init!r}")
        if self.max_edge < 1:
            raise ValueError("max_edge must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


def _rgb(img):
    img = as_image(img)
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def stylize(content, style, net: FeatureNet, cfg: StylizeConfig = StylizeConfig()):
    """Minimize the weighted objective over the pixels of the output image.

    Returns ``(image, history)`` where history is a list of
    ``(iteration, LossBreakdown)`` taken every ``log_interval`` steps and
    once more for the final image.
    """
    dtype = np.dtype(cfg.dtype)
    content = _rgb(resize_longest_edge(content, cfg.max_edge)).astype(dtype)
    style = _rgb(resize_to_longest_edge(style, max(content.shape[:2]))).astype(dtype)
    w, params = cfg.weights, cfg.params
    targets = precompute_targets(content, style, net, params, w, dtype=dtype)

    if cfg.init == "content":
        img = content.copy()
    else:
        rng = np.random.default_rng(cfg.seed)
        img = rng.uniform(0.4, 0.6, size=content.shape).astype(dtype)

    state = AdamState.fresh(img.shape, dtype=dtype, lr=cfg.lr)
    history: list[tuple[int, LossBreakdown]] = []
    for it in range(cfg.iterations):
        record = it % cfg.log_interval == 0
        breakdown, grad = total_loss_and_grad(
            img, targets, net, params, w, cfg.rho, dtype=dtype,
            hard_diagnostics=record and cfg.hard_diagnostics,
        )
        if record:
            history.append((it, breakdown))
            log.info("iter %d total %.6g", it, breakdown.total)
        img, state = adam_step(img, grad, state)
        np.clip(img, 0.0, 1.0, out=img)
    final, _ = total_loss_and_grad(img, targets, net, params, w, cfg.rho, dtype=dtype,
                                   hard_diagnostics=cfg.hard_diagnostics)
    history.append((cfg.iterations, final))
    return img, history


LOG_COLUMNS = ("iteration", "l_content", "l_mxdog_content", "l_style",
               "l_mxdog_content_cns", "l_mxdog_style_cns", "total",
               "hard_mxdog_content_cns", "hard_mxdog_style_cns")


def format_log(history) -> str:
    """Tab-separated loss records, one per logged iteration, with a header."""
    lines = ["# " + "\t".join(LOG_COLUMNS)]
    for it, b in history:
        vals = [*b.terms, b.total, b.hard_mxdog_content_cns, b.hard_mxdog_style_cns]
        lines.append("\t".join([str(it)] + ["nan" if v is None else repr(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


def parse_log(text: str) -> list[dict]:
    """Inverse of :func:`format_log` (values as floats, iteration as int)."""
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        row = {k: float(v) for k, v in zip(LOG_COLUMNS[1:], parts[1:])}
        row["iteration"] = int(parts[0])
        rows.append(row)
    return rows


# -- gradient check ----------------------------------------------------------

GRADCHECK_CONFIGS = {
    "content": (1.0, 0.0, 0.0, 0.0, 0.0),
    "mxdog_content": (0.0, 1.0, 0.0, 0.0, 0.0),
    "style": (0.0, 0.0, 1.0, 0.0, 0.0),
    "mxdog_content_cns": (0.0, 0.0, 0.0, 1.0, 0.0),
    "mxdog_style_cns": (0.0, 0.0, 0.0, 0.0, 1.0),
    "total": LossWeights().as_tuple(),
}


@dataclass(frozen=True)
class GradcheckEntry:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    n_skipped: int
    n_nonzero: int


@dataclass(frozen=True)
class GradcheckReport:
    size: int
    seed: int
    precision: int
    step: float
    tolerance: float
    entries: tuple

    @property
    def max_rel_error(self) -> float:
        return max(e.max_rel_error for e in self.entries)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def format(self) -> str:
        lines = [f"gradcheck size={self.size} seed={self.seed} precision={self.precision} "
                 f"step={self.step:g} tolerance={self.tolerance:g}"]
        for e in self.entries:
            lines.append(
                f"  {e.name:<18} max_rel_err={e.max_rel_error:.3e} at {e.worst_index} "
                f"(analytic {e.analytic:.6e}, numeric {e.numeric:.6e}; "
                f"{e.n_checked} coords, {e.n_nonzero} nonzero, {e.n_skipped} at kinks)"
            )
        lines.append(f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_error:.3e}")
        return "\n".join(lines)


def _kink_signature(net, img, params, rho, taps, dtype):
    # every branch choice in the graph: relu masks, pool switches, ramp branch
    sig = [scaled_dog(img, params) < params.epsilon]
    for x in (img, soft_mxdog(img, params, rho)):
        _, trace = forward(net, x, taps, dtype=dtype, return_trace=True)
        for i, inp in enumerate(trace.inputs):
            kind = net.layers[i].kind
            if kind == "relu":
                sig.append(inp > 0)
            elif kind == "pool":
                sig.append(trace.switches[i])
    return sig


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(size: int = 16, seed: int = 0, precision: int = 64, n_coords: int = 50,
              step: float = 1e-3, configs=None, net: FeatureNet | None = None,
              rho: float = 50.0, params: MxdogParams = MxdogParams()) -> GradcheckReport:
    """Compare analytic gradients of the objective with central differences.

    Content, style and evaluation images are uniform noise drawn from
    ``seed``; the test net uses the same seed.  Coordinates whose +/- step straddles a relu, pool or ramp
    kink are redrawn.  Relative error is ``|a - n| / max(|a|, |n|, floor)``
    with ``floor = 1e-6 * max|grad|``.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    if precision not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    dtype = np.float64 if precision == 64 else np.float32
    tolerance = 1e-4 if precision == 64 else 1e-2
    net = net if net is not None else make_test_net(seed, 8)
    configs = GRADCHECK_CONFIGS if configs is None else configs

    rng = np.random.default_rng(seed)
    content, style, img = (rng.random((size, size, 3)).astype(dtype) for _ in range(3))
    base = LossWeights()
    taps = list(dict.fromkeys([base.content_layer, *base.style_layers]))

    entries = []
    for name, lam in configs.items():
        w = LossWeights(*lam)
        targets = precompute_targets(content, style, net, params, w, dtype=dtype)
        _, grad = total_loss_and_grad(img, targets, net, params, w, rho, dtype=dtype)
        floor = 1e-6 * float(np.max(np.abs(grad)))
        crng = np.random.default_rng([seed, len(entries)])

        def total(x):
            return total_loss_and_grad(x, targets, net, params, w, rho, dtype=dtype)[0].total

        worst = (0.0, (), 0.0, 0.0)
        checked = skipped = nonzero = 0
        while checked < n_coords:
            idx = tuple(int(crng.integers(n)) for n in img.shape)
            plus, minus = img.copy(), img.copy()
            plus[idx] += step
            minus[idx] -= step
            if not _same(_kink_signature(net, plus, params, rho, taps, dtype),
                         _kink_signature(net, minus, params, rho, taps, dtype)):
                skipped += 1
                if skipped > 20 * n_coords:
                    raise RuntimeError("too many kink crossings; cannot sample coordinates")
                continue
            numeric = (total(plus) - total(minus)) / (2.0 * step)
            analytic = float(grad[idx])
            nonzero += analytic != 0.0
            denom = max(abs(analytic), abs(numeric), floor)
            err = abs(analytic - numeric) / denom if denom > 0 else 0.0
            if err >= worst[0]:
                worst = (err, idx, analytic, numeric)
            checked += 1
        entries.append(GradcheckEntry(name, worst[0], worst[1], worst[2], worst[3], checked, skipped, nonzero))
    return GradcheckReport(size, seed, precision, step, tolerance, tuple(entries))
