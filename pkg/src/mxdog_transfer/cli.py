"""Command-line entry point: ``mxdog-transfer {filter,stylize,gradcheck,inspect-weights}``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error, 3 numerical
divergence.  Every subcommand accepts ``--config FILE``, a flat JSON object
whose keys are flag names (``"max-edge"`` or ``"max_edge"``).  Values given on
the command line override the file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib

import numpy as np

from .featurenet import FeatureNet, make_test_net
from .filters import MxdogParams, dog, gaussian_blur, mxdog, threshold_xdog, xdog
from .losses import LossWeights
from .optimizer import StylizeConfig, format_log, gradcheck, stylize
from .tensor_io import ImageError, WeightFormatError, load_image, read_weights, save_image

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
RANDOM_WEIGHTS_NOTICE = (
    "*** unverified aesthetics: random test weights (make_test_net); "
    "pass --weights FILE for a real loss network ***"
)
FILTER_MODES = ("gaussian", "dog", "xdog", "txdog", "mxdog")

log = logging.getLogger("mxdog_transfer")


class UsageError(Exception):
    """Bad flag values or config contents; maps to exit code 2."""


def _positive_int(text) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _filter_params(p: argparse.ArgumentParser) -> None:
    d = MxdogParams()
    g = p.add_argument_group("filter parameters")
    g.add_argument("--sigma", type=float, default=d.sigma, help="inner Gaussian scale (default %(default)s)")
    g.add_argument("--k", type=float, default=d.k, help="outer/inner scale ratio (default %(default)s)")
    g.add_argument("--tau", type=float, default=d.tau, help="weight of the outer blur (default %(default)s)")
    g.add_argument("--phi", type=float, default=d.phi, help="ramp steepness (default %(default)s)")
    g.add_argument("--epsilon", type=float, default=d.epsilon, help="ramp threshold (default %(default)s)")
    g.add_argument("--amin", type=int, default=d.a_min, help="minimum region area in pixels (default %(default)s)")
    g.add_argument("--intensity-scale", type=float, default=d.intensity_scale,
                   help="multiply the DoG response by this before the ramp; 255 mimics a 0-255 "
                        "pixel range (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mxdog-transfer",
        description="MXDoG abstraction filter and abstract style transfer by pixel optimization.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("filter", help="apply one stage of the MXDoG pipeline to an image")
    p.add_argument("--config", metavar="FILE", help="JSON file of flag values")
    p.add_argument("--mode", choices=FILTER_MODES, default="mxdog", help="pipeline stage (default %(default)s)")
    p.add_argument("--input", metavar="PATH", help="PNG or PPM image")
    p.add_argument("--output", metavar="PATH", help="destination (.ppm/.pgm writes PPM, else PNG)")
    p.add_argument("--plot", metavar="PATH", help="also render every pipeline stage side by side to this PNG")
    _filter_params(p)

    w = LossWeights()
    s = StylizeConfig()
    p = sub.add_parser("stylize", help="optimize an image against the five-term objective")
    p.add_argument("--config", metavar="FILE", help="JSON file of flag values")
    p.add_argument("--content", metavar="PATH")
    p.add_argument("--style", metavar="PATH")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--weights", metavar="FILE", help="loss-network weight file; random test weights if omitted")
    p.add_argument("--iters", type=_positive_int, default=s.iterations, help="Adam steps (default %(default)s)")
    p.add_argument("--lr", type=float, default=s.lr, help="Adam learning rate (default %(default)s)")
    for i, lam in enumerate(w.as_tuple(), start=1):
        p.add_argument(f"--lambda{i}", type=float, default=lam, help=f"default %(default)s")
    p.add_argument("--rho", type=float, default=s.rho, help="surrogate sharpness (default %(default)s)")
    p.add_argument("--max-edge", type=_positive_int, default=s.max_edge,
                   help="content is downscaled so its longer edge is at most this (default %(default)s)")
    p.add_argument("--seed", type=int, default=s.seed, help="seeds the test net and noise init (default %(default)s)")
    p.add_argument("--init", choices=("content", "noise"), default=s.init)
    p.add_argument("--log", metavar="PATH", help="write the tab-separated loss history here")
    p.add_argument("--log-interval", type=_positive_int, default=s.log_interval)
    p.add_argument("--plot", metavar="PATH", help="render the loss history to this PNG")
    _filter_params(p)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--config", metavar="FILE", help="JSON file of flag values")
    p.add_argument("--size", type=int, default=16, help="image side, at least 16 (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", type=int, choices=(32, 64), default=64)

    p = sub.add_parser("inspect-weights", help="print the layer table of a weight file")
    p.add_argument("--config", metavar="FILE", help="JSON file of flag values")
    p.add_argument("file", metavar="FILE")
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser: argparse.ArgumentParser, argv, args: argparse.Namespace) -> argparse.Namespace:
    """Fill flags absent from ``argv`` with values from the JSON config."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object of flag names to values")

    actions = {a.dest: a for a in _subparser(parser, args.command)._actions
               if a.dest not in ("help", "config")}
    # re-parse with every default suppressed: what remains was typed by the user
    probe = build_parser()
    for a in _subparser(probe, args.command)._actions:
        a.default = argparse.SUPPRESS
    explicit = vars(probe.parse_args(argv))

    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if dest in explicit:
            continue
        action = actions[dest]
        try:
            value = action.type(value) if action.type is not None and value is not None else value
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        setattr(args, dest, value)
    return args


def _mxdog_params(args) -> MxdogParams:
    return MxdogParams(sigma=args.sigma, k=args.k, tau=args.tau, phi=args.phi, epsilon=args.epsilon,
                       a_min=args.amin, intensity_scale=args.intensity_scale)


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def apply_filter(img, mode: str, params: MxdogParams) -> np.ndarray:
    if mode == "gaussian":
        return gaussian_blur(img, params.sigma)
    if mode == "dog":
        return dog(img, params)
    if mode == "xdog":
        return xdog(img, params)
    if mode == "txdog":
        return threshold_xdog(xdog(img, params))
    return mxdog(img, params)


def cmd_filter(args) -> int:
    _require(args, "input", "output")
    try:
        params = _mxdog_params(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    img = load_image(args.input)
    # DoG responses are signed; saving clips them to the displayable range
    out = np.clip(apply_filter(img, args.mode, params), 0.0, 1.0)
    save_image(out, args.output)
    if args.plot:
        from .plotting import plot_filter_stages

        plot_filter_stages(img, args.plot, params)
    return EXIT_OK


def cmd_stylize(args) -> int:
    _require(args, "content", "style", "output")
    try:
        weights = LossWeights(args.lambda1, args.lambda2, args.lambda3, args.lambda4, args.lambda5)
        cfg = StylizeConfig(iterations=args.iters, lr=args.lr, weights=weights, params=_mxdog_params(args),
                            rho=args.rho, seed=args.seed, init=args.init, max_edge=args.max_edge,
                            log_interval=args.log_interval)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    if args.weights:
        net = FeatureNet.from_params(read_weights(args.weights))
    else:
        print(RANDOM_WEIGHTS_NOTICE, file=sys.stderr)
        net = make_test_net(args.seed, 8)
    content = load_image(args.content)
    style = load_image(args.style)
    img, history = stylize(content, style, net, cfg)
    save_image(img, args.output)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_log(history))
    if args.plot:
        from .plotting import plot_loss_history

        plot_loss_history(history, args.plot)
    first, last = history[0][1].total, history[-1][1].total
    print(f"total loss {first:.6g} -> {last:.6g} over {cfg.iterations} iterations")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.size < 16:
        raise UsageError(f"--size must be at least 16, got {args.size}")
    report = gradcheck(size=args.size, seed=args.seed, precision=args.precision)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_inspect_weights(args) -> int:
    layers = read_weights(args.file)
    rows = [("name", "shape", "params", "crc32")]
    for p in layers:
        crc = zlib.crc32(p.kernel.astype("<f4").tobytes())
        crc = zlib.crc32(p.bias.astype("<f4").tobytes(), crc)
        rows.append((p.name, "x".join(map(str, p.shape)), str(p.n_params), f"{crc:08x}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip())
    print(f"{len(layers)} layers, {sum(p.n_params for p in layers)} parameters")
    return EXIT_OK


COMMANDS = {
    "filter": cmd_filter,
    "stylize": cmd_stylize,
    "gradcheck": cmd_gradcheck,
    "inspect-weights": cmd_inspect_weights,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help gives 0, bad flags give 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, argv, args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"{parser.prog} {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ImageError, WeightFormatError, ValueError, RuntimeError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
