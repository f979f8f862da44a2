"""Command-line front end.

``spectex synth`` runs a full synthesis; ``spectex analyze`` emits DFT
diagnostics for an image. Heavy imports happen after argument parsing so
--threads (or SPECTEX_THREADS) can cap the BLAS pools before numpy loads.

Exit codes: 0 success, 1 I/O or validation failure, 2 bad flags.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectex",
        description="Exemplar-based texture synthesis with CNN Gram statistics "
        "and a Fourier spectrum constraint.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthesize a texture from an exemplar")
    synth.add_argument("--exemplar", required=True, help="exemplar image (PNG)")
    synth.add_argument("--weights", required=True, help="VGGW weight container")
    synth.add_argument("--out", required=True, help="output PNG path")
    synth.add_argument("--beta", type=_nonnegative_float, default=1e5,
                       help="spectrum constraint weight (default 1e5)")
    synth.add_argument("--layer-weight", type=_nonnegative_float, default=1e9,
                       help="Gram loss weight applied to every capture layer (default 1e9)")
    synth.add_argument("--layers", default="conv1_1,pool1,pool2,pool3,pool4",
                       help="comma-separated capture layers")
    synth.add_argument("--iterations", type=_positive_int, default=1000)
    synth.add_argument("--seed", type=_nonnegative_int, default=0)
    synth.add_argument("--scale", type=_positive_int, default=256,
                       help="longest image side after rescaling (default 256)")
    synth.add_argument("--no-spectrum", action="store_true",
                       help="disable the spectrum constraint entirely")
    synth.add_argument("--loss-log", default=None, help="per-evaluation loss CSV path")
    synth.add_argument("--save-every", type=_positive_int, default=None,
                       help="write OUT.iterK.png every N accepted iterations")
    synth.add_argument("--threads", type=_positive_int, default=None,
                       help="cap internal parallelism (fallback: SPECTEX_THREADS)")
    synth.add_argument("--f64", action="store_true",
                       help="run the whole synthesis in float64 (verification mode)")

    analyze = sub.add_parser("analyze", help="emit DFT diagnostics for an image")
    analyze.add_argument("--image", required=True, help="input image (PNG)")
    analyze.add_argument("--out", required=True,
                         help="output PNG for the centered log-magnitude DFT")
    analyze.add_argument("--radial-csv", default=None,
                         help="optional radially averaged power profile CSV")
    analyze.add_argument("--threads", type=_positive_int, default=None)
    return parser


def _configure_threads(requested: int | None) -> None:
    count = requested
    if count is None:
        env = os.environ.get("SPECTEX_THREADS")
        if env and env.isdigit() and int(env) > 0:
            count = int(env)
    if count is None:
        return
    for var in _THREAD_ENV_VARS:
        os.environ.setdefault(var, str(count))


def _run_synth(args: argparse.Namespace) -> int:
    from . import pipeline, weights_io

    start = time.monotonic()
    layers = tuple(name.strip() for name in args.layers.split(",") if name.strip())
    config = pipeline.SynthesisConfig(
        capture_layers=layers,
        layer_weights=(args.layer_weight,) * len(layers),
        beta=args.beta,
        spectrum=not args.no_spectrum,
        iterations=args.iterations,
        seed=args.seed,
        rescale=args.scale,
        use_float64=args.f64,
    )
    weights = weights_io.load_weights(args.weights)
    exemplar = pipeline.load_image(args.exemplar)

    out_path = Path(args.out)

    def snapshot(iteration: int, image: "object") -> None:
        target = out_path.with_name(f"{out_path.stem}.iter{iteration}{out_path.suffix}")
        pipeline.save_png(target, image)

    result = pipeline.synthesize(
        exemplar,
        config,
        weights,
        loss_log_path=args.loss_log,
        snapshot_every=args.save_every,
        snapshot_fn=snapshot if args.save_every else None,
    )
    pipeline.save_png(out_path, result.output)

    total, cnn, spe = result.history[-1]
    elapsed = time.monotonic() - start
    print(
        f"iterations={result.report.iterations} "
        f"evaluations={result.report.evaluations} "
        f"termination={result.report.termination} "
        f"loss={total:.6g} cnn={cnn:.6g} spectrum={spe:.6g} "
        f"wall={elapsed:.1f}s"
    )
    print(f"wrote {out_path}")
    return 0


def _run_analyze(args: argparse.Namespace) -> int:
    from . import pipeline

    image = pipeline.load_image(args.image).astype("float64").transpose(2, 0, 1)
    magnitude = pipeline.dft_magnitude_image(image)
    pipeline.save_png(args.out, magnitude)
    print(f"wrote {args.out}")
    if args.radial_csv:
        profile = pipeline.radial_spectrum_profile(image)
        lines = ["radius,mean_power"]
        lines += [f"{int(radius)},{float(power)!r}" for radius, power in profile]
        pipeline._atomic_write_bytes(Path(args.radial_csv), ("\n".join(lines) + "\n").encode())
        print(f"wrote {args.radial_csv}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_threads(getattr(args, "threads", None))

    from .errors import SpectexError

    try:
        if args.command == "synth":
            return _run_synth(args)
        return _run_analyze(args)
    except (SpectexError, OSError) as exc:
        print(f"spectex: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
