"""CLI: vggw-export export --source ID --out PATH [--reference-image PATH]"""

from __future__ import annotations

import argparse
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vggw-export",
        description="Convert pretrained VGG-19 conv weights into a VGGW container.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    export = sub.add_parser("export", help="run the conversion")
    export.add_argument(
        "--source",
        required=True,
        help="'torchvision' or a path to a torch-saved VGG-19 state dict",
    )
    export.add_argument("--out", required=True, help="output VGGW path")
    export.add_argument(
        "--reference-image",
        default=None,
        help="optional image for reference-activation emission",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    from .exporter import ExportError, export_weights

    try:
        manifest = export_weights(args.source, args.out, args.reference_image)
    except (ExportError, OSError) as exc:
        print(f"vggw-export: error: {exc}", file=sys.stderr)
        return 1
    from pathlib import Path

    print(f"wrote {manifest.output} ({len(manifest.layers)} records)")
    print(f"wrote {Path(manifest.output).with_suffix('.manifest')}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
