"""g3-export command line: text and image embedding export."""

from __future__ import annotations

import argparse
import sys

from .encoders import EncoderUnavailable
from .jobs import IdMismatchError, export_image_embeddings, export_text_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="g3-export",
        description="Run a frozen encoder over clues or images and write "
        ".geb embedding stores.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    text = sub.add_parser("text", help="encode clue sentences")
    text.add_argument("--clues", required=True, help="clues.jsonl from the pipeline")
    text.add_argument("--encoder", default="hash-text",
                      help="hash-text[:dim] or st:<model> (default: hash-text)")
    text.add_argument("--out", required=True, help="output .geb path")
    text.add_argument("--batch-size", type=int, default=32)

    images = sub.add_parser("images", help="encode manifest images")
    images.add_argument("--manifest", required=True, help="manifest.jsonl")
    images.add_argument("--images", required=True,
                        help="directory of <image_id>.<ext> files")
    images.add_argument("--encoder", default="pixel-image",
                        help="pixel-image[:dim] or torchvision:<model>")
    images.add_argument("--out", required=True, help="output .geb path")
    images.add_argument("--batch-size", type=int, default=16)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        if args.command == "text":
            rows, dim = export_text_embeddings(
                args.clues, args.encoder, args.out, batch_size=args.batch_size
            )
        else:
            rows, dim = export_image_embeddings(
                args.manifest, args.images, args.encoder, args.out,
                batch_size=args.batch_size,
            )
    except (EncoderUnavailable, IdMismatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {rows} rows of dim {dim} to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
