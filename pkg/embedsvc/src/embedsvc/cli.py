"""embedsvc command line: serve the HTTP API or populate embedding files.

`populate` runs the configured encoders in-process over a corpus JSONL file
(the pipeline's record schema: instance_id, question, image_path, ...) and
writes the pipeline's embedding file format, one JSON object per line:
{"instance_id", "space", "vector"}.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

from .config import SPACES, ServiceConfig
from .encoders import build_encoder


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    app = create_app(config, preload=True)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _read_corpus(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})")
            for key in ("instance_id", "question", "image_path"):
                if key not in record:
                    raise ValueError(f"{path.name}:{lineno}: missing field {key!r}")
            records.append(record)
    return records


def cmd_populate(args) -> int:
    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {args.space!r}")
    encoder = build_encoder(config.encoders[args.space], args.space, config.dimension)
    encoder.load()
    records = _read_corpus(Path(args.corpus))
    base_dir = Path(args.corpus).parent
    written = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for record in records:
            text = record["question"] if args.space in ("question", "joint") else None
            image_b64 = None
            if args.space in ("image", "joint"):
                image_path = Path(record["image_path"])
                if not image_path.is_absolute():
                    image_path = base_dir / image_path
                image_b64 = base64.b64encode(image_path.read_bytes()).decode("ascii")
            vector = encoder.encode(text, image_b64)
            out.write(
                json.dumps(
                    {
                        "instance_id": record["instance_id"],
                        "space": args.space,
                        "vector": [float(x) for x in vector],
                    }
                )
                + "\n"
            )
            written += 1
    print(f"wrote {written} {args.space} vectors ({encoder.name}) to {args.out}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedsvc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", help="service config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8901)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("populate", help="write an embedding file for one space")
    p.add_argument("--config", help="service config JSON")
    p.add_argument("--corpus", required=True, help="corpus JSONL")
    p.add_argument("--space", required=True, choices=SPACES)
    p.add_argument("--out", required=True, help="embedding JSONL output")
    p.set_defaults(func=cmd_populate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
