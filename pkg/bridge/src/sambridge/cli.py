"""Entry point: serve the protocol over stdio (default) or TCP.

--stub runs the weights-free conformance model; otherwise --weights must
point at a segment-anything checkpoint.
"""
from __future__ import annotations

import argparse
import sys

from .oracle import OracleModel
from .server import serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sam-bridge",
        description="Inference server speaking the length-prefixed mask protocol",
    )
    parser.add_argument("--weights", help="checkpoint path for the real model")
    parser.add_argument("--device", default="cpu", help="torch device for the model")
    parser.add_argument(
        "--model-type", default="", help="registry key (vit_b/vit_l/vit_h); guessed from the filename if empty"
    )
    parser.add_argument(
        "--tcp", metavar="HOST:PORT", help="listen on TCP instead of stdio"
    )
    parser.add_argument(
        "--stub", action="store_true", help="serve the weights-free conformance stub"
    )
    return parser


def make_model(args: argparse.Namespace):
    if args.stub:
        return OracleModel()
    if not args.weights:
        raise SystemExit("either --stub or --weights is required")
    from .model import CheckpointModel

    return CheckpointModel(args.weights, device=args.device, model_type=args.model_type)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.tcp:
        host, sep, port = args.tcp.rpartition(":")
        if not sep or not host:
            raise SystemExit(f"bad --tcp value {args.tcp!r}, expected HOST:PORT")
        serve_tcp(lambda: make_model(args), host, int(port))
    else:
        serve_stdio(make_model(args))
    return 0


if __name__ == "__main__":
    sys.exit(main())
