"""Command-line entry: oracle-bridge [--config FILE] [flags]."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .predicate import ModelLoadError
from .server import serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="oracle-bridge",
        description="serve a predict(x) module over the oracle wire protocol")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--host", help="listen address (default 127.0.0.1)")
    parser.add_argument("--port", type=int, help="listen port (0 = ephemeral)")
    parser.add_argument("--model", dest="model_path",
                        help="predicate module: a .py path or importable name")
    parser.add_argument("--dim", dest="dimension", type=int,
                        help="input dimension")
    parser.add_argument("--grid", help="quantization grid, e.g. 1/255")
    parser.add_argument("--flagged-classes", dest="flagged_classes",
                        help="comma-separated labels treated as flagged")
    args = parser.parse_args(argv)

    overrides = {
        "host": args.host,
        "port": args.port,
        "model_path": args.model_path,
        "dimension": args.dimension,
        "grid": args.grid,
        "flagged_classes": (None if args.flagged_classes is None else
                            [c for c in args.flagged_classes.split(",") if c]),
    }
    try:
        cfg = load_config(args.config, overrides)
        serve(cfg)
    except (ConfigError, ModelLoadError) as exc:
        print(f"oracle-bridge: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"oracle-bridge: cannot serve: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
