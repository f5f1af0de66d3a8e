"""Serve any flagged/safe predicate over the attack engine's wire protocol.

The bridge turns a user-supplied Python module with a single predict(x)
function into a TCP oracle the engine can attack remotely: newline-delimited
JSON, one verdict per query, optional exact-grid enforcement for quantized
(8-bit image) models. The bridge never imports the engine; the wire grammar
is the whole contract between them.
"""

from .config import BridgeConfig, ConfigError, load_config, parse_grid
from .predicate import ModelLoadError, load_predicate
from .server import PROTOCOL_VERSION, BridgeServer, make_server, off_grid, serve

__all__ = [
    "BridgeConfig", "BridgeServer", "ConfigError", "ModelLoadError",
    "PROTOCOL_VERSION", "load_config", "load_predicate", "make_server",
    "off_grid", "parse_grid", "serve",
]
