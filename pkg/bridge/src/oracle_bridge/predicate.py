"""Load the user's model as a plain Python module exposing predict(x).

The contract keeps the bridge framework-agnostic: predict receives a numpy
float64 vector of the configured dimension and returns either a bool (the
flagged verdict directly) or an integer class label, which the bridge maps
through the configured flagged-class set. Anything the module imports or
loads at module scope (weights, sessions, pipelines) is its own business.
"""

from __future__ import annotations

import importlib
import importlib.util
import os
from typing import Callable

import numpy as np


class ModelLoadError(Exception):
    """The predicate module could not be imported or lacks predict()."""


def _import_module(path: str):
    if path.endswith(".py") or os.sep in path:
        name = os.path.splitext(os.path.basename(path))[0]
        spec = importlib.util.spec_from_file_location(f"bridge_model_{name}", path)
        if spec is None or spec.loader is None:
            raise ModelLoadError(f"cannot load module from {path!r}")
        module = importlib.util.module_from_spec(spec)
        try:
            spec.loader.exec_module(module)
        except Exception as exc:
            raise ModelLoadError(f"model module failed to import: {exc}") from exc
        return module
    try:
        return importlib.import_module(path)
    except Exception as exc:
        raise ModelLoadError(f"cannot import module {path!r}: {exc}") from exc


def load_predicate(model_path: str,
                   flagged_classes: frozenset[int]) -> Callable[[np.ndarray], bool]:
    """Wrap the module's predict() into a vector -> flagged-verdict callable."""
    module = _import_module(model_path)
    predict = getattr(module, "predict", None)
    if not callable(predict):
        raise ModelLoadError(
            f"module {model_path!r} must expose a callable predict(x)")

    def verdict(x: np.ndarray) -> bool:
        out = predict(x)
        if isinstance(out, (bool, np.bool_)):
            return bool(out)
        if isinstance(out, (int, np.integer)):
            if not flagged_classes:
                raise ValueError(
                    "predict() returned a class label but no flagged_classes "
                    "are configured")
            return int(out) in flagged_classes
        raise ValueError(
            f"predict() must return bool or int, got {type(out).__name__}")

    return verdict
