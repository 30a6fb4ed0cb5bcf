"""Planted faults for exercising the verification suite.

Faults are inert unless the environment variable ``VRPENALTY_ENABLE_FAULTS``
is set to ``1``; release use never sets it.  Activation is process-wide and
scoped with :func:`injected`.
"""

from __future__ import annotations

import contextlib
import os

from .errors import ConfigurationError

ENABLE_VAR = "VRPENALTY_ENABLE_FAULTS"
FAULTS = ("truncation-radius", "threshold-sign")

_active: set = set()


def enabled() -> bool:
    return os.environ.get(ENABLE_VAR) == "1"


def active(name: str) -> bool:
    return name in _active


@contextlib.contextmanager
def injected(name: str):
    if name not in FAULTS:
        raise ConfigurationError(f"unknown fault {name!r}; expected one of {', '.join(FAULTS)}")
    if not enabled():
        raise ConfigurationError(f"fault injection is disabled; set {ENABLE_VAR}=1 to enable it")
    _active.add(name)
    try:
        yield
    finally:
        _active.discard(name)
