"""Python bindings for the IMAC simulator."""

from ._core import *  # noqa: F401,F403
