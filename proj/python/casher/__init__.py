"""Amortized data collection for generalist policies."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
