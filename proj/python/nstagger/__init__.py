"""Staggered neural PDE solvers."""

from ._nstagger import *  # noqa: F401,F403
from ._nstagger import __version__  # noqa: F401
