from ._clalign import *  # noqa: F401,F403
from ._clalign import __version__  # noqa: F401
