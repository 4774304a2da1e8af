from ._mqenet import *  # noqa: F401,F403
from ._mqenet import __doc__  # noqa: F401
