from ._maskdiff import *  # noqa: F401,F403
