"""Single-pass invertible convolutions and the flow models built from them."""

from ._invflow import *  # noqa: F401,F403
from ._invflow import __doc__  # noqa: F401
