"""Native shaping kernel with a CSR step layout, plus a scoring bridge.

Installs independently of stepshape; ``score_pair`` imports it lazily at call
time, and ``shape_group`` shares only the file-format conventions.
"""

from ._core import score_pair, shape_group

__version__ = "0.1.0"
__all__ = ["score_pair", "shape_group"]
