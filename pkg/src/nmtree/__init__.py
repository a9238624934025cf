"""Tree-structured visual grounding with neural modules assembled over a
dependency parse (NMTree), on a numpy autograd core."""

from .config import Config
from .model import NMTree

__all__ = ["Config", "NMTree"]
__version__ = "0.1.0"
