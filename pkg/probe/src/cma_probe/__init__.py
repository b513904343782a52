"""Cross-modal attention probe over eventpulse work directories.

The probe consumes the file artifacts a built work directory already
contains (per-bin series CSVs, window definitions, per-bin text views
with their typed token grids, unified posts) plus token embedding files
of its own, and trains a forecaster that fuses per-bin text structure
into a transformer encoder over the numeric history. Three input
configurations differ only in how the token batch is constructed: no
text at all, content without structure ids, or content with them.
"""

from .hyperparams import CmaHyperparams
from .model import CmaModel, TokenBatch

__all__ = ["CmaHyperparams", "CmaModel", "TokenBatch"]
