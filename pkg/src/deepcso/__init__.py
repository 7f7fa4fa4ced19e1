"""deepcso: multi-task recurrent forecasting of combined sewer overflow water levels."""

from __future__ import annotations

__version__ = "0.1.0"
