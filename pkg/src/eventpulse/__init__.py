"""Event-level social media corpora as forecastable time series.

The package turns raw per-platform post dumps into calendar-aligned
discussion-intensity and sentiment series at daily and sub-daily
granularities, with paired textual views of each bin and per-event
interaction graphs, and evaluates forecasting baselines over several
protocols on top of those artifacts.
"""

from __future__ import annotations

__version__ = "0.1.0"
