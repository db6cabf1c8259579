"""Multiple change-point detection for piecewise tvAR processes.

The procedure runs in three steps: scan statistics propose candidate
jumps and kinks, an MDL criterion selects a subset together with
per-segment orders and degrees, and a local refinement step sharpens each
location and attaches a confidence interval.
"""
from __future__ import annotations

__version__ = "0.1.0"
