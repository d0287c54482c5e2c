"""Task classification and interpretation from interaction behavior logs."""

from __future__ import annotations

__version__ = "0.1.0"
