"""Toolkit for building labeled chest X-ray datasets from HIS/PACS archive exports."""

__version__ = "0.1.0"
