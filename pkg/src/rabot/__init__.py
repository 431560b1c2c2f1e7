"""Relation-aware social bot detection on multi-relational user graphs."""
from pathlib import Path

__version__ = "0.1.0"

TOY_DATASET = Path(__file__).parent / "data" / "toy"
