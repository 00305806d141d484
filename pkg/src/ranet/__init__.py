"""Relation-aware network for temporal language grounding as multi-choice reading comprehension."""
__version__ = "0.1.0"
