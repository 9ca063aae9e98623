"""Semantic speech retrieval: synthetic corpus generation, multitask
speech-to-keyword training with visual grounding, and retrieval evaluation."""

__version__ = "0.1.0"
