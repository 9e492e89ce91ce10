"""Reciprocity learning in gridworld social dilemmas: environments, learners and experiment harness."""

__version__ = "0.1.0"
