"""Role-playing dialogue game that retrains its own retrieval models.

The package is organized around the data flywheel: the game service collects
episodes, the pipeline filters them into training pairs, the scoring package
trains and evaluates retrieval scorers, and the orchestrator ties the rounds
together.
"""

__version__ = "0.1.0"
