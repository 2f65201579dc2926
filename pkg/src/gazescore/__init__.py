"""Multi-task essay scoring that jointly learns human scores and reader gaze."""

__version__ = "0.1.0"
