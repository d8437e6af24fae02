"""cdtlab: goal-prompted medication recommendation on synthetic EHR cohorts."""

__version__ = "0.1.0"
