"""
.. autoexception:: HarnessError

.. autoexception:: ConfigError

.. autoexception:: NumericDegeneracyError
"""


class HarnessError(Exception):
    """Base class for exceptions thrown while running experiments."""


class ConfigError(HarnessError):
    """Thrown when an experiment configuration is invalid or unreadable."""


class NumericDegeneracyError(HarnessError):
    """Thrown when a trial produces a mixture state which is not valid (e.g.
    non-finite parameters) despite the numerical skip policies."""
