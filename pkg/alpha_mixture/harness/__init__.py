"""
Experiment harness: configuration, trial execution and reporting.

.. automodule:: alpha_mixture.harness.config

.. automodule:: alpha_mixture.harness.trial

.. automodule:: alpha_mixture.harness.report

.. automodule:: alpha_mixture.harness.exceptions
"""
