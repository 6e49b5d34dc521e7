"""Validate a binary classifier against a panel of human annotators.

Consensus reference labels, inter-rater agreement, bootstrapped diagnostic
metrics, latent class (EM) estimates of sensitivity/specificity without a
gold standard, and bootstrap bias-corrected probability calibration.
"""

__version__ = "0.1.0"
