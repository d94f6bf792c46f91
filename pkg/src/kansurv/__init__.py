"""Spline-network hazard regression for right-censored data.

Subpackages cover the univariate spline bases (bspline), the layered network
and its gradients (kan), the hazard/survival head and censored likelihood
(survival), the training loop (train), synthetic data generation (simgen),
evaluation metrics (metrics), and orchestration/IO (bench, cli).
"""

__version__ = "0.1.0"
