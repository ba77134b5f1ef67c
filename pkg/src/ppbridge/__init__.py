"""Point-process bridges of Skellam order flow and the insider equilibrium built on them.

Modules: ``skellam`` (pmf, cdf, quantiles), ``law`` (conditioning function and
intensities), ``clock`` and ``simulator`` (exact bridge paths), ``equilibrium``
(value functions, prices, profit Monte Carlo), ``kyle`` (diffusion limit),
``harness`` and ``acceptance`` (statistical checks) and ``cli``.
"""

__version__ = "0.1.0"
