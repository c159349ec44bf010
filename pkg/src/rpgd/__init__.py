"""Sparse-view CT reconstruction with relaxed projected gradient descent.

Submodules: ``linops`` (Radon operator, spectral bounds), ``classical`` (BP,
FBP), ``projectors``, ``solvers`` (PGD, averaged PGD, RPGD), ``neural`` (the
residual CNN projector), ``tv`` (TV-ADMM baseline), ``phantoms``, ``metrics``,
``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
