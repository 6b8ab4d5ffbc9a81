"""Numerical laboratory for the potential form of Lagrangian mean curvature flow.

Modules:

* :mod:`lagflow.spectral` - eigenvalues, *Omega, det S, 2-convexity, angle oracle
* :mod:`lagflow.constructions` - invariant cone and radial booster functions
* :mod:`lagflow.regularization` - mollification and the choice of smoothing radius
* :mod:`lagflow.flow` - explicit integration of u_t = sum arctan lambda_i(D^2 u)
* :mod:`lagflow.expander` - self-expander residuals, rescaling, convergence runs
* :mod:`lagflow.inequalities` - sampling verification of the inequality chains
* :mod:`lagflow.cli` - batch front end
"""

__version__ = "0.1.0"
