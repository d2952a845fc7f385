# Nash equilibria of stochastic games via variational inequalities
__version__ = "0.1.0"
