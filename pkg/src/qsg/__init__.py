"""Numerical laboratory for disordered quantum spin-1/2 systems.

Exact traces, Duhamel correlation functions, Lie-Trotter products and a
continuous-time path-integral estimator, plus executable checks of the
universality, concentration and trace inequalities these objects satisfy.
"""

__version__ = "0.1.0"
