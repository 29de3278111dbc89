"""Nonlinear acceleration of fixed-point iterations and its asymptotic analysis."""
