"""Horizontal-gradient geometry of polynomials on R^4 under the standard Engel frame."""

__version__ = "0.1.0"

from .poly import Poly4, parse_poly, format_poly, random_poly, poly_allclose

__all__ = ["Poly4", "parse_poly", "format_poly", "random_poly", "poly_allclose"]
