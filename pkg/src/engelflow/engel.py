"""Differential operators of the standard rank-2 frame on R^4.

The frame is

    X1 = d/dx1
    X2 = d/dx2 + x1 * d/dx3 + x3 * d/dx4
    X3 = d/dx3
    X4 = d/dx4

with bracket relations [X1, X2] = X3 and [X2, X3] = -X4.  The horizontal
distribution is spanned by X1, X2 and carries the metric making them
orthonormal, so frame components double as metric coordinates.

Word notation follows composition order: the word (i, j) applied to f means
X_i(X_j f), i.e. the rightmost index acts first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .poly import Poly4

__all__ = [
    "FrameVector",
    "HorizontalField",
    "apply_X",
    "apply_word",
    "horizontal_gradient",
    "riemannian_gradient",
    "G_poly",
    "xi_polys",
    "xi_field",
    "frame_directional",
    "ambient_velocity",
    "one_form_residual",
    "frame_matrix",
    "frame_to_ambient",
    "horizontal_frame_jacobian_polys",
    "ambient_jacobian_polys",
]

_X1 = Poly4.variable(1)
_X3 = Poly4.variable(3)


def apply_X(i: int, p: Poly4) -> Poly4:
    """Apply the i-th frame field to p as a first-order operator."""
    if i == 1:
        return p.partial(1)
    if i == 2:
        return p.partial(2) + _X1 * p.partial(3) + _X3 * p.partial(4)
    if i == 3:
        return p.partial(3)
    if i == 4:
        return p.partial(4)
    raise ValueError(f"frame index must be 1..4, got {i}")


def apply_word(word: Sequence[int], p: Poly4) -> Poly4:
    """Apply a word of frame fields, rightmost index first.

    apply_word((1, 2), f) is X1(X2 f).
    """
    out = p
    for i in reversed(tuple(word)):
        out = apply_X(i, out)
    return out


@dataclass(frozen=True)
class FrameVector:
    """Tangent vector at a base point, stored in frame components.

    The ambient coordinates are a1*X1 + a2*X2 + a3*X3 + a4*X4 evaluated at
    the base point.  Frame components are metric coordinates for the
    horizontal part, so the horizontal norm is hypot(a1, a2).
    """

    a: tuple[float, float, float, float]
    basepoint: tuple[float, float, float, float]

    def ambient(self) -> tuple[float, float, float, float]:
        a1, a2, a3, a4 = self.a
        x1, _, x3, _ = self.basepoint
        return (a1, a2, a2 * x1 + a3, a2 * x3 + a4)

    def horizontal_norm(self) -> float:
        return math.hypot(self.a[0], self.a[1])


@dataclass(frozen=True)
class HorizontalField:
    """Horizontal gradient of a polynomial: h1*X1 + h2*X2 with h_i = X_i f."""

    h1: Poly4
    h2: Poly4
    source: Poly4

    def eval(self, x: Sequence[float]) -> tuple[float, float]:
        return (self.h1.eval(x), self.h2.eval(x))

    def norm_at(self, x: Sequence[float]) -> float:
        return math.hypot(self.h1.eval(x), self.h2.eval(x))


def horizontal_gradient(f: Poly4) -> HorizontalField:
    return HorizontalField(apply_X(1, f), apply_X(2, f), f)


def riemannian_gradient(f: Poly4) -> tuple[Poly4, Poly4, Poly4, Poly4]:
    """Frame components of the full gradient: (X1 f, X2 f, X3 f, X4 f)."""
    return (apply_X(1, f), apply_X(2, f), apply_X(3, f), apply_X(4, f))


def G_poly(f: Poly4) -> Poly4:
    """Degeneracy polynomial: X11 f * X22 f - X21 f * X12 f.

    Equals the determinant of the 2x2 horizontal second-derivative block;
    its zeros on the critical surface cut out the degeneracy curve.
    """
    x11 = apply_word((1, 1), f)
    x21 = apply_word((2, 1), f)
    x12 = apply_word((1, 2), f)
    x22 = apply_word((2, 2), f)
    return x11 * x22 - x21 * x12


def xi_polys(f: Poly4) -> tuple[Poly4, Poly4]:
    """Frame component polynomials of the degeneracy tangent field.

    The field is (-X21 f) * X1 + (X11 f) * X2; it spans the kernel of the
    horizontal second-derivative block along the degeneracy curve.
    """
    return (-apply_word((2, 1), f), apply_word((1, 1), f))


def xi_field(f: Poly4, x: Sequence[float]) -> FrameVector:
    """Degeneracy tangent field evaluated at a point, as a FrameVector."""
    c1, c2 = xi_polys(f)
    pt = tuple(float(v) for v in x)
    return FrameVector((c1.eval(pt), c2.eval(pt), 0.0, 0.0), pt)  # type: ignore[arg-type]


def frame_directional(p: Poly4, v: FrameVector) -> float:
    """Directional derivative of p along v at its base point.

    Computed as sum_j a_j * (X_j p)(basepoint); components with a_j = 0 are
    skipped, so purely horizontal vectors cost two operator applications.
    """
    total = 0.0
    for j in range(4):
        aj = v.a[j]
        if aj != 0.0:
            total += aj * apply_X(j + 1, p).eval(v.basepoint)
    return total


def ambient_velocity(hf: HorizontalField, x: Sequence[float]) -> tuple[float, float, float, float]:
    """Ambient velocity of the horizontal field at x.

    For a*X1 + b*X2 the ambient vector is (a, b, x1*b, x3*b); building the
    last two entries from the same product as the one-form test makes the
    horizontality residual vanish exactly.
    """
    pt = tuple(float(v) for v in x)
    a = hf.h1.eval(pt)
    b = hf.h2.eval(pt)
    return (a, b, pt[0] * b, pt[2] * b)


def one_form_residual(x: Sequence[float], v: Sequence[float]) -> tuple[float, float]:
    """Defect of v against the two defining one-forms at x.

    Returns (v3 - x1*v2, v4 - x3*v2); both vanish iff v is horizontal at x.
    """
    x1, _, x3, _ = (float(c) for c in x)
    v1, v2, v3, v4 = (float(c) for c in v)
    return (v3 - x1 * v2, v4 - x3 * v2)


def frame_matrix(x: Sequence[float]) -> np.ndarray:
    """Matrix whose columns are the frame fields in ambient coordinates."""
    x1, _, x3, _ = (float(c) for c in x)
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, x1, 1.0, 0.0],
            [0.0, x3, 0.0, 1.0],
        ]
    )


def frame_to_ambient(k: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """Convert frame components to an ambient vector at x."""
    k1, k2, k3, k4 = (float(c) for c in k)
    x1, _, x3, _ = (float(c) for c in x)
    return np.array([k1, k2, k2 * x1 + k3, k2 * x3 + k4])


def horizontal_frame_jacobian_polys(f: Poly4) -> list[list[Poly4]]:
    """Frame Jacobian of the horizontal gradient as a 2x4 polynomial grid.

    Row one holds (X11 f, X21 f, X31 f, X41 f), row two
    (X12 f, X22 f, X32 f, X42 f): entry (i, j) is X_j applied to X_i f, so
    the j-th column is the derivative along the j-th frame field.
    """
    rows = []
    for i in (1, 2):
        base = apply_X(i, f)
        rows.append([apply_X(j, base) for j in (1, 2, 3, 4)])
    return rows


def ambient_jacobian_polys(polys: Sequence[Poly4]) -> list[list[Poly4]]:
    """Coordinate Jacobian grid: row i holds the four partials of polys[i]."""
    return [[p.partial(j) for j in (1, 2, 3, 4)] for p in polys]
