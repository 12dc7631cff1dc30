"""Batched closed-form linear algebra for stacks of 3x3 matrices.

All routines accept arrays of shape (..., 3, 3) and vectorize over the
leading axes.  Eigenvalues of symmetric matrices come from the
trigonometric solve of the characteristic cubic; functions of SPD
matrices (square root, inverse square root) are evaluated through the
Newton divided-difference form of the quadratic interpolant, whose
coefficients stay finite and cancellation-free when eigenvalues
coalesce:

    f(C) = f(l1) I + f[l1,l2] (C - l1 I) + f[l1,l2,l3] (C - l1 I)(C - l2 I)

with, for f = sqrt (s_i = sqrt(l_i)),

    f[a,b]   = 1 / (s_a + s_b)
    f[a,b,c] = -1 / ((s_a+s_b)(s_b+s_c)(s_a+s_c))

and for f = x^{-1/2},

    f[a,b]   = -1 / (s_a s_b (s_a + s_b))
    f[a,b,c] = (s_a+s_b+s_c) / (s_a s_b s_c (s_a+s_b)(s_b+s_c)(s_a+s_c)).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "det3",
    "inv3",
    "adjugate3",
    "sym_eigvals3",
    "spd_sqrt3",
    "spd_invsqrt3",
    "polar_rotation",
    "rotations_from_quaternions",
]

_EYE = np.eye(3)


def det3(a: np.ndarray) -> np.ndarray:
    """Determinant of a stack of 3x3 matrices, cofactor expansion."""
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def adjugate3(a: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix), so a @ adj = det * I."""
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    out[..., 0, 1] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    out[..., 0, 2] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    out[..., 1, 0] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    out[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    out[..., 1, 2] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    out[..., 2, 0] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    out[..., 2, 1] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    out[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return out


def inv3(a: np.ndarray, det: np.ndarray | None = None) -> np.ndarray:
    """Inverse via the adjugate; pass a precomputed determinant to reuse it."""
    d = det3(a) if det is None else det
    return adjugate3(a) / d[..., None, None]


def sym_eigvals3(c: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 stacks, descending, shape (..., 3).

    Trigonometric closed form.  The isotropic case (all eigenvalues
    equal) is exact: the deviator norm p vanishes and the formula
    collapses to the mean eigenvalue.
    """
    c00 = c[..., 0, 0]
    c11 = c[..., 1, 1]
    c22 = c[..., 2, 2]
    c01 = c[..., 0, 1]
    c02 = c[..., 0, 2]
    c12 = c[..., 1, 2]

    q = (c00 + c11 + c22) / 3.0
    d00 = c00 - q
    d11 = c11 - q
    d22 = c22 - q
    p2 = d00 * d00 + d11 * d11 + d22 * d22 + 2.0 * (c01 * c01 + c02 * c02 + c12 * c12)
    p = np.sqrt(p2 / 6.0)
    # p == 0 means c is a multiple of the identity; keep the division
    # well-defined, the arccos argument is irrelevant there.
    p_safe = np.where(p > 0.0, p, 1.0)

    b00 = d00 / p_safe
    b11 = d11 / p_safe
    b22 = d22 / p_safe
    b01 = c01 / p_safe
    b02 = c02 / p_safe
    b12 = c12 / p_safe
    half_det_b = 0.5 * (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = np.clip(half_det_b, -1.0, 1.0)
    theta = np.arccos(r) / 3.0

    two_p = 2.0 * p
    lam1 = q + two_p * np.cos(theta)
    lam3 = q + two_p * np.cos(theta + 2.0 * np.pi / 3.0)
    lam2 = 3.0 * q - lam1 - lam3
    return np.stack([lam1, lam2, lam3], axis=-1)


def _newton_poly(c: np.ndarray, lam: np.ndarray, f1, f12, f123) -> np.ndarray:
    """Assemble f(C) from divided-difference coefficients (arrays over batch)."""
    l1 = lam[..., 0, None, None]
    l2 = lam[..., 1, None, None]
    t1 = c - l1 * _EYE
    t2 = c - l2 * _EYE
    return (
        f1[..., None, None] * _EYE
        + f12[..., None, None] * t1
        + f123[..., None, None] * (t1 @ t2)
    )


def spd_sqrt3(c: np.ndarray, eigvals: np.ndarray | None = None) -> np.ndarray:
    """Principal square root of SPD stacks (no eigenvectors required)."""
    lam = sym_eigvals3(c) if eigvals is None else eigvals
    s = np.sqrt(lam)
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    f1 = s1
    f12 = 1.0 / (s1 + s2)
    f123 = -1.0 / ((s1 + s2) * (s2 + s3) * (s1 + s3))
    return _newton_poly(c, lam, f1, f12, f123)


def spd_invsqrt3(c: np.ndarray, eigvals: np.ndarray | None = None) -> np.ndarray:
    """Inverse square root of SPD stacks."""
    lam = sym_eigvals3(c) if eigvals is None else eigvals
    s = np.sqrt(lam)
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    f1 = 1.0 / s1
    f12 = -1.0 / (s1 * s2 * (s1 + s2))
    f123 = (s1 + s2 + s3) / (s1 * s2 * s3 * (s1 + s2) * (s2 + s3) * (s1 + s3))
    return _newton_poly(c, lam, f1, f12, f123)


def polar_rotation(g: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor R = G (G^T G)^{-1/2} of invertible stacks."""
    c = np.swapaxes(g, -1, -2) @ g
    return g @ spd_invsqrt3(c)


def rotations_from_quaternions(q: np.ndarray) -> np.ndarray:
    """Map unit quaternions (..., 4) to rotation matrices (..., 3, 3).

    Inputs are normalized internally, so any nonzero 4-vector works;
    Gaussian samples give Haar-uniform rotations.
    """
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out
