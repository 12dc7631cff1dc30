"""Compiled per-node kernels for the density hot path.

The solvers evaluate the stored density and its first derivatives at
every grid node twice per time step, so these loops are jitted with
numba when it is importable and fall back to vectorized numpy otherwise
(identical math, same results, just slower).  Everything is written in
cancellation-free closed form:

* eigenvalues of C = G^T G from the trigonometric solution of the
  characteristic cubic,
* C^{-1/2} as the quadratic Newton interpolation polynomial in C whose
  divided-difference coefficients stay finite when eigenvalues collide,
* the polar rotation as G C^{-1/2}, determinants and adjugates as
  cofactor expansions.

Kernels never raise: out-of-domain determinants yield +inf values and
the caller turns the returned determinant array into a typed error.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror environment always has numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

from .linalg3 import adjugate3, det3, inv3, spd_invsqrt3, sym_eigvals3

W01, W02, CASE_STUDY = 0, 1, 2

KIND_CODES = {"W01": W01, "W02": W02, "CaseStudy": CASE_STUDY}

_TWO_PI_3 = 2.0943951023931953


@njit(cache=True)
def _density_kernel(g, q, kind, need_grad):  # pragma: no cover - jitted
    n = g.shape[0]
    w = np.empty(n)
    det = np.empty(n)
    grad = np.empty((n, 3, 3)) if need_grad else np.empty((0, 3, 3))
    simple_q = q == 2.0
    for k in range(n):
        g00 = g[k, 0, 0]; g01 = g[k, 0, 1]; g02 = g[k, 0, 2]
        g10 = g[k, 1, 0]; g11 = g[k, 1, 1]; g12 = g[k, 1, 2]
        g20 = g[k, 2, 0]; g21 = g[k, 2, 1]; g22 = g[k, 2, 2]
        c00 = g00 * g00 + g10 * g10 + g20 * g20
        c11 = g01 * g01 + g11 * g11 + g21 * g21
        c22 = g02 * g02 + g12 * g12 + g22 * g22
        c01 = g00 * g01 + g10 * g11 + g20 * g21
        c02 = g00 * g02 + g10 * g12 + g20 * g22
        c12 = g01 * g02 + g11 * g12 + g21 * g22
        tr = c00 + c11 + c22
        d = (
            g00 * (g11 * g22 - g12 * g21)
            - g01 * (g10 * g22 - g12 * g20)
            + g02 * (g10 * g21 - g11 * g20)
        )
        det[k] = d

        if kind == 2:
            # |C - Id|^2 and 4 G (C - Id); finite for any determinant
            e00 = c00 - 1.0; e11 = c11 - 1.0; e22 = c22 - 1.0
            w[k] = (
                e00 * e00 + e11 * e11 + e22 * e22
                + 2.0 * (c01 * c01 + c02 * c02 + c12 * c12)
            )
            if need_grad:
                grad[k, 0, 0] = 4.0 * (g00 * e00 + g01 * c01 + g02 * c02)
                grad[k, 0, 1] = 4.0 * (g00 * c01 + g01 * e11 + g02 * c12)
                grad[k, 0, 2] = 4.0 * (g00 * c02 + g01 * c12 + g02 * e22)
                grad[k, 1, 0] = 4.0 * (g10 * e00 + g11 * c01 + g12 * c02)
                grad[k, 1, 1] = 4.0 * (g10 * c01 + g11 * e11 + g12 * c12)
                grad[k, 1, 2] = 4.0 * (g10 * c02 + g11 * c12 + g12 * e22)
                grad[k, 2, 0] = 4.0 * (g20 * e00 + g21 * c01 + g22 * c02)
                grad[k, 2, 1] = 4.0 * (g20 * c01 + g21 * e11 + g22 * c12)
                grad[k, 2, 2] = 4.0 * (g20 * c02 + g21 * c12 + g22 * e22)
            continue

        if d <= 0.0:
            w[k] = np.inf
            if need_grad:
                for i in range(3):
                    for j in range(3):
                        grad[k, i, j] = 0.0
            continue

        qm = tr / 3.0
        d00 = c00 - qm; d11 = c11 - qm; d22 = c22 - qm
        p2 = d00 * d00 + d11 * d11 + d22 * d22 + 2.0 * (
            c01 * c01 + c02 * c02 + c12 * c12
        )
        if p2 <= 1e-28 * qm * qm:
            l1 = qm; l2 = qm; l3 = qm
        else:
            p = np.sqrt(p2 / 6.0)
            b00 = d00 / p; b11 = d11 / p; b22 = d22 / p
            b01 = c01 / p; b02 = c02 / p; b12 = c12 / p
            detb = (
                b00 * (b11 * b22 - b12 * b12)
                - b01 * (b01 * b22 - b12 * b02)
                + b02 * (b01 * b12 - b11 * b02)
            )
            r = detb / 2.0
            if r < -1.0:
                r = -1.0
            elif r > 1.0:
                r = 1.0
            th = np.arccos(r) / 3.0
            l1 = qm + 2.0 * p * np.cos(th)
            l3 = qm + 2.0 * p * np.cos(th + _TWO_PI_3)
            l2 = 3.0 * qm - l1 - l3
        if l1 < 0.0:
            l1 = 0.0
        if l2 < 0.0:
            l2 = 0.0
        if l3 < 0.0:
            l3 = 0.0
        s1 = np.sqrt(l1); s2 = np.sqrt(l2); s3 = np.sqrt(l3)

        if kind == 0:
            arg = np.log(d)
        else:
            arg = 1.0 / d - 1.0
        if simple_q:
            pen_val = arg * arg
            pen_d = 2.0 * arg
        else:
            a = np.abs(arg)
            pen_val = a**q
            pen_d = q * a ** (q - 1.0) * np.sign(arg)
        w[k] = tr - 2.0 * (s1 + s2 + s3) + 3.0 + pen_val

        if not need_grad:
            continue

        # C^{-1/2} = f1 Id + f12 (C - l1) + f123 (C - l1)(C - l2)
        f1 = 1.0 / s1
        f12 = -1.0 / (s1 * s2 * (s1 + s2))
        f123 = (s1 + s2 + s3) / (
            s1 * s2 * s3 * (s1 + s2) * (s2 + s3) * (s1 + s3)
        )
        a00 = c00 - l1; a11 = c11 - l1; a22 = c22 - l1
        e00 = c00 - l2; e11 = c11 - l2; e22 = c22 - l2
        p00 = f1 + f12 * a00 + f123 * (a00 * e00 + c01 * c01 + c02 * c02)
        p11 = f1 + f12 * a11 + f123 * (c01 * c01 + a11 * e11 + c12 * c12)
        p22 = f1 + f12 * a22 + f123 * (c02 * c02 + c12 * c12 + a22 * e22)
        p01 = f12 * c01 + f123 * (a00 * c01 + c01 * e11 + c02 * c12)
        p02 = f12 * c02 + f123 * (a00 * c02 + c01 * c12 + c02 * e22)
        p12 = f12 * c12 + f123 * (c01 * c02 + a11 * c12 + c12 * e22)

        if kind == 0:
            coef = pen_d / d
        else:
            coef = pen_d * (-1.0 / (d * d))

        # cofactor(G)_ij = adj(G)^T entries
        t00 = g11 * g22 - g12 * g21
        t01 = g12 * g20 - g10 * g22
        t02 = g10 * g21 - g11 * g20
        t10 = g02 * g21 - g01 * g22
        t11 = g00 * g22 - g02 * g20
        t12 = g01 * g20 - g00 * g21
        t20 = g01 * g12 - g02 * g11
        t21 = g02 * g10 - g00 * g12
        t22 = g00 * g11 - g01 * g10

        grad[k, 0, 0] = 2.0 * g00 - 2.0 * (g00 * p00 + g01 * p01 + g02 * p02) + coef * t00
        grad[k, 0, 1] = 2.0 * g01 - 2.0 * (g00 * p01 + g01 * p11 + g02 * p12) + coef * t01
        grad[k, 0, 2] = 2.0 * g02 - 2.0 * (g00 * p02 + g01 * p12 + g02 * p22) + coef * t02
        grad[k, 1, 0] = 2.0 * g10 - 2.0 * (g10 * p00 + g11 * p01 + g12 * p02) + coef * t10
        grad[k, 1, 1] = 2.0 * g11 - 2.0 * (g10 * p01 + g11 * p11 + g12 * p12) + coef * t11
        grad[k, 1, 2] = 2.0 * g12 - 2.0 * (g10 * p02 + g11 * p12 + g12 * p22) + coef * t12
        grad[k, 2, 0] = 2.0 * g20 - 2.0 * (g20 * p00 + g21 * p01 + g22 * p02) + coef * t20
        grad[k, 2, 1] = 2.0 * g21 - 2.0 * (g20 * p01 + g21 * p11 + g22 * p12) + coef * t21
        grad[k, 2, 2] = 2.0 * g22 - 2.0 * (g20 * p02 + g21 * p12 + g22 * p22) + coef * t22
    return w, grad, det


@njit(cache=True)
def _inner_kernel(g, q, kind):  # pragma: no cover - jitted
    """<dW0/dG, G> per node, eigenvalues only (see BaseDensity.inner_dw0_g)."""
    n = g.shape[0]
    inner = np.empty(n)
    det = np.empty(n)
    simple_q = q == 2.0
    for k in range(n):
        g00 = g[k, 0, 0]; g01 = g[k, 0, 1]; g02 = g[k, 0, 2]
        g10 = g[k, 1, 0]; g11 = g[k, 1, 1]; g12 = g[k, 1, 2]
        g20 = g[k, 2, 0]; g21 = g[k, 2, 1]; g22 = g[k, 2, 2]
        c00 = g00 * g00 + g10 * g10 + g20 * g20
        c11 = g01 * g01 + g11 * g11 + g21 * g21
        c22 = g02 * g02 + g12 * g12 + g22 * g22
        c01 = g00 * g01 + g10 * g11 + g20 * g21
        c02 = g00 * g02 + g10 * g12 + g20 * g22
        c12 = g01 * g02 + g11 * g12 + g21 * g22
        tr = c00 + c11 + c22
        d = (
            g00 * (g11 * g22 - g12 * g21)
            - g01 * (g10 * g22 - g12 * g20)
            + g02 * (g10 * g21 - g11 * g20)
        )
        det[k] = d
        if kind == 2:
            frob2 = (
                c00 * c00 + c11 * c11 + c22 * c22
                + 2.0 * (c01 * c01 + c02 * c02 + c12 * c12)
            )
            inner[k] = 4.0 * (frob2 - tr)
            continue
        if d <= 0.0:
            inner[k] = np.inf
            continue
        qm = tr / 3.0
        d00 = c00 - qm; d11 = c11 - qm; d22 = c22 - qm
        p2 = d00 * d00 + d11 * d11 + d22 * d22 + 2.0 * (
            c01 * c01 + c02 * c02 + c12 * c12
        )
        if p2 <= 1e-28 * qm * qm:
            l1 = qm; l2 = qm; l3 = qm
        else:
            p = np.sqrt(p2 / 6.0)
            b00 = d00 / p; b11 = d11 / p; b22 = d22 / p
            b01 = c01 / p; b02 = c02 / p; b12 = c12 / p
            detb = (
                b00 * (b11 * b22 - b12 * b12)
                - b01 * (b01 * b22 - b12 * b02)
                + b02 * (b01 * b12 - b11 * b02)
            )
            r = detb / 2.0
            if r < -1.0:
                r = -1.0
            elif r > 1.0:
                r = 1.0
            th = np.arccos(r) / 3.0
            l1 = qm + 2.0 * p * np.cos(th)
            l3 = qm + 2.0 * p * np.cos(th + _TWO_PI_3)
            l2 = 3.0 * qm - l1 - l3
        if l1 < 0.0:
            l1 = 0.0
        if l2 < 0.0:
            l2 = 0.0
        if l3 < 0.0:
            l3 = 0.0
        trsq = np.sqrt(l1) + np.sqrt(l2) + np.sqrt(l3)
        if kind == 0:
            arg = np.log(d)
            scale = 3.0
        else:
            arg = 1.0 / d - 1.0
            scale = -3.0 / d
        if simple_q:
            pen_d = 2.0 * arg
        else:
            pen_d = q * np.abs(arg) ** (q - 1.0) * np.sign(arg)
        inner[k] = 2.0 * tr - 2.0 * trsq + scale * pen_d
    return inner, det


@njit(cache=True)
def _prepare_kernel(f, kind):  # pragma: no cover - jitted
    """Scale-invariant data of F for the isotropic fast path.

    With an isotropic prestrain the evaluated gradient is G = s F for a
    positive per-node scalar s, and the polar factor of G equals that of
    F while eigenvalues and determinants scale by powers of s; so one
    pass extracts sqrt-eigenvalues of F^T F, the polar rotation, the
    auxiliary matrix the gradient formula needs (F^{-T}, or F F^T F for
    the quartic case study), det F and tr(F^T F), and any number of
    scales can be applied afterwards for a few flops per node.
    """
    n = f.shape[0]
    sq = np.empty((n, 3))
    rot = np.empty((n, 3, 3))
    aux = np.empty((n, 3, 3))
    det = np.empty(n)
    trc = np.empty(n)
    for k in range(n):
        g00 = f[k, 0, 0]; g01 = f[k, 0, 1]; g02 = f[k, 0, 2]
        g10 = f[k, 1, 0]; g11 = f[k, 1, 1]; g12 = f[k, 1, 2]
        g20 = f[k, 2, 0]; g21 = f[k, 2, 1]; g22 = f[k, 2, 2]
        c00 = g00 * g00 + g10 * g10 + g20 * g20
        c11 = g01 * g01 + g11 * g11 + g21 * g21
        c22 = g02 * g02 + g12 * g12 + g22 * g22
        c01 = g00 * g01 + g10 * g11 + g20 * g21
        c02 = g00 * g02 + g10 * g12 + g20 * g22
        c12 = g01 * g02 + g11 * g12 + g21 * g22
        tr = c00 + c11 + c22
        trc[k] = tr
        d = (
            g00 * (g11 * g22 - g12 * g21)
            - g01 * (g10 * g22 - g12 * g20)
            + g02 * (g10 * g21 - g11 * g20)
        )
        det[k] = d

        qm = tr / 3.0
        d00 = c00 - qm; d11 = c11 - qm; d22 = c22 - qm
        p2 = d00 * d00 + d11 * d11 + d22 * d22 + 2.0 * (
            c01 * c01 + c02 * c02 + c12 * c12
        )
        if p2 <= 1e-28 * qm * qm:
            l1 = qm; l2 = qm; l3 = qm
        else:
            p = np.sqrt(p2 / 6.0)
            b00 = d00 / p; b11 = d11 / p; b22 = d22 / p
            b01 = c01 / p; b02 = c02 / p; b12 = c12 / p
            detb = (
                b00 * (b11 * b22 - b12 * b12)
                - b01 * (b01 * b22 - b12 * b02)
                + b02 * (b01 * b12 - b11 * b02)
            )
            r = detb / 2.0
            if r < -1.0:
                r = -1.0
            elif r > 1.0:
                r = 1.0
            th = np.arccos(r) / 3.0
            l1 = qm + 2.0 * p * np.cos(th)
            l3 = qm + 2.0 * p * np.cos(th + _TWO_PI_3)
            l2 = 3.0 * qm - l1 - l3
        if l1 < 0.0:
            l1 = 0.0
        if l2 < 0.0:
            l2 = 0.0
        if l3 < 0.0:
            l3 = 0.0
        s1 = np.sqrt(l1); s2 = np.sqrt(l2); s3 = np.sqrt(l3)
        sq[k, 0] = s1; sq[k, 1] = s2; sq[k, 2] = s3

        if kind == 2:
            # aux = F C = F F^T F
            aux[k, 0, 0] = g00 * c00 + g01 * c01 + g02 * c02
            aux[k, 0, 1] = g00 * c01 + g01 * c11 + g02 * c12
            aux[k, 0, 2] = g00 * c02 + g01 * c12 + g02 * c22
            aux[k, 1, 0] = g10 * c00 + g11 * c01 + g12 * c02
            aux[k, 1, 1] = g10 * c01 + g11 * c11 + g12 * c12
            aux[k, 1, 2] = g10 * c02 + g11 * c12 + g12 * c22
            aux[k, 2, 0] = g20 * c00 + g21 * c01 + g22 * c02
            aux[k, 2, 1] = g20 * c01 + g21 * c11 + g22 * c12
            aux[k, 2, 2] = g20 * c02 + g21 * c12 + g22 * c22
            # rotation unused by the quartic gradient
            for i in range(3):
                for j in range(3):
                    rot[k, i, j] = 0.0
            continue

        f1 = 1.0 / s1
        f12 = -1.0 / (s1 * s2 * (s1 + s2))
        f123 = (s1 + s2 + s3) / (
            s1 * s2 * s3 * (s1 + s2) * (s2 + s3) * (s1 + s3)
        )
        a00 = c00 - l1; a11 = c11 - l1; a22 = c22 - l1
        e00 = c00 - l2; e11 = c11 - l2; e22 = c22 - l2
        p00 = f1 + f12 * a00 + f123 * (a00 * e00 + c01 * c01 + c02 * c02)
        p11 = f1 + f12 * a11 + f123 * (c01 * c01 + a11 * e11 + c12 * c12)
        p22 = f1 + f12 * a22 + f123 * (c02 * c02 + c12 * c12 + a22 * e22)
        p01 = f12 * c01 + f123 * (a00 * c01 + c01 * e11 + c02 * c12)
        p02 = f12 * c02 + f123 * (a00 * c02 + c01 * c12 + c02 * e22)
        p12 = f12 * c12 + f123 * (c01 * c02 + a11 * c12 + c12 * e22)
        rot[k, 0, 0] = g00 * p00 + g01 * p01 + g02 * p02
        rot[k, 0, 1] = g00 * p01 + g01 * p11 + g02 * p12
        rot[k, 0, 2] = g00 * p02 + g01 * p12 + g02 * p22
        rot[k, 1, 0] = g10 * p00 + g11 * p01 + g12 * p02
        rot[k, 1, 1] = g10 * p01 + g11 * p11 + g12 * p12
        rot[k, 1, 2] = g10 * p02 + g11 * p12 + g12 * p22
        rot[k, 2, 0] = g20 * p00 + g21 * p01 + g22 * p02
        rot[k, 2, 1] = g20 * p01 + g21 * p11 + g22 * p12
        rot[k, 2, 2] = g20 * p02 + g21 * p12 + g22 * p22

        dsafe = d if d > 0.0 else 1.0
        # F^{-T} = cofactor(F)/det
        aux[k, 0, 0] = (g11 * g22 - g12 * g21) / dsafe
        aux[k, 0, 1] = (g12 * g20 - g10 * g22) / dsafe
        aux[k, 0, 2] = (g10 * g21 - g11 * g20) / dsafe
        aux[k, 1, 0] = (g02 * g21 - g01 * g22) / dsafe
        aux[k, 1, 1] = (g00 * g22 - g02 * g20) / dsafe
        aux[k, 1, 2] = (g01 * g20 - g00 * g21) / dsafe
        aux[k, 2, 0] = (g01 * g12 - g02 * g11) / dsafe
        aux[k, 2, 1] = (g02 * g10 - g00 * g12) / dsafe
        aux[k, 2, 2] = (g00 * g11 - g01 * g10) / dsafe
    return sq, rot, aux, det, trc


@njit(cache=True)
def _apply_kernel(
    f, sq, rot, aux, det, trc, scale, q, kind, need_grad, need_inner
):  # pragma: no cover - jitted
    """Re-evaluate W0(sF), s dW0(sF) and <dW0, G> from prepared data."""
    n = f.shape[0]
    w = np.empty(n)
    grad = np.empty((n, 3, 3)) if need_grad else np.empty((0, 3, 3))
    inner = np.empty(n) if need_inner else np.empty(0)
    simple_q = q == 2.0
    for k in range(n):
        s = scale[k]
        s2 = s * s
        tr_g = s2 * trc[k]
        sumsq = s * (sq[k, 0] + sq[k, 1] + sq[k, 2])
        if kind == 2:
            l1 = sq[k, 0] ** 2; l2 = sq[k, 1] ** 2; l3 = sq[k, 2] ** 2
            e1 = s2 * l1 - 1.0; e2 = s2 * l2 - 1.0; e3 = s2 * l3 - 1.0
            w[k] = e1 * e1 + e2 * e2 + e3 * e3
            if need_inner:
                inner[k] = 4.0 * (e1 * l1 + e2 * l2 + e3 * l3) * s2
            if need_grad:
                c4 = 4.0 * s2 * s2
                for i in range(3):
                    for j in range(3):
                        grad[k, i, j] = c4 * aux[k, i, j] - 4.0 * s2 * f[k, i, j]
            continue

        dg = s * s2 * det[k]
        if dg <= 0.0:
            w[k] = np.inf
            if need_inner:
                inner[k] = np.inf
            if need_grad:
                for i in range(3):
                    for j in range(3):
                        grad[k, i, j] = 0.0
            continue
        if kind == 0:
            arg = np.log(dg)
        else:
            arg = 1.0 / dg - 1.0
        if simple_q:
            pen_val = arg * arg
            pen_d = 2.0 * arg
        else:
            a = np.abs(arg)
            pen_val = a**q
            pen_d = q * a ** (q - 1.0) * np.sign(arg)
        w[k] = tr_g - 2.0 * sumsq + 3.0 + pen_val
        if need_inner:
            if kind == 0:
                inner[k] = 2.0 * tr_g - 2.0 * sumsq + 3.0 * pen_d
            else:
                inner[k] = 2.0 * tr_g - 2.0 * sumsq - 3.0 / dg * pen_d
        if need_grad:
            # s dW0(sF) = 2 s^2 F - 2 s R_F + coef F^{-T}
            if kind == 0:
                coef = pen_d
            else:
                coef = -pen_d / dg
            for i in range(3):
                for j in range(3):
                    grad[k, i, j] = (
                        2.0 * s2 * f[k, i, j]
                        - 2.0 * s * rot[k, i, j]
                        + coef * aux[k, i, j]
                    )
    return w, grad, inner


@njit(cache=True)
def _matmul33_kernel(a, b):  # pragma: no cover - jitted
    n = a.shape[0]
    out = np.empty((n, 3, 3))
    for k in range(n):
        for i in range(3):
            ai0 = a[k, i, 0]; ai1 = a[k, i, 1]; ai2 = a[k, i, 2]
            out[k, i, 0] = ai0 * b[k, 0, 0] + ai1 * b[k, 1, 0] + ai2 * b[k, 2, 0]
            out[k, i, 1] = ai0 * b[k, 0, 1] + ai1 * b[k, 1, 1] + ai2 * b[k, 2, 1]
            out[k, i, 2] = ai0 * b[k, 0, 2] + ai1 * b[k, 1, 2] + ai2 * b[k, 2, 2]
    return out


# ---------------------------------------------------------------------------
# numpy reference path (also the fallback when numba is missing)
# ---------------------------------------------------------------------------

_EYE = np.eye(3)


def _density_numpy(g, q, kind, need_grad):
    c = np.swapaxes(g, -1, -2) @ g
    d = det3(g)
    if kind == CASE_STUDY:
        e = c - _EYE
        w = np.einsum("...ij,...ij->...", e, e)
        grad = 4.0 * (g @ e) if need_grad else np.empty((0, 3, 3))
        return w, grad, d
    bad = d <= 0.0
    dsafe = np.where(bad, 1.0, d)
    lam = np.maximum(sym_eigvals3(c), 0.0)
    sq = np.sqrt(lam)
    arg = np.log(dsafe) if kind == W01 else 1.0 / dsafe - 1.0
    w = np.trace(c, axis1=-2, axis2=-1) - 2.0 * sq.sum(-1) + 3.0
    w = np.where(bad, np.inf, w + np.abs(arg) ** q)
    if not need_grad:
        return w, np.empty((0, 3, 3)), d
    rot = g @ spd_invsqrt3(np.where(bad[..., None, None], _EYE, c), eigvals=None)
    pen_d = q * np.abs(arg) ** (q - 1.0) * np.sign(arg)
    coef = pen_d / dsafe if kind == W01 else pen_d * (-1.0 / dsafe**2)
    coef = np.where(bad, 0.0, coef)
    grad = 2.0 * g - 2.0 * rot + coef[..., None, None] * np.swapaxes(adjugate3(g), -1, -2)
    grad = np.where(bad[..., None, None], 0.0, grad)
    return w, grad, d


def _prepare_numpy(f, kind):
    c = np.swapaxes(f, -1, -2) @ f
    det = det3(f)
    trc = np.trace(c, axis1=-2, axis2=-1)
    lam = np.maximum(sym_eigvals3(c), 0.0)
    sq = np.sqrt(lam)
    if kind == CASE_STUDY:
        aux = f @ c
        rot = np.zeros_like(f)
    else:
        rot = f @ spd_invsqrt3(c, eigvals=lam)
        dsafe = np.where(det > 0.0, det, 1.0)
        aux = np.swapaxes(adjugate3(f), -1, -2) / dsafe[..., None, None]
    return sq, rot, aux, det, trc


def _apply_numpy(f, sq, rot, aux, det, trc, scale, q, kind, need_grad, need_inner):
    s = scale
    s2 = s * s
    tr_g = s2 * trc
    sumsq = s * sq.sum(-1)
    empty_g = np.empty((0, 3, 3))
    empty_i = np.empty(0)
    if kind == CASE_STUDY:
        lam = sq**2
        e = s2[..., None] * lam - 1.0
        w = (e**2).sum(-1)
        inner = 4.0 * s2 * (e * lam).sum(-1) if need_inner else empty_i
        if need_grad:
            grad = (4.0 * s2 * s2)[..., None, None] * aux - (4.0 * s2)[
                ..., None, None
            ] * f
        else:
            grad = empty_g
        return w, grad, inner
    dg = s * s2 * det
    bad = dg <= 0.0
    dgs = np.where(bad, 1.0, dg)
    arg = np.log(dgs) if kind == W01 else 1.0 / dgs - 1.0
    pen_val = np.abs(arg) ** q
    pen_d = q * np.abs(arg) ** (q - 1.0) * np.sign(arg)
    w = np.where(bad, np.inf, tr_g - 2.0 * sumsq + 3.0 + pen_val)
    if need_inner:
        extra = 3.0 * pen_d if kind == W01 else -3.0 / dgs * pen_d
        inner = np.where(bad, np.inf, 2.0 * tr_g - 2.0 * sumsq + extra)
    else:
        inner = empty_i
    if need_grad:
        coef = pen_d if kind == W01 else -pen_d / dgs
        coef = np.where(bad, 0.0, coef)
        grad = (
            (2.0 * s2)[..., None, None] * f
            - (2.0 * s)[..., None, None] * rot
            + coef[..., None, None] * aux
        )
    else:
        grad = empty_g
    return w, grad, inner


def _inner_numpy(g, q, kind):
    c = np.swapaxes(g, -1, -2) @ g
    d = det3(g)
    tr = np.trace(c, axis1=-2, axis2=-1)
    if kind == CASE_STUDY:
        frob2 = np.einsum("...ij,...ij->...", c, c)
        return 4.0 * (frob2 - tr), d
    bad = d <= 0.0
    dsafe = np.where(bad, 1.0, d)
    lam = np.maximum(sym_eigvals3(c), 0.0)
    trsq = np.sqrt(lam).sum(-1)
    if kind == W01:
        arg = np.log(dsafe)
        scale = 3.0
    else:
        arg = 1.0 / dsafe - 1.0
        scale = -3.0 / dsafe
    pen_d = q * np.abs(arg) ** (q - 1.0) * np.sign(arg)
    return np.where(bad, np.inf, 2.0 * tr - 2.0 * trsq + scale * pen_d), d


# ---------------------------------------------------------------------------
# wrappers
# ---------------------------------------------------------------------------


def density_eval(g, q: float, kind: int, need_grad: bool = True):
    """(W0, dW0/dG, det G) over any batch; grad is empty when not requested."""
    g = np.asarray(g, dtype=float)
    batch = g.shape[:-2]
    if HAVE_NUMBA:
        flat = np.ascontiguousarray(g.reshape(-1, 3, 3))
        w, grad, det = _density_kernel(flat, float(q), kind, need_grad)
    else:
        w, grad, det = _density_numpy(g.reshape(-1, 3, 3), float(q), kind, need_grad)
    w = w.reshape(batch)
    det = det.reshape(batch)
    if need_grad:
        return w, grad.reshape(batch + (3, 3)), det
    return w, None, det


def inner_eval(g, q: float, kind: int):
    """(<dW0/dG, G>, det G) over any batch."""
    g = np.asarray(g, dtype=float)
    batch = g.shape[:-2]
    if HAVE_NUMBA:
        flat = np.ascontiguousarray(g.reshape(-1, 3, 3))
        inner, det = _inner_kernel(flat, float(q), kind)
    else:
        inner, det = _inner_numpy(g.reshape(-1, 3, 3), float(q), kind)
    return inner.reshape(batch), det.reshape(batch)


class PreparedInvariants:
    """Scale-invariant factorization of a gradient field (see _prepare_kernel)."""

    __slots__ = ("batch", "f", "sq", "rot", "aux", "det", "trc", "q", "kind")

    def __init__(self, f, q: float, kind: int):
        f = np.asarray(f, dtype=float)
        self.batch = f.shape[:-2]
        self.q = float(q)
        self.kind = kind
        if HAVE_NUMBA:
            self.f = np.ascontiguousarray(f.reshape(-1, 3, 3))
            self.sq, self.rot, self.aux, self.det, self.trc = _prepare_kernel(
                self.f, kind
            )
        else:
            self.f = f.reshape(-1, 3, 3)
            self.sq, self.rot, self.aux, self.det, self.trc = _prepare_numpy(
                self.f, kind
            )

    @property
    def det_f(self) -> np.ndarray:
        return self.det.reshape(self.batch)

    def apply(self, scale, need_grad: bool = True, need_inner: bool = True):
        """(W0(sF), s dW0(sF), <dW0(sF), sF>) for per-node scales s."""
        scale = np.ascontiguousarray(
            np.broadcast_to(np.asarray(scale, dtype=float), self.batch).reshape(-1)
        )
        fn = _apply_kernel if HAVE_NUMBA else _apply_numpy
        w, grad, inner = fn(
            self.f,
            self.sq,
            self.rot,
            self.aux,
            self.det,
            self.trc,
            scale,
            self.q,
            self.kind,
            need_grad,
            need_inner,
        )
        w = w.reshape(self.batch)
        grad = grad.reshape(self.batch + (3, 3)) if need_grad else None
        inner = inner.reshape(self.batch) if need_inner else None
        return w, grad, inner


def matmul33(a, b):
    """Batched 3x3 product, beating numpy's small-matrix dispatch when jitted."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not HAVE_NUMBA:
        return a @ b
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    af = np.ascontiguousarray(np.broadcast_to(a, batch + (3, 3)).reshape(-1, 3, 3))
    bf = np.ascontiguousarray(np.broadcast_to(b, batch + (3, 3)).reshape(-1, 3, 3))
    return _matmul33_kernel(af, bf).reshape(batch + (3, 3))
