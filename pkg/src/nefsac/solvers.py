"""Minimal and least-squares solvers for essential and fundamental matrices.

The 7-point and 5-point solvers are vectorized over a leading batch axis so
that pools of tens of thousands of minimal samples can be solved at once;
the per-sample functions are thin wrappers around the batched cores.

The 5-point solver follows Nister's construction: a 4-dimensional null
space ``E = x X + y Y + z Z + W``, ten cubic constraints (determinant and
the trace identity), Gauss-Jordan elimination of the 10x20 coefficient
matrix, and a degree-10 polynomial in ``z`` from a 3x3 polynomial matrix.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DegenerateInput, DegenerateSample, SolverFailure
from .geometry import CameraIntrinsics, canonical_sign, enforce_rank2, project_to_essential

RANK_TOL = 1e-10
DEDUP_TOL = 1e-8
IMAG_TOL = 1e-7
NEAR_REAL_TOL = 1e-3
ESSENTIAL_TOL = 1e-6

MAX_MODELS = {5: 10, 7: 3}


# ---------------------------------------------------------------------------
# univariate polynomials (coefficients highest degree first)


def _horner_with_derivative(c, x):
    p = np.zeros_like(x)
    dp = np.zeros_like(x)
    for k in range(len(c)):
        dp = dp * x + p
        p = p * x + c[k]
    return p, dp


def _cluster_tol(size, center):
    # an m-fold root splits into eigenvalues spread by roughly eps^(1/m)
    return 10.0 * (1e-15) ** (1.0 / size) * (1.0 + abs(center))


def _polish(c, r, mult, steps):
    """Newton on the (mult-1)-th derivative, where an m-fold root is simple."""
    d = np.polyder(c, mult - 1) if mult > 1 else c
    p, dp = _horner_with_derivative(d, np.float64(r))
    for _ in range(steps):
        if dp == 0 or p == 0:
            break
        r_new = r - p / dp
        p_new, dp_new = _horner_with_derivative(d, r_new)
        if abs(p_new) > abs(p):
            break
        r, p, dp = r_new, p_new, dp_new
    return float(r)


def _is_root(c, r):
    p, _ = _horner_with_derivative(c, np.float64(r))
    return abs(p) <= 1e-9 * np.abs(c).max() * max(1.0, abs(r)) ** (len(c) - 1)


def _rings(c, eig):
    """Group eigenvalues into ``(center, multiplicity)``.

    Each seed takes the largest tight ring around it whose polished center
    is a real root of ``c``; anything else stays a single eigenvalue.
    """
    left = list(eig)
    out = []
    while left:
        seed = left.pop(0)
        near = sorted(range(len(left)), key=lambda j: abs(left[j] - seed))
        k = 0
        for size in range(len(near), 0, -1):
            ring = [seed] + [left[j] for j in near[:size]]
            center = np.mean(ring)
            if max(abs(lam - center) for lam in ring) > _cluster_tol(len(ring), center):
                continue
            if abs(center.imag) <= IMAG_TOL * (1.0 + abs(center.real)) and _is_root(
                c, _polish(c, center.real, len(ring), 3)
            ):
                k = size
                break
        ring = [seed] + [left[j] for j in near[:k]]
        for j in sorted(near[:k], reverse=True):
            left.pop(j)
        out.append((np.mean(ring), len(ring)))
    return out


def _real_roots(coeffs, polish_steps=1):
    """Real roots of a real polynomial via companion-matrix eigenvalues.

    An m-fold root shows up as a ring of m eigenvalues spread by about
    eps^(1/m); the ring is merged and its center polished on the (m-1)-th
    derivative.
    """
    c = np.asarray(coeffs, dtype=float)
    scale = np.abs(c).max()
    if scale == 0:
        raise DegenerateInput("zero polynomial")
    c = c / scale
    lead = np.flatnonzero(np.abs(c) > 1e-13)
    c = c[lead[0]:]
    roots = []
    # exact zero roots from trailing zeros
    n_zero = len(c) - 1 - np.flatnonzero(c)[-1]
    if n_zero:
        roots.append(0.0)
        c = c[: len(c) - n_zero]
    deg = len(c) - 1
    if deg == 0:
        return sorted(roots)
    comp = np.zeros((deg, deg))
    comp[0, :] = -c[1:] / c[0]
    comp[np.arange(1, deg), np.arange(deg - 1)] = 1.0
    eig = np.sort_complex(np.linalg.eigvals(comp))

    found = [(mu.real, m) for mu, m in _rings(c, eig) if abs(mu.imag) <= IMAG_TOL * (1.0 + abs(mu.real))]
    if not found and deg % 2 == 1:
        lam = eig[np.argmin(np.abs(eig.imag))]
        found.append((lam.real, 1))
    for r, mult in found:
        roots.append(_polish(c, r, mult, polish_steps + (mult > 1)))
    roots.sort()
    out = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-10 * max(1.0, abs(r)):
            out.append(r)
    return out


def solve_cubic(a3, a2, a1, a0):
    """Real roots of ``a3 x^3 + a2 x^2 + a1 x + a0``, deduplicated, ascending."""
    c = np.array([a3, a2, a1, a0], dtype=float)
    if not np.any(c[:3]):
        raise DegenerateInput("polynomial has no roots" if c[3] else "zero polynomial")
    return _real_roots(c, polish_steps=3)


def solve_poly_degree10(coeffs):
    """Real roots of a degree-10 polynomial (highest degree first).

    A vanishing leading coefficient reduces the degree.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (11,):
        raise ValueError("expected 11 coefficients")
    return _real_roots(c, polish_steps=1)


def _batch_real_roots(c, polish_steps=2, imag_tol=IMAG_TOL, lead_tol=1e-10):
    """Roots of many same-degree polynomials ``c (B, d+1)``.

    Returns ``roots (B, d)`` and a validity mask. Rows whose leading
    coefficient is below ``lead_tol`` (after scaling) are routed through
    the scalar path. A loose ``imag_tol`` also reports the real part of
    nearly real pairs, for callers that verify candidates afterwards.
    """
    B, d1 = c.shape
    d = d1 - 1
    scale = np.abs(c).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    c = c / scale
    roots = np.zeros((B, d))
    valid = np.zeros((B, d), dtype=bool)
    regular = np.abs(c[:, 0]) > lead_tol
    idx = np.flatnonzero(regular)
    if idx.size:
        cr = c[idx]
        comp = np.zeros((idx.size, d, d))
        comp[:, 0, :] = -cr[:, 1:] / cr[:, :1]
        comp[:, np.arange(1, d), np.arange(d - 1)] = 1.0
        eig = np.linalg.eigvals(comp)
        re = eig.real
        ok = np.abs(eig.imag) <= imag_tol * (1.0 + np.abs(re))
        if d % 2 == 1:
            # odd degree: at least one real root
            best = np.argmin(np.abs(eig.imag), axis=1)
            ok[np.arange(idx.size), best] = True
        r = re.copy()
        for _ in range(polish_steps):
            p = np.zeros_like(r)
            dp = np.zeros_like(r)
            for k in range(d + 1):
                dp = dp * r + p
                p = p * r + cr[:, k : k + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(dp != 0, p / dp, 0.0)
            r_new = r - step
            p_new = np.zeros_like(r)
            for k in range(d + 1):
                p_new = p_new * r_new + cr[:, k : k + 1]
            better = np.abs(p_new) < np.abs(p)
            r = np.where(better, r_new, r)
        roots[idx] = r
        valid[idx] = ok & np.isfinite(r)
    for b in np.flatnonzero(~regular):
        if not np.any(c[b, :-1]):
            continue
        rr = _real_roots(c[b], polish_steps=polish_steps)[:d]
        roots[b, : len(rr)] = rr
        valid[b, : len(rr)] = True
    return roots, valid


# ---------------------------------------------------------------------------
# normalization helpers


def hartley_transforms(pts):
    """Similarity transforms ``(..., 3, 3)`` giving zero centroid and RMS distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    centroid = pts.mean(axis=-2)
    d2 = np.sum((pts - centroid[..., None, :]) ** 2, axis=-1).mean(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.sqrt(2.0) / np.sqrt(d2)
    s = np.where(np.isfinite(s), s, 1.0)
    T = np.zeros(pts.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 0, 2] = -s * centroid[..., 0]
    T[..., 1, 2] = -s * centroid[..., 1]
    T[..., 2, 2] = 1.0
    return T


def _apply(T, pts):
    return pts * T[..., None, [0], [0]] + T[..., None, [0, 1], [2]]


def _design(x1h, x2h):
    """Rows of ``kron(x2, x1)`` so that ``row . vec(F) = x2^T F x1``."""
    return (x2h[..., :, :, None] * x1h[..., :, None, :]).reshape(x1h.shape[:-1] + (9,))


def _homog(p):
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


def _dedup(models, valid):
    """Drop candidates within DEDUP_TOL (Frobenius, canonical sign) of an earlier one."""
    M = canonical_sign(models)
    B, S = valid.shape
    for i in range(1, S):
        for j in range(i):
            same = np.linalg.norm((M[:, i] - M[:, j]).reshape(B, 9), axis=1) < DEDUP_TOL
            valid[:, i] &= ~(same & valid[:, j])
    return M, valid


# ---------------------------------------------------------------------------
# 7-point fundamental matrix


def _adjugate(M):
    C = np.empty_like(M)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            minor = M[..., r[0], c[0]] * M[..., r[1], c[1]] - M[..., r[0], c[1]] * M[..., r[1], c[0]]
            C[..., j, i] = (-1) ** (i + j) * minor
    return C


def seven_point_batch(samples):
    """Batched 7-point solver.

    ``samples (B, 7, 4)`` in pixels. Returns ``F (B, 3, 3, 3)`` candidates in
    pixel units and ``valid (B, 3)``; degenerate samples have no valid slot.
    """
    samples = np.asarray(samples, dtype=float)
    B = samples.shape[0]
    T1 = hartley_transforms(samples[..., 0:2])
    T2 = hartley_transforms(samples[..., 2:4])
    x1 = _homog(_apply(T1, samples[..., 0:2]))
    x2 = _homog(_apply(T2, samples[..., 2:4]))
    A = _design(x1, x2)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    nondegenerate = s[:, 6] > RANK_TOL * s[:, 0]
    F1 = Vt[:, 7].reshape(B, 3, 3)
    F2 = Vt[:, 8].reshape(B, 3, 3)
    D = F1 - F2
    # det(F2 + a D) = det F2 + a tr(adj(F2) D) + a^2 tr(F2 adj(D)) + a^3 det D
    c3 = np.linalg.det(D)
    c2 = np.einsum("bij,bji->b", F2, _adjugate(D))
    c1 = np.einsum("bij,bji->b", _adjugate(F2), D)
    c0 = np.linalg.det(F2)
    roots, ok = _batch_real_roots(np.stack([c3, c2, c1, c0], axis=1), polish_steps=3)
    F = F2[:, None] + roots[:, :, None, None] * D[:, None]
    F = enforce_rank2(F)
    F = np.swapaxes(T2, -1, -2)[:, None] @ F @ T1[:, None]
    valid = ok & nondegenerate[:, None] & np.all(np.isfinite(F), axis=(2, 3))
    F = np.where(valid[..., None, None], F, np.eye(3))
    return _dedup(F, valid)


def seven_point_fundamental(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.shape != (7, 4):
        raise ValueError("7-point solver needs a (7, 4) sample")
    F, valid = seven_point_batch(sample[None])
    if not valid.any():
        raise DegenerateSample("7x9 design matrix has rank < 7")
    return [F[0, i] for i in range(3) if valid[0, i]]


# ---------------------------------------------------------------------------
# 5-point essential matrix: polynomial bookkeeping

# monomials of degree <= 3 in (x, y, z), Nister's column order
_MONO3 = [
    (3, 0, 0), (0, 3, 0), (2, 1, 0), (1, 2, 0), (2, 0, 1), (2, 0, 0), (0, 2, 1), (0, 2, 0),
    (1, 1, 1), (1, 1, 0), (1, 0, 2), (1, 0, 1), (1, 0, 0), (0, 1, 2), (0, 1, 1), (0, 1, 0),
    (0, 0, 3), (0, 0, 2), (0, 0, 1), (0, 0, 0),
]
_MONO1 = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_MONO2 = sorted({tuple(a + b for a, b in zip(p, q)) for p in _MONO1 for q in _MONO1}, reverse=True)


def _product_map(left, right, out):
    index = {m: i for i, m in enumerate(out)}
    S = np.zeros((len(left) * len(right), len(out)))
    for (i, p), (j, q) in itertools.product(enumerate(left), enumerate(right)):
        S[i * len(right) + j, index[tuple(a + b for a, b in zip(p, q))]] = 1.0
    return S


_S11 = _product_map(_MONO1, _MONO1, _MONO2)
_S21 = _product_map(_MONO2, _MONO1, _MONO3)


def _mul(a, b, S):
    prod = a[..., :, None] * b[..., None, :]
    return prod.reshape(prod.shape[:-2] + (-1,)) @ S


def _mul11(a, b):
    return _mul(a, b, _S11)


def _mul21(a, b):
    return _mul(a, b, _S21)


def _pmul(a, b):
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + b.shape[-1] - 1,))
    for i in range(a.shape[-1]):
        out[..., i : i + b.shape[-1]] += a[..., i : i + 1] * b
    return out


def _psub(a, b):
    n = max(a.shape[-1], b.shape[-1])
    pa = np.zeros(a.shape[:-1] + (n,))
    pb = np.zeros(b.shape[:-1] + (n,))
    pa[..., n - a.shape[-1] :] = a
    pb[..., n - b.shape[-1] :] = b
    return pa - pb


def _constraint_matrix(null):
    """10x20 cubic constraint coefficients for ``E = xX + yY + zZ + W``."""
    B = null.shape[0]
    Ep = np.moveaxis(null.reshape(B, 4, 3, 3), 1, -1)  # (B, 3, 3, 4)
    EEt = _mul11(Ep[:, :, None, :, :], Ep[:, None, :, :, :]).sum(axis=3)  # (B, 3, 3, 10)
    trace = EEt[:, 0, 0] + EEt[:, 1, 1] + EEt[:, 2, 2]
    A = EEt - 0.5 * trace[:, None, None, :] * np.eye(3)[None, :, :, None]
    AE = _mul21(A[:, :, :, None, :], Ep[:, None, :, :, :]).sum(axis=2)  # (B, 3, 3, 20)
    cof = np.stack(
        [
            _mul11(Ep[:, 0, 1], Ep[:, 1, 2]) - _mul11(Ep[:, 0, 2], Ep[:, 1, 1]),
            _mul11(Ep[:, 0, 2], Ep[:, 1, 0]) - _mul11(Ep[:, 0, 0], Ep[:, 1, 2]),
            _mul11(Ep[:, 0, 0], Ep[:, 1, 1]) - _mul11(Ep[:, 0, 1], Ep[:, 1, 0]),
        ],
        axis=1,
    )
    det = _mul21(cof, Ep[:, 2]).sum(axis=1)
    return np.concatenate([det[:, None], AE.reshape(B, 9, 20)], axis=1)


def _hidden_z_matrix(C):
    """3x3 matrix of polynomials in z from the eliminated rows e..j.

    Entries are returned as (x-coefficient deg 3, y-coefficient deg 3,
    constant deg 4), highest degree first.
    """
    rows = []
    for p, q in ((4, 5), (6, 7), (8, 9)):
        ce, cf = C[:, p], C[:, q]
        bx = np.stack([-cf[:, 0], ce[:, 0] - cf[:, 1], ce[:, 1] - cf[:, 2], ce[:, 2]], axis=1)
        by = np.stack([-cf[:, 3], ce[:, 3] - cf[:, 4], ce[:, 4] - cf[:, 5], ce[:, 5]], axis=1)
        b1 = np.stack(
            [-cf[:, 6], ce[:, 6] - cf[:, 7], ce[:, 7] - cf[:, 8], ce[:, 8] - cf[:, 9], ce[:, 9]], axis=1
        )
        rows.append((bx, by, b1))
    return rows


def _orthonormalize_rows(rows):
    """Replace the three polynomial rows by an orthonormal basis of their span.

    The rows are often nearly parallel, and expanding the determinant of
    such a matrix cancels away most of its significant digits. A constant
    invertible row transform only rescales the determinant and keeps every
    null vector, so the roots and the recovered ``(x, y)`` are unchanged.
    """
    widths = [c.shape[-1] for c in rows[0]]
    coeffs = np.stack([np.concatenate(r, axis=-1) for r in rows], axis=1)  # (B, 3, 13)
    Q, Rr = np.linalg.qr(np.swapaxes(coeffs, 1, 2))
    d = np.abs(np.diagonal(Rr, axis1=1, axis2=2))
    full = d.min(axis=1) > 1e-12 * np.maximum(d.max(axis=1), 1e-300)
    coeffs = np.where(full[:, None, None], np.swapaxes(Q, 1, 2), coeffs)
    cuts = np.cumsum(widths)[:-1]
    return [tuple(np.split(coeffs[:, i], cuts, axis=-1)) for i in range(3)]


def _det_polynomial(rows):
    (ax, ay, a1), (bx, by, b1), (cx, cy, c1) = rows
    t1 = _pmul(ax, _psub(_pmul(by, c1), _pmul(b1, cy)))
    t2 = _pmul(ay, _psub(_pmul(bx, c1), _pmul(b1, cx)))
    t3 = _pmul(a1, _psub(_pmul(bx, cy), _pmul(by, cx)))
    return t1 - t2 + t3


def _eval_rows(rows, z):
    """Evaluate the 3x3 polynomial matrix at ``z (B, R)`` -> ``(B, R, 3, 3)``."""

    def ev(c):
        out = np.zeros_like(z)
        for k in range(c.shape[-1]):
            out = out * z + c[:, k : k + 1]
        return out

    return np.stack([np.stack([ev(bx), ev(by), ev(b1)], axis=-1) for bx, by, b1 in rows], axis=-2)


_EXP3 = np.array(_MONO3)


def _monomials(x, y, z, with_grad=False):
    one, zero = np.ones_like(x), np.zeros_like(x)
    px = np.stack([one, x, x * x, x * x * x], axis=-1)
    py = np.stack([one, y, y * y, y * y * y], axis=-1)
    pz = np.stack([one, z, z * z, z * z * z], axis=-1)
    a, b, c = _EXP3[:, 0], _EXP3[:, 1], _EXP3[:, 2]
    xa, yb, zc = px[..., a], py[..., b], pz[..., c]
    mono = xa * yb * zc
    if not with_grad:
        return mono
    dpx = np.stack([zero, one, 2 * x, 3 * x * x], axis=-1)
    dpy = np.stack([zero, one, 2 * y, 3 * y * y], axis=-1)
    dpz = np.stack([zero, one, 2 * z, 3 * z * z], axis=-1)
    return mono, (dpx[..., a] * yb * zc, xa * dpy[..., b] * zc, xa * yb * dpz[..., c])


def _refine_xyz(M, x, y, z, steps=2):
    """Gauss-Newton on the ten cubic constraints ``M @ mono(x, y, z) = 0``."""
    Mt = np.swapaxes(M, -1, -2)
    for _ in range(steps):
        mono, grads = _monomials(x, y, z, with_grad=True)
        r = mono @ Mt
        J = np.stack([g @ Mt for g in grads], axis=-1)  # (B, K, 10, 3)
        JtJ = np.swapaxes(J, -1, -2) @ J
        Jtr = (np.swapaxes(J, -1, -2) @ r[..., None])[..., 0]
        det = np.linalg.det(JtJ)
        good = np.isfinite(det) & (np.abs(det) > 1e-300)
        JtJ = np.where(good[..., None, None], JtJ, np.eye(3))
        delta = np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        delta = np.where(good[..., None], delta, 0.0)
        nx, ny, nz = x - delta[..., 0], y - delta[..., 1], z - delta[..., 2]
        r_new = _monomials(nx, ny, nz) @ Mt
        better = np.linalg.norm(r_new, axis=-1) < np.linalg.norm(r, axis=-1)
        x, y, z = np.where(better, nx, x), np.where(better, ny, y), np.where(better, nz, z)
    return x, y, z


def five_point_batch(samples, K1: CameraIntrinsics, K2: CameraIntrinsics):
    """Batched 5-point solver.

    ``samples (B, 5, 4)`` in pixels. Returns essential matrices
    ``(B, 10, 3, 3)`` (calibrated coordinates, unit norm) and ``valid (B, 10)``.
    """
    samples = np.asarray(samples, dtype=float)
    B = samples.shape[0]
    q1 = K1.normalize(samples[..., 0:2])
    q2 = K2.normalize(samples[..., 2:4])
    A = _design(q1, q2)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    ok_rank = s[:, 4] > RANK_TOL * s[:, 0]
    null = Vt[:, 5:9]  # X, Y, Z, W as rows
    M = _constraint_matrix(null)
    L, Rm = M[:, :, :10], M[:, :, 10:]
    C = np.zeros((B, 10, 10))
    solvable = ok_rank.copy()
    try:
        C = np.linalg.solve(L, Rm)
    except np.linalg.LinAlgError:
        for b in range(B):
            try:
                C[b] = np.linalg.solve(L[b], Rm[b])
            except np.linalg.LinAlgError:
                solvable[b] = False
    solvable &= np.all(np.isfinite(C), axis=(1, 2))
    C = np.where(solvable[:, None, None], C, 0.0)
    rows = _orthonormalize_rows(_hidden_z_matrix(C))
    poly = _det_polynomial(rows)
    poly[~solvable] = 0.0
    poly[~solvable, -2] = 1.0  # dummy polynomial z = 0, masked out below
    # Large roots (a tiny W component) and near-double roots (a pair split
    # off the real axis by rounding) are both genuine; every candidate is
    # refined and checked against the essential manifold below.
    z, ok = _batch_real_roots(poly, polish_steps=1, imag_tol=NEAR_REAL_TOL, lead_tol=0.0)
    Bz = _eval_rows(rows, z)
    _, _, V = np.linalg.svd(Bz)
    v = V[..., 2, :]
    # both halves of a nearly real pair land on the same z; when two
    # solutions share that z the null space is two-dimensional, so the
    # second copy starts from the other singular vector
    zf = np.where(ok, z, np.nan)
    close = np.abs(zf[:, :, None] - zf[:, None, :]) <= 1e-12 * (1.0 + np.abs(zf[:, :, None]))
    repeat = np.any(np.tril(close, -1), axis=2)
    v = np.where(repeat[..., None], V[..., 1, :], v)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = v[..., 0] / v[..., 2]
        y = v[..., 1] / v[..., 2]
    finite = np.isfinite(x) & np.isfinite(y) & ok
    x, y, zz = _refine_xyz(M, np.where(finite, x, 0.0), np.where(finite, y, 0.0), np.where(finite, z, 0.0), steps=4)
    x, y, z = np.where(finite, x, np.nan), np.where(finite, y, np.nan), np.where(finite, zz, np.nan)
    X, Y, Z, W = (null[:, k].reshape(B, 1, 3, 3) for k in range(4))
    E = x[..., None, None] * X + y[..., None, None] * Y + z[..., None, None] * Z + W
    valid = ok & solvable[:, None] & np.all(np.isfinite(E), axis=(2, 3))
    E = np.where(valid[..., None, None], E, np.eye(3))
    sv = np.linalg.svd(E, compute_uv=False)
    # unconverged roots leave E off the essential manifold; drop them
    valid &= (sv[..., 0] - sv[..., 1] <= ESSENTIAL_TOL * sv[..., 0]) & (sv[..., 2] <= 1e-7 * sv[..., 0])
    E = np.where(valid[..., None, None], E, np.eye(3))
    return _dedup(E, valid)


def five_point_essential(sample, K1: CameraIntrinsics, K2: CameraIntrinsics):
    sample = np.asarray(sample, dtype=float)
    if sample.shape != (5, 4):
        raise ValueError("5-point solver needs a (5, 4) sample")
    q1 = K1.normalize(sample[:, 0:2])
    q2 = K2.normalize(sample[:, 2:4])
    s = np.linalg.svd(_design(q1, q2), compute_uv=False)
    if not s[4] > RANK_TOL * s[0]:
        raise DegenerateSample("5x9 design matrix has rank < 5")
    E, valid = five_point_batch(sample[None], K1, K2)
    if not valid.any():
        raise SolverFailure("no real root produced a valid essential matrix")
    return [E[0, i] for i in range(10) if valid[0, i]]


def solve_minimal_batch(samples, problem, K1=None, K2=None):
    """Dispatch to the batched minimal solver for ``problem``."""
    if problem == "essential":
        return five_point_batch(samples, K1, K2)
    if problem == "fundamental":
        return seven_point_batch(samples)
    raise ValueError(f"unknown problem {problem!r}")


# ---------------------------------------------------------------------------
# non-minimal least squares


def eight_point_least_squares(inliers, problem, K1=None, K2=None, weights=None):
    """Normalized linear least-squares model from >= 8 correspondences.

    Returns a unit-norm F (fundamental) or E in calibrated coordinates
    (essential, projected onto the essential manifold).
    """
    pts = np.asarray(inliers, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 4 or len(pts) < 8:
        raise DegenerateSample("need at least 8 correspondences")
    if problem == "essential":
        x1 = K1.normalize(pts[:, 0:2])
        x2 = K2.normalize(pts[:, 2:4])
        T1 = T2 = np.eye(3)
    else:
        T1 = hartley_transforms(pts[:, 0:2])
        T2 = hartley_transforms(pts[:, 2:4])
        x1 = _homog(_apply(T1, pts[:, 0:2]))
        x2 = _homog(_apply(T2, pts[:, 2:4]))
    A = _design(x1, x2)
    if weights is not None:
        A = A * np.asarray(weights, dtype=float)[:, None]
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if len(s) < 9 or not s[7] > RANK_TOL * s[0]:
        raise DegenerateSample("design matrix has rank < 8")
    M = Vt[-1].reshape(3, 3)
    if problem == "essential":
        M = project_to_essential(M)
    else:
        M = T2.T @ enforce_rank2(M) @ T1
    return canonical_sign(M)
