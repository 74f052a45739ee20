"""Matrix exponential by scaling and squaring with a diagonal Padé core.

Follows the degree/threshold selection of Higham (2005): the lowest Padé degree
whose backward-error threshold covers the 1-norm is used, otherwise the matrix
is scaled by 2^-s to fit degree 13 and the result squared s times. Works on a
single matrix or on a stack of shape ``(..., n, n)``; each matrix in a stack gets
its own degree and scaling.
"""
import numpy as np

_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def one_norm(a):
    """Induced 1-norm (max column sum), batched over leading axes."""
    return np.abs(a).sum(axis=-2).max(axis=-1)


def _pade_low(a, m):
    b = _PADE[m]
    ident = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    a2 = a @ a
    powers = [ident, a2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * j + 1] * powers[j] for j in range(len(powers)))
    v = sum(b[2 * j] * powers[j] for j in range(len(powers)))
    return a @ u, v


def _pade13(a):
    b = _PADE[13]
    ident = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
    u = u + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident
    u = a @ u
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
    v = v + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    return u, v


def _degree_and_scaling(norms):
    degree = np.full(norms.shape, 13, dtype=int)
    for m in (9, 7, 5, 3):
        degree[norms <= _THETA[m]] = m
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norms, 1e-300) / _THETA[13]))
    s = np.where(degree == 13, np.maximum(s, 0), 0).astype(int)
    return np.stack([degree, s], axis=-1)


def expm(a):
    """Return ``exp(a)`` for a square matrix or a stack of square matrices."""
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential of non-finite input")
    single = a.ndim == 2
    stack = a.reshape((-1,) + a.shape[-2:])
    out = np.empty_like(stack)
    norms = one_norm(stack)
    keys = _degree_and_scaling(norms)
    for m, s in sorted({(int(k[0]), int(k[1])) for k in np.unique(keys, axis=0)}):
        idx = np.flatnonzero((keys[:, 0] == m) & (keys[:, 1] == s))
        block = stack[idx] / (2.0 ** s)
        u, v = _pade13(block) if m == 13 else _pade_low(block, m)
        r = np.linalg.solve(v - u, v + u)
        for _ in range(s):
            r = r @ r
        out[idx] = r
    return out[0] if single else out.reshape(a.shape)
